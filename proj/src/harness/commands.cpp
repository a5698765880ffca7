#include "harness/commands.hpp"

#include "core/error.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

namespace sgti {

namespace fs = std::filesystem;

std::string imt_checkpoint(const RunConfig &cfg) {
  return (fs::path(cfg.out) / "imt.ckpt").string();
}

Pipeline load_pipeline(const RunConfig &cfg_in, bool need_sgt) {
  auto cfg = cfg_in;
  cfg.finalize();
  Pipeline p;
  p.imt = load_imt(imt_checkpoint(cfg),
                   "image transformer checkpoint (run train-imt first)");
  p.vq = load_vq(cfg.vq_checkpoint(), "VQ checkpoint (run train-vqvae first)");
  const auto &ic = p.imt->config;
  if (ic.vocab.codes != p.vq->config.codebook_size ||
      ic.grid_h != p.vq->config.grid() || ic.grid_w != p.vq->config.grid())
    throw ValidationError("image transformer checkpoint does not match the VQ "
                          "checkpoint " + cfg.vq_checkpoint());
  if (need_sgt || ic.cross_attention) {
    p.sgt = load_sgt(cfg.sgt_checkpoint(), "SGT checkpoint (run train-sgt first)");
    if (ic.cross_attention && ic.memory_dim != p.sgt->config.embed_dim)
      throw ValidationError("image transformer checkpoint does not match the "
                            "SGT checkpoint " + cfg.sgt_checkpoint());
  }
  return p;
}

SampleReport sample_document(const Pipeline &p, const GraphDocument &doc,
                             const SampleRequest &request, std::uint64_t seed,
                             const std::string &out_dir) {
  if (request.n < 1)
    throw ValidationError("sample: n must be >= 1");
  const auto &ic = p.imt->config;
  SampleReport r;
  if (request.use_gt_layout) {
    if (!doc.layout)
      throw ValidationError("--use-gt-layout needs 'boxes' in the graph file");
    r.layout = *doc.layout;
    for (auto &b : r.layout.boxes)
      b = canonical_box(b);
  } else {
    if (!p.sgt)
      throw ValidationError("sample: no layout transformer loaded");
    const auto pe = lap_pe(doc.graph, p.sgt->config.lap_pe_width);
    r.layout = predict_layout(*p.sgt, doc.graph,
                              p.sgt->config.use_pe ? &pe : nullptr);
  }
  std::vector<std::int64_t> prefix;
  Tensor memory;
  if (ic.cross_attention)
    memory = graph_memory(*p.sgt, doc.graph);
  else
    prefix = encode_layout(r.layout, ic.vocab, ic.capacity);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    r.files.push_back((fs::path(out_dir) / "layout.txt").string());
    write_file(r.files.back(), layout_text(r.layout));
  }
  for (int i = 0; i < request.n; ++i) {
    SampleOptions so;
    so.temperature = request.temperature;
    so.top_k = request.top_k;
    so.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    auto codes = sample(*p.imt, prefix, so, memory);
    Image img;
    {
      NoGradGuard no_grad;
      img = tensor_to_image(
          decode_indices(*p.vq, codes, 1, ic.grid_h, ic.grid_w), 0);
    }
    if (!out_dir.empty()) {
      const auto stem = (fs::path(out_dir) / ("sample_" + std::to_string(i))).string();
      write_ppm(stem + ".ppm", img);
      write_token_cache(stem + ".tokens",
                        std::vector<std::uint32_t>(codes.begin(), codes.end()));
      r.files.push_back(stem + ".ppm");
      r.files.push_back(stem + ".tokens");
    }
    r.codes.push_back(std::move(codes));
    r.images.push_back(std::move(img));
  }
  return r;
}

SampleReport sample_cmd(const RunConfig &cfg_in, const SampleRequest &request) {
  auto cfg = cfg_in;
  cfg.finalize();
  if (request.graph_path.empty())
    throw ValidationError("sample: --graph is required");
  const auto doc = read_graph_document(request.graph_path);
  const auto p = load_pipeline(cfg, !request.use_gt_layout);
  return sample_document(p, doc, request, cfg.seed,
                         (fs::path(cfg.out) / "samples").string());
}

EvalReport eval_cmd(const RunConfig &cfg_in) {
  auto cfg = cfg_in;
  cfg.finalize();
  const auto p = load_pipeline(cfg, true);
  const auto scenes = load_scenes(cfg);
  EvalReport r;
  r.scenes = static_cast<int>(scenes.size());

  std::vector<Layout> pred, gt;
  for (const auto &s : scenes) {
    const auto pe = lap_pe(s.graph, p.sgt->config.lap_pe_width);
    pred.push_back(predict_layout(*p.sgt, s.graph,
                                  p.sgt->config.use_pe ? &pe : nullptr));
    gt.push_back(s.layout);
  }
  r.miou = layout_miou(pred, gt);

  const auto data =
      prepare_imt_data(p.imt->config, *p.vq, p.sgt.get(), scenes, cfg.batch);
  const auto tf = teacher_forced(*p.imt, data, cfg.batch);
  r.accuracy = tf.accuracy;
  r.nll = tf.nll;
  r.mse = reconstruction_mse(*p.vq, scenes, cfg.batch);
  r.psnr = 10.0 * std::log10(4.0 / r.mse);

  char buf[256];
  std::snprintf(buf, sizeof buf,
                "scenes %d\nmiou %.6f\naccuracy %.6f\nnll %.6f\nmse %.6f\n"
                "psnr %.3f\n",
                r.scenes, r.miou, r.accuracy, r.nll, r.mse, r.psnr);
  r.text = buf;
  fs::create_directories(cfg.out);
  write_file((fs::path(cfg.out) / "eval.txt").string(), r.text);
  return r;
}

AblationReport ablate_cmd(const RunConfig &cfg_in) {
  auto cfg = cfg_in;
  cfg.finalize();
  const auto root = fs::path(cfg.out) / "ablate";
  AblationReport r;

  struct SgtVariant {
    const char *name;
    bool edges, pe;
  };
  const SgtVariant sgt_variants[] = {
      {"sgt-base", false, false}, {"sgt+E", true, false}, {"sgt+E+LapPE", true, true}};
  RunConfig full_sgt;
  for (const auto &v : sgt_variants) {
    auto c = cfg;
    c.out = (root / v.name).string();
    c.sgt.use_edges = v.edges;
    c.sgt.use_pe = v.pe;
    const auto t = train_sgt(c);
    r.rows.push_back({v.name, "miou", t.metric});
    full_sgt = c;
  }

  const std::pair<const char *, bool> imt_variants[] = {{"imt-selfatt", false},
                                                        {"imt-crossatt", true}};
  for (const auto &[name, cross] : imt_variants) {
    auto c = cfg;
    c.out = (root / name).string();
    c.sgt = full_sgt.sgt;
    c.imt.cross_attention = cross;
    c.imt_vq_checkpoint = cfg.vq_checkpoint();
    c.imt_sgt_checkpoint = full_sgt.sgt_checkpoint();
    const auto t = train_imt(c);
    r.rows.push_back({name, "nll", t.nll});
  }

  std::ostringstream table;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-14s %-6s %s\n", "variant", "metric", "value");
  table << buf;
  for (const auto &row : r.rows) {
    std::snprintf(buf, sizeof buf, "%-14s %-6s %.6f\n", row.variant.c_str(),
                  row.metric.c_str(), row.value);
    table << buf;
  }
  const double base = r.rows[0].value, edges = r.rows[1].value,
               pe = r.rows[2].value;
  std::snprintf(buf, sizeof buf, "# base <= +E (0.02 slack): %s\n",
                base <= edges + 0.02 ? "yes" : "no");
  table << buf;
  std::snprintf(buf, sizeof buf, "# +E <= +LapPE: %s\n", edges <= pe ? "yes" : "no");
  table << buf;
  r.table = table.str();
  write_file((fs::path(cfg.out) / "ablate.txt").string(), r.table);
  return r;
}

} // namespace sgti
