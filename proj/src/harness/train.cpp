#include "harness/train.hpp"

#include "core/error.hpp"
#include "harness/io.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

namespace sgti {

namespace fs = std::filesystem;

std::vector<SceneSample> load_scenes(const RunConfig &cfg) {
  std::vector<SceneSample> scenes;
  if (cfg.data_manifest.empty())
    scenes = gen_dataset(cfg.data, cfg.data_count, cfg.data_seed);
  else
    scenes = read_dataset(cfg.data_manifest);
  if (scenes.empty())
    throw ValidationError("dataset is empty");
  for (const auto &s : scenes) {
    if (s.image.height != cfg.data.image_size ||
        s.image.width != cfg.data.image_size)
      throw ValidationError("dataset image is " + std::to_string(s.image.width) +
                            "x" + std::to_string(s.image.height) +
                            ", config expects " +
                            std::to_string(cfg.data.image_size));
  }
  return scenes;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + index + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<int> draw_batch(std::mt19937_64 &rng, int count, int batch) {
  std::vector<int> all(count);
  for (int i = 0; i < count; ++i)
    all[i] = i;
  if (batch >= count)
    return all;
  for (int i = 0; i < batch; ++i) {
    const auto j = i + static_cast<int>(rng() % static_cast<std::uint64_t>(count - i));
    std::swap(all[i], all[j]);
  }
  all.resize(batch);
  return all;
}

RunConfig checkpoint_config(const Checkpoint &ckpt) {
  auto cfg = parse_config(ckpt.config, "checkpoint config");
  cfg.finalize();
  return cfg;
}

namespace {

Checkpoint open_prerequisite(const std::string &path, const std::string &what) {
  if (!fs::exists(path)) {
    // "VQ checkpoint (run train-vqvae first)" -> name, path, then the hint
    const auto paren = what.find(" (");
    throw ValidationError("missing " + what.substr(0, paren) + " " + path +
                          (paren == std::string::npos ? "" : what.substr(paren)));
  }
  return load_checkpoint(path);
}

} // namespace

std::unique_ptr<VqModel> load_vq(const std::string &path,
                                 const std::string &what) {
  const auto ck = open_prerequisite(path, what);
  auto model = std::make_unique<VqModel>(checkpoint_config(ck).vq, 0);
  get_params(ck, model->params);
  return model;
}

std::unique_ptr<SgtModel> load_sgt(const std::string &path,
                                   const std::string &what) {
  const auto ck = open_prerequisite(path, what);
  auto model = std::make_unique<SgtModel>(checkpoint_config(ck).sgt, 0);
  get_params(ck, model->params);
  return model;
}

std::unique_ptr<ImtModel> load_imt(const std::string &path,
                                   const std::string &what) {
  const auto ck = open_prerequisite(path, what);
  auto model = std::make_unique<ImtModel>(checkpoint_config(ck).imt, 0);
  get_params(ck, model->params);
  return model;
}

std::vector<std::vector<std::int64_t>>
tokenize_images(const VqModel &vq, const std::vector<SceneSample> &scenes,
                int chunk) {
  NoGradGuard no_grad;
  const auto cells = static_cast<std::size_t>(vq.config.grid()) * vq.config.grid();
  std::vector<std::vector<std::int64_t>> out;
  for (std::size_t at = 0; at < scenes.size(); at += chunk) {
    std::vector<Image> imgs;
    for (std::size_t i = at; i < std::min(scenes.size(), at + chunk); ++i)
      imgs.push_back(scenes[i].image);
    const auto z = ops::nchw_to_rows(encode(vq, images_to_tensor(imgs)));
    const auto q = quantize(z, vq.codebook);
    for (std::size_t i = 0; i < imgs.size(); ++i)
      out.emplace_back(q.indices.begin() + i * cells,
                       q.indices.begin() + (i + 1) * cells);
  }
  return out;
}

Tensor graph_memory(const SgtModel &sgt, const SceneGraph &g) {
  NoGradGuard no_grad;
  const auto pe = lap_pe(g, sgt.config.lap_pe_width);
  return sgt_forward(sgt, g, sgt.config.use_pe ? &pe : nullptr).nodes.detach();
}

double reconstruction_mse(const VqModel &vq,
                          const std::vector<SceneSample> &scenes, int chunk) {
  NoGradGuard no_grad;
  double sum = 0;
  std::int64_t n = 0;
  for (std::size_t at = 0; at < scenes.size(); at += chunk) {
    std::vector<Image> imgs;
    for (std::size_t i = at; i < std::min(scenes.size(), at + chunk); ++i)
      imgs.push_back(scenes[i].image);
    const auto x = images_to_tensor(imgs);
    const auto z = encode(vq, x);
    const auto q = quantize(ops::nchw_to_rows(z), vq.codebook);
    const auto recon =
        decode(vq, ops::rows_to_nchw(q.zq, z.dim(0), z.dim(2), z.dim(3)));
    const auto a = x.data(), b = recon.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a[i]) - b[i];
      sum += d * d;
    }
    n += x.numel();
  }
  return sum / static_cast<double>(n);
}

ImtData prepare_imt_data(const ImtConfig &config, const VqModel &vq,
                         const SgtModel *sgt,
                         const std::vector<SceneSample> &scenes, int chunk) {
  if (config.vocab.codes != vq.config.codebook_size ||
      config.grid_h != vq.config.grid() || config.grid_w != vq.config.grid())
    throw ValidationError("image transformer vocabulary or grid does not match "
                          "the VQ model");
  if (config.cross_attention && !sgt)
    throw ValidationError("cross attention needs a layout transformer");
  ImtData d;
  d.codes = tokenize_images(vq, scenes, chunk);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::vector<std::int64_t> prefix;
    if (config.cross_attention) {
      d.memory.push_back(graph_memory(*sgt, scenes[i].graph));
      if (d.memory.back().dim(1) != config.memory_dim)
        throw ValidationError("graph memory width does not match the image "
                              "transformer");
    } else {
      prefix = encode_layout(scenes[i].layout, config.vocab, config.capacity);
    }
    d.sequences.push_back(build_sequence(config, prefix, d.codes[i]));
  }
  return d;
}

namespace {

struct Batch {
  std::vector<std::int64_t> tokens;
  Tensor memory;
  std::vector<std::int64_t> offsets;
};

Batch gather(const ImtData &d, const std::vector<int> &idx) {
  Batch b;
  b.offsets.push_back(0);
  std::vector<Tensor> mem;
  for (int i : idx) {
    b.tokens.insert(b.tokens.end(), d.sequences[i].begin(),
                    d.sequences[i].end());
    if (!d.memory.empty()) {
      mem.push_back(d.memory[i]);
      b.offsets.push_back(b.offsets.back() + d.memory[i].dim(0));
    }
  }
  if (!mem.empty())
    b.memory = ops::concat_rows(mem);
  else
    b.offsets.clear();
  return b;
}

} // namespace

TeacherForced teacher_forced(const ImtModel &model, const ImtData &data,
                             int chunk) {
  NoGradGuard no_grad;
  const int n = static_cast<int>(data.sequences.size());
  double nll = 0, correct = 0, tokens = 0;
  for (int at = 0; at < n; at += chunk) {
    std::vector<int> idx;
    for (int i = at; i < std::min(n, at + chunk); ++i)
      idx.push_back(i);
    const auto b = gather(data, idx);
    const auto l = imt_loss(model, b.tokens, static_cast<std::int64_t>(idx.size()),
                            b.memory, b.offsets);
    const auto t = static_cast<double>(l.targets.size());
    nll += l.total.item() * t;
    correct += token_accuracy(l.logits, l.targets, model.config.vocab.codes) * t;
    tokens += t;
  }
  return {nll / tokens, correct / tokens};
}

double layout_miou(const std::vector<Layout> &pred,
                   const std::vector<Layout> &gt) {
  if (pred.size() != gt.size())
    throw ValidationError("layout_miou: " + std::to_string(pred.size()) +
                          " predicted layouts for " + std::to_string(gt.size()) +
                          " ground-truth layouts");
  double sum = 0;
  std::int64_t objects = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != gt[i].size())
      throw ValidationError("layout_miou: object count differs in layout " +
                            std::to_string(i));
    for (int k = 0; k < gt[i].size(); ++k)
      sum += iou(pred[i].boxes[k], gt[i].boxes[k]);
    objects += gt[i].size();
  }
  return objects ? sum / static_cast<double>(objects) : 0.0;
}

namespace {

std::string number(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Stage {
  std::string name;
  std::string columns;
  std::uint64_t salt = 0; // separates the data streams of the stages
  StageSchedule schedule;
  // Loss and backward for one step; returns the logged terms, total first.
  std::function<std::vector<double>(std::int64_t, std::mt19937_64 &)> step;
  std::function<void(std::int64_t, std::mt19937_64 &)> after_update;
  std::function<void(Checkpoint &)> save_extra;
  std::function<void(const Checkpoint &)> load_extra;
};

TrainReport run_stage(const RunConfig &cfg, nn::Params &params, Stage &stage,
                      const TrainOptions &options) {
  fs::create_directories(cfg.out);
  const auto schedule = cfg.schedule(stage.schedule);
  auto state = OptimizerState::for_params(params.tensors(), cfg.adam);
  std::mt19937_64 rng(derive_seed(cfg.seed, stage.salt));
  std::int64_t start = 0;
  if (!options.resume.empty()) {
    const auto ck = load_checkpoint(options.resume);
    if (ck.step < 0 || ck.step > schedule.total_steps)
      throw ValidationError("checkpoint " + options.resume + " is at step " +
                            std::to_string(ck.step) + ", beyond " +
                            std::to_string(schedule.total_steps) + " steps");
    auto restored = rng_from_text(ck.rng);
    get_params(ck, params);
    get_optimizer(ck, params, state);
    if (stage.load_extra)
      stage.load_extra(ck);
    rng = restored;
    start = ck.step;
  }

  TrainReport report;
  report.first_step = start;
  report.log = (fs::path(cfg.out) / (stage.name + ".log")).string();
  std::string log = "# step lr " + stage.columns + "\n";
  if (start > 0 && fs::exists(report.log)) {
    std::istringstream in(read_file(report.log));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::int64_t s = -1;
      std::from_chars(line.data(), line.data() + line.size(), s);
      if (s >= 0 && s < start)
        log += line + "\n";
    }
  }
  write_file(report.log, log);
  std::ofstream out(report.log, std::ios::binary | std::ios::app);

  auto save = [&](const std::string &path, std::int64_t completed) {
    Checkpoint ck;
    put_params(ck, params);
    put_optimizer(ck, params, state);
    if (stage.save_extra)
      stage.save_extra(ck);
    ck.config = config_text(cfg);
    ck.rng = rng_text(rng);
    ck.step = completed;
    save_checkpoint(path, ck);
  };

  for (auto step = start; step < schedule.total_steps; ++step) {
    zero_grads(params.tensors());
    const auto terms = stage.step(step, rng);
    if (!std::isfinite(terms.front()))
      throw NumericError(stage.name + ": loss is not finite at step " +
                         std::to_string(step));
    allocate_grads(params.tensors());
    const double lr = lr_at(schedule, step);
    adam_step(params.tensors(), state, lr);
    if (stage.after_update)
      stage.after_update(step, rng);
    std::string row = std::to_string(step) + " " + number(lr);
    for (double t : terms)
      row += " " + number(t);
    out << row << "\n";
    out.flush();
    report.losses.push_back(terms.front());
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < schedule.total_steps)
      save((fs::path(cfg.out) /
            (stage.name + ".step" + std::to_string(step + 1) + ".ckpt"))
               .string(),
           step + 1);
  }
  report.checkpoint = (fs::path(cfg.out) / (stage.name + ".ckpt")).string();
  save(report.checkpoint, schedule.total_steps);
  return report;
}

NamedTensor counters(const std::string &name, const auto &values) {
  NamedTensor t{name, {static_cast<std::int64_t>(values.size())}, {}};
  for (auto v : values) {
    if (v > (1 << 24))
      throw ValidationError("counter " + name + " exceeds float precision");
    t.values.push_back(static_cast<float>(v));
  }
  return t;
}

template <class T>
std::vector<T> read_counters(const Checkpoint &ck, const std::string &name) {
  std::vector<T> out;
  for (float v : ck.get(name).values)
    out.push_back(static_cast<T>(v));
  return out;
}

} // namespace

TrainReport train_vqvae(const RunConfig &cfg_in, const TrainOptions &options) {
  auto cfg = cfg_in;
  cfg.finalize();
  const auto scenes = load_scenes(cfg);
  VqModel model(cfg.vq, cfg.seed);
  CodebookMonitor monitor(cfg.vq.codebook_size);
  const int count = static_cast<int>(scenes.size());
  const int per_step = std::min(cfg.batch, count);
  const int steps_per_epoch = (count + per_step - 1) / per_step;
  Tensor last_z;

  Stage stage;
  stage.name = "vqvae";
  stage.salt = 1;
  stage.columns = "total reconstruction codebook commitment";
  stage.schedule = cfg.vq_train;
  stage.step = [&](std::int64_t, std::mt19937_64 &rng) {
    std::vector<Image> imgs;
    for (int i : draw_batch(rng, count, cfg.batch))
      imgs.push_back(scenes[i].image);
    const auto l = vq_loss(model, images_to_tensor(imgs));
    backward(l.total);
    monitor.record(l.indices);
    last_z = l.z.detach();
    return std::vector<double>{l.total.item(), l.reconstruction.item(),
                               l.codebook.item(), l.commitment.item()};
  };
  stage.after_update = [&](std::int64_t step, std::mt19937_64 &rng) {
    if ((step + 1) % steps_per_epoch == 0)
      monitor.end_epoch(model, last_z, rng);
  };
  stage.save_extra = [&](Checkpoint &ck) {
    ck.tensors.push_back(counters("monitor.usage", monitor.usage()));
    ck.tensors.push_back(counters("monitor.idle", monitor.idle_epochs()));
  };
  stage.load_extra = [&](const Checkpoint &ck) {
    monitor.restore(read_counters<std::int64_t>(ck, "monitor.usage"),
                    read_counters<int>(ck, "monitor.idle"));
  };
  auto report = run_stage(cfg, model.params, stage, options);
  report.metric = reconstruction_mse(model, scenes, cfg.batch);
  std::ostringstream s;
  s << "vqvae: " << cfg.vq_train.steps << " steps, reconstruction mse "
    << report.metric << ", psnr " << 10.0 * std::log10(4.0 / report.metric)
    << " dB\n";
  report.summary = s.str();
  return report;
}

TrainReport train_sgt(const RunConfig &cfg_in, const TrainOptions &options) {
  auto cfg = cfg_in;
  cfg.finalize();
  const auto scenes = load_scenes(cfg);
  SgtModel model(cfg.sgt, cfg.seed);
  const int count = static_cast<int>(scenes.size());
  std::vector<LapPE> pes;
  for (const auto &s : scenes)
    pes.push_back(lap_pe(s.graph, cfg.sgt.lap_pe_width));
  const bool flip = cfg.sgt_sign_flip && cfg.sgt.use_pe;

  Stage stage;
  stage.name = "sgt";
  stage.salt = 2;
  stage.columns = "total box label diou";
  stage.schedule = cfg.sgt_train;
  stage.step = [&](std::int64_t, std::mt19937_64 &rng) {
    std::vector<SceneGraph> graphs;
    std::vector<LapPE> parts;
    Layout gt;
    for (int i : draw_batch(rng, count, cfg.batch)) {
      graphs.push_back(scenes[i].graph);
      parts.push_back(flip ? sign_flip(pes[i], rng()) : pes[i]);
      const auto &l = scenes[i].layout;
      gt.classes.insert(gt.classes.end(), l.classes.begin(), l.classes.end());
      gt.boxes.insert(gt.boxes.end(), l.boxes.begin(), l.boxes.end());
    }
    const auto g = merge_graphs(graphs);
    const auto pe = stack_pe(parts);
    const auto o = sgt_forward(model, g, cfg.sgt.use_pe ? &pe : nullptr);
    const auto l = layout_loss(o.boxes, o.logits, gt);
    backward(l.total);
    return std::vector<double>{l.total.item(), l.box, l.label, l.iou};
  };
  auto report = run_stage(cfg, model.params, stage, options);
  std::vector<Layout> pred, gt;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    pred.push_back(predict_layout(model, scenes[i].graph,
                                  cfg.sgt.use_pe ? &pes[i] : nullptr));
    gt.push_back(scenes[i].layout);
  }
  report.metric = layout_miou(pred, gt);
  std::ostringstream s;
  s << "sgt: " << cfg.sgt_train.steps << " steps, training-set miou "
    << report.metric << "\n";
  report.summary = s.str();
  return report;
}

TrainReport train_imt(const RunConfig &cfg_in, const TrainOptions &options) {
  auto cfg = cfg_in;
  cfg.finalize();
  const auto vq_path = cfg.vq_checkpoint();
  auto vq = load_vq(vq_path, "VQ checkpoint (run train-vqvae first)");
  if (!(vq->config == cfg.vq))
    throw ValidationError("VQ checkpoint " + vq_path +
                          " was trained with a different vq configuration");
  std::unique_ptr<SgtModel> sgt;
  if (cfg.imt.cross_attention) {
    const auto sgt_path = cfg.sgt_checkpoint();
    sgt = load_sgt(sgt_path, "SGT checkpoint (run train-sgt first)");
    if (!(sgt->config == cfg.sgt))
      throw ValidationError("SGT checkpoint " + sgt_path +
                            " was trained with a different sgt configuration");
  }
  const auto scenes = load_scenes(cfg);
  const auto data = prepare_imt_data(cfg.imt, *vq, sgt.get(), scenes, cfg.batch);
  std::vector<std::uint32_t> flat;
  for (const auto &s : data.sequences)
    flat.insert(flat.end(), s.begin(), s.end());
  fs::create_directories(cfg.out);
  write_token_cache((fs::path(cfg.out) / "imt.tokens").string(), flat);

  ImtModel model(cfg.imt, cfg.seed);
  const int count = static_cast<int>(scenes.size());
  Stage stage;
  stage.name = "imt";
  stage.salt = 3;
  stage.columns = "nll accuracy";
  stage.schedule = cfg.imt_train;
  stage.step = [&](std::int64_t, std::mt19937_64 &rng) {
    const auto idx = draw_batch(rng, count, cfg.batch);
    const auto b = gather(data, idx);
    const auto l = imt_loss(model, b.tokens,
                            static_cast<std::int64_t>(idx.size()), b.memory,
                            b.offsets);
    backward(l.total);
    return std::vector<double>{
        l.total.item(), token_accuracy(l.logits, l.targets, cfg.imt.vocab.codes)};
  };
  auto report = run_stage(cfg, model.params, stage, options);
  const auto tf = teacher_forced(model, data, cfg.batch);
  report.metric = tf.accuracy;
  report.nll = tf.nll;
  std::ostringstream s;
  s << "imt: " << cfg.imt_train.steps << " steps, teacher-forced accuracy "
    << tf.accuracy << ", nll " << tf.nll << "\n";
  report.summary = s.str();
  return report;
}

} // namespace sgti
