#include "sgt/sgt.hpp"

#include "core/error.hpp"
#include "sgt/diou.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

namespace sgti {

namespace {
std::atomic<std::uint64_t> g_score_evals{0};
} // namespace

std::uint64_t attention_score_evaluations() { return g_score_evals.load(); }

void SgtConfig::validate() const {
  if (num_layers < 1 || num_heads < 1 || embed_dim < 1 || edge_dim < 1 ||
      lap_pe_width < 1 || num_categories < 1 || num_predicates < 1)
    throw ValidationError("sgt config: sizes must be positive");
  if (embed_dim % num_heads != 0)
    throw ValidationError("sgt config: embed_dim " + std::to_string(embed_dim) +
                          " is not divisible by num_heads " +
                          std::to_string(num_heads));
}

AttentionPlan build_attention_plan(const SceneGraph &g, bool self_attend) {
  g.validate();
  const int n = g.size();
  const int m = static_cast<int>(g.edges.size());
  // (key, table row) candidates per query
  std::vector<std::vector<std::pair<int, std::int64_t>>> cand(n);
  for (int e = 0; e < m; ++e) {
    const auto &edge = g.edges[e];
    cand[edge.src].push_back({edge.dst, e});
    cand[edge.dst].push_back({edge.src, m + 1 + e});
  }
  if (self_attend)
    for (int i = 0; i < n; ++i)
      cand[i].push_back({i, m});

  AttentionPlan plan;
  plan.nodes = n;
  plan.edges = m;
  plan.query_offsets.push_back(0);
  plan.edge_pair.assign(m, -1);
  std::vector<std::int64_t> terms;
  for (int i = 0; i < n; ++i) {
    auto &c = cand[i];
    std::stable_sort(c.begin(), c.end(),
                     [](const auto &a, const auto &b) { return a.first < b.first; });
    for (std::size_t s = 0; s < c.size();) {
      const int key = c[s].first;
      const auto pair = plan.pairs();
      terms.clear();
      for (; s < c.size() && c[s].first == key; ++s) {
        terms.push_back(c[s].second);
        if (c[s].second < m)
          plan.edge_pair[c[s].second] = pair;
      }
      plan.pair_query.push_back(i);
      plan.pair_key.push_back(key);
      plan.edge_terms.push_row(terms);
    }
    plan.query_offsets.push_back(plan.pairs());
  }
  return plan;
}

SgtModel::SgtModel(const SgtConfig &cfg, std::uint64_t seed) : config(cfg) {
  config.validate();
  nn::Init init(seed);
  const int d = config.embed_dim, de = config.edge_dim;
  object_embedding =
      params.add("sgt.obj_emb", init.uniform({config.num_categories, d}, 1.0f));
  predicate_embedding =
      params.add("sgt.pred_emb", init.uniform({config.num_predicates, de}, 1.0f));
  pe_proj = nn::Linear(params, "sgt.pe_proj", config.lap_pe_width, d, init,
                       false);
  for (int l = 0; l < config.num_layers; ++l) {
    const std::string p = "sgt.layer" + std::to_string(l) + ".";
    SgtLayer layer;
    layer.q = nn::Linear(params, p + "q", d, d, init);
    layer.k = nn::Linear(params, p + "k", d, d, init);
    layer.v = nn::Linear(params, p + "v", d, d, init);
    layer.out = nn::Linear(params, p + "out", d, d, init);
    layer.edge_out = nn::Linear(params, p + "edge_out", de, d, init, false);
    layer.edge_in = nn::Linear(params, p + "edge_in", de, d, init, false);
    layer.edge_update = nn::Linear(params, p + "edge_update", d, de, init);
    layer.edge_self = params.add(p + "edge_self", init.uniform({1, de}, 1.0f));
    layer.norm_attn = nn::LayerNorm(params, p + "norm_attn", d);
    layer.norm_mlp = nn::LayerNorm(params, p + "norm_mlp", d);
    layer.norm_edge = nn::LayerNorm(params, p + "norm_edge", de);
    layer.mlp1 = nn::Linear(params, p + "mlp1", d, 2 * d, init);
    layer.mlp2 = nn::Linear(params, p + "mlp2", 2 * d, d, init);
    layers.push_back(std::move(layer));
  }
  box1 = nn::Linear(params, "sgt.box1", d, d, init);
  box2 = nn::Linear(params, "sgt.box2", d, 4, init);
  label1 = nn::Linear(params, "sgt.label1", d, d, init);
  label2 = nn::Linear(params, "sgt.label2", d, config.num_categories, init);
}

AttentionScores attention_scores(const LayerState &in, const AttentionPlan &plan,
                                 const SgtLayer &layer, const SgtConfig &config) {
  const int heads = config.num_heads;
  const int dk = config.embed_dim / heads;
  if (in.h.rank() != 2 || in.h.dim(0) != plan.nodes ||
      in.h.dim(1) != config.embed_dim)
    throw ShapeError("edge_attention_layer: node states " +
                     shape_str(in.h.shape()) + " for " +
                     std::to_string(plan.nodes) + " nodes");
  g_score_evals += static_cast<std::uint64_t>(plan.pairs());

  AttentionScores out;
  const auto q = ops::gather_rows(layer.q(in.h), plan.pair_query);
  const auto k = ops::gather_rows(layer.k(in.h), plan.pair_key);
  out.values = ops::gather_rows(layer.v(in.h), plan.pair_key);
  out.scores = ops::scale(ops::mul(q, k),
                          static_cast<float>(1.0 / std::sqrt(double(dk))));
  if (config.use_edges) {
    const auto table = ops::concat_rows(
        {layer.edge_out(ops::concat_rows({in.e, layer.edge_self})),
         layer.edge_in(in.e)});
    out.scores = ops::mul(out.scores, ops::sum_rows(table, plan.edge_terms));
  }
  out.weights = ops::segment_softmax(ops::head_sum(out.scores, heads),
                                     plan.query_offsets);
  return out;
}

LayerState edge_attention_layer(const LayerState &in, const AttentionPlan &plan,
                                const SgtLayer &layer, const SgtConfig &config) {
  const auto sc = attention_scores(in, plan, layer, config);
  const auto att =
      ops::segment_weighted_sum(sc.weights, sc.values, plan.query_offsets);

  LayerState next;
  const auto h1 = layer.norm_attn(ops::add(in.h, layer.out(att)));
  next.h = layer.norm_mlp(ops::add(h1, layer.mlp2(ops::gelu(layer.mlp1(h1)))));
  if (config.use_edges && plan.edges > 0)
    next.e = layer.norm_edge(ops::add(
        in.e, layer.edge_update(ops::gather_rows(sc.scores, plan.edge_pair))));
  else
    next.e = in.e;
  return next;
}

SgtOutput sgt_forward(const SgtModel &model, const SceneGraph &g,
                      const LapPE *pe) {
  const auto &cfg = model.config;
  if (g.num_categories > cfg.num_categories ||
      g.num_predicates > cfg.num_predicates)
    throw ValidationError("graph vocabulary exceeds the model's (" +
                          std::to_string(cfg.num_categories) + " categories, " +
                          std::to_string(cfg.num_predicates) + " predicates)");
  const auto plan = build_attention_plan(g, cfg.self_attend);
  std::vector<std::int64_t> cats(g.nodes.begin(), g.nodes.end());
  LayerState state;
  state.h = ops::embedding(model.object_embedding, cats);
  if (cfg.use_pe) {
    if (!pe || pe->nodes != g.size() || pe->width != cfg.lap_pe_width)
      throw ValidationError("positional encoding must be " +
                            std::to_string(g.size()) + "x" +
                            std::to_string(cfg.lap_pe_width));
    std::vector<float> v(pe->values.begin(), pe->values.end());
    const auto pe_t = Tensor::from({pe->nodes, pe->width}, std::move(v));
    state.h = ops::add(state.h, model.pe_proj(pe_t));
  }
  std::vector<std::int64_t> preds;
  for (const auto &e : g.edges)
    preds.push_back(e.predicate);
  state.e = ops::embedding(model.predicate_embedding, preds);
  for (const auto &layer : model.layers)
    state = edge_attention_layer(state, plan, layer, cfg);

  SgtOutput out;
  out.nodes = state.h;
  out.boxes = ops::sigmoid(model.box2(ops::gelu(model.box1(state.h))));
  out.logits = model.label2(ops::gelu(model.label1(state.h)));
  return out;
}

Layout predict_layout(const SgtModel &model, const SceneGraph &g,
                      const LapPE *pe) {
  NoGradGuard guard;
  const auto out = sgt_forward(model, g, pe);
  Layout layout;
  layout.classes = g.nodes;
  for (int i = 0; i < g.size(); ++i) {
    const float *b = out.boxes.data().data() + i * 4;
    layout.boxes.push_back(canonical_box({b[0], b[1], b[2], b[3]}));
  }
  return layout;
}

LayoutLoss layout_loss(const Tensor &boxes, const Tensor &logits,
                       const Layout &gt) {
  const auto n = static_cast<std::int64_t>(gt.classes.size());
  if (gt.boxes.size() != gt.classes.size() || boxes.rank() != 2 ||
      boxes.dim(0) != n || logits.rank() != 2 || logits.dim(0) != n)
    throw ValidationError("layout_loss: prediction covers " +
                          std::to_string(boxes.rank() ? boxes.dim(0) : 0) +
                          " nodes, ground truth " + std::to_string(n));
  std::vector<float> t;
  for (const auto &b : gt.boxes)
    t.insert(t.end(), {float(b.x1), float(b.y1), float(b.x2), float(b.y2)});
  const auto target = Tensor::from({n, 4}, std::move(t));
  std::vector<std::int64_t> cls(gt.classes.begin(), gt.classes.end());

  LayoutLoss loss;
  const auto box = ops::mean(ops::square(ops::sub(boxes, target)));
  const auto label = ops::cross_entropy(logits, cls);
  const auto iou = ops::mean(diou_rows(boxes, target));
  loss.total = ops::add(ops::add(box, label), iou);
  loss.box = box.item();
  loss.label = label.item();
  loss.iou = iou.item();
  return loss;
}

} // namespace sgti
