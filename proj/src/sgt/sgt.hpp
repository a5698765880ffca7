#pragma once

#include "graph/layout.hpp"
#include "graph/spectral.hpp"
#include "nn/layers.hpp"
#include "tensor/ops.hpp"

#include <cstdint>
#include <vector>

namespace sgti {

struct SgtConfig {
  int num_layers = 2;
  int num_heads = 4;
  int embed_dim = 64;
  int edge_dim = 64;
  int lap_pe_width = 8;
  int num_categories = 12;
  int num_predicates = 6;
  bool use_edges = true;    // edge-modulated scores (+E)
  bool use_pe = true;       // Laplacian positional encoding (+LapPE)
  bool self_attend = true;  // every node is in its own neighbourhood

  void validate() const;
  friend bool operator==(const SgtConfig &, const SgtConfig &) = default;
};

// Sparse attention layout for one (possibly batched) graph. Pairs are grouped
// by query node in ascending key order.
struct AttentionPlan {
  int nodes = 0;
  int edges = 0;
  std::vector<std::int64_t> query_offsets; // nodes + 1
  std::vector<std::int64_t> pair_query;
  std::vector<std::int64_t> pair_key;
  // Per pair: rows of the edge feature table [E W_out; e_self W_out; E W_in]
  // that are summed into the pair's edge term.
  RowLists edge_terms;
  std::vector<std::int64_t> edge_pair; // pair index of (src, dst) per edge

  std::int64_t pairs() const {
    return static_cast<std::int64_t>(pair_query.size());
  }
};

// Neighbourhood of i: nodes joined to i by an edge in either direction, plus
// i itself when self_attend is set.
AttentionPlan build_attention_plan(const SceneGraph &g, bool self_attend);

struct SgtLayer {
  nn::Linear q, k, v, out;
  nn::Linear edge_out, edge_in, edge_update;
  Tensor edge_self; // [1, edge_dim]
  nn::LayerNorm norm_attn, norm_mlp, norm_edge;
  nn::Linear mlp1, mlp2;
};

struct SgtModel {
  SgtConfig config;
  nn::Params params;
  Tensor object_embedding;    // [N_o, d]
  Tensor predicate_embedding; // [N_p, d_e]
  nn::Linear pe_proj;         // [l, d], no bias
  std::vector<SgtLayer> layers;
  nn::Linear box1, box2, label1, label2;

  SgtModel(const SgtConfig &config, std::uint64_t seed);
};

struct LayerState {
  Tensor h; // [N, d]
  Tensor e; // [M, d_e]
};

struct AttentionScores {
  Tensor scores;  // [pairs, d], per-head elementwise terms before the softmax
  Tensor weights; // [pairs, heads]
  Tensor values;  // [pairs, d], value rows of each pair's key
};

AttentionScores attention_scores(const LayerState &in, const AttentionPlan &plan,
                                 const SgtLayer &layer, const SgtConfig &config);

LayerState edge_attention_layer(const LayerState &in, const AttentionPlan &plan,
                                const SgtLayer &layer, const SgtConfig &config);

struct SgtOutput {
  Tensor boxes;  // [N, 4], sigmoid range
  Tensor logits; // [N, N_o]
  Tensor nodes;  // final node states [N, d]
};

// pe may be null when config.use_pe is off.
SgtOutput sgt_forward(const SgtModel &model, const SceneGraph &g,
                      const LapPE *pe);

// Boxes from the forward pass with corners swapped into order; classes are
// the graph's own categories.
Layout predict_layout(const SgtModel &model, const SceneGraph &g,
                      const LapPE *pe);

struct LayoutLoss {
  Tensor total;
  double box = 0;
  double label = 0;
  double iou = 0;
};

// mean squared box error + label cross-entropy + mean DIoU, unit weights.
LayoutLoss layout_loss(const Tensor &boxes, const Tensor &logits,
                       const Layout &gt);

// Total (query, key) score evaluations performed by edge_attention_layer in
// this process.
std::uint64_t attention_score_evaluations();

} // namespace sgti
