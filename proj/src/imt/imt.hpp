#pragma once

#include "graph/layout.hpp"
#include "nn/layers.hpp"
#include "tensor/ops.hpp"

#include <cstdint>
#include <vector>

namespace sgti {

// One id space: image codes, then classes, then P*P position cells, then
// BOS and PAD.
struct Vocabulary {
  int codes = 64;    // K
  int classes = 12;  // N_o
  int positions = 16; // P

  std::int64_t class_token(int c) const { return codes + c; }
  std::int64_t position_token(int row, int col) const {
    return codes + classes + static_cast<std::int64_t>(row) * positions + col;
  }
  std::int64_t bos() const {
    return codes + classes + static_cast<std::int64_t>(positions) * positions;
  }
  std::int64_t pad() const { return bos() + 1; }
  std::int64_t size() const { return bos() + 2; }
  bool is_code(std::int64_t t) const { return t >= 0 && t < codes; }
  void validate() const;
  friend bool operator==(const Vocabulary &, const Vocabulary &) = default;
};

// ⌊v·P⌋ clamped into [0, P-1].
int layout_cell(double v, int positions);

// Triplets (class, tl, br) in canonical order (class id, tl cell, br cell), PAD
// filled to 3 * capacity tokens.
std::vector<std::int64_t> encode_layout(const Layout &layout,
                                        const Vocabulary &vocab, int capacity);
// Boxes at cell centres; PAD triplets end the list.
Layout decode_layout(std::span<const std::int64_t> tokens,
                     const Vocabulary &vocab);

// Allowed attention over prefix_len + h*w positions, as per-query key lists in
// ascending order. Prefix positions attend causally inside the prefix.
struct ConvMask {
  int prefix = 0;
  int h = 0;
  int w = 0;
  int kernel = 0;
  RowLists keys;

  std::int64_t size() const { return keys.rows(); }
  bool allows(std::int64_t query, std::int64_t key) const;
  // First n positions only.
  RowLists truncated(std::int64_t n) const;
};

ConvMask conv_mask(int h, int w, int kernel, int prefix_len);

struct ImtConfig {
  Vocabulary vocab;
  int capacity = 4; // objects in the layout prefix; 0 is unconditional
  int grid_h = 4;
  int grid_w = 4;
  int num_layers = 4;
  int num_heads = 4;
  int embed_dim = 128;
  int kernel = 7;
  int mlp_ratio = 4;
  bool cross_attention = false; // graph memory replaces the layout prefix
  int memory_dim = 64;

  // Layout prefix plus BOS; BOS alone with cross attention.
  int prefix_len() const { return (cross_attention ? 0 : 3 * capacity) + 1; }
  int image_len() const { return grid_h * grid_w; }
  // Input positions: the last image token is never fed back.
  int context() const { return prefix_len() + image_len() - 1; }
  void validate() const;
  friend bool operator==(const ImtConfig &, const ImtConfig &) = default;
};

struct ImtBlock {
  nn::LayerNorm norm_attn, norm_cross, norm_mlp;
  nn::Linear q, k, v, out;
  nn::Linear xq, xk, xv, xout; // cross attention only
  nn::Linear mlp1, mlp2;
};

struct ImtModel {
  ImtConfig config;
  nn::Params params;
  Tensor token_embedding;    // [V, d]
  Tensor position_embedding; // [context, d]
  std::vector<ImtBlock> blocks;
  nn::LayerNorm norm_out;
  nn::Linear head;
  ConvMask mask;

  ImtModel(const ImtConfig &config, std::uint64_t seed);
};

// prefix + BOS + image codes, full length prefix_len + h*w.
std::vector<std::int64_t> build_sequence(const ImtConfig &config,
                                         std::span<const std::int64_t> prefix,
                                         std::span<const std::int64_t> codes);

// tokens holds `batch` sequences of equal length L <= context(); returns
// logits [batch*L, V] where row i predicts token i+1 of its sequence.
Tensor imt_forward(const ImtModel &model, std::span<const std::int64_t> tokens,
                   std::int64_t batch);

// Graph memory [sum N_b, memory_dim] split per sequence by memory_offsets
// (batch + 1 entries).
Tensor cross_att_forward(const ImtModel &model, const Tensor &memory,
                         std::span<const std::int64_t> memory_offsets,
                         std::span<const std::int64_t> tokens,
                         std::int64_t batch);

// Mean next-token cross-entropy with columns >= allowed masked to -inf.
Tensor nll_loss(const Tensor &logits, std::span<const std::int64_t> targets,
                std::int64_t allowed);

// Rows of full-sequence logits that predict image tokens, and the matching
// targets. sequences are full length (prefix_len + h*w).
struct ImageTargets {
  std::vector<std::int64_t> rows;
  std::vector<std::int64_t> targets;
};
ImageTargets image_targets(const ImtConfig &config,
                           std::span<const std::int64_t> sequences,
                           std::int64_t batch);

struct ImtLoss {
  Tensor total;
  Tensor logits; // image rows only
  std::vector<std::int64_t> targets;
};
// memory may be undefined for the prefix model.
ImtLoss imt_loss(const ImtModel &model, std::span<const std::int64_t> sequences,
                 std::int64_t batch, const Tensor &memory = {},
                 std::span<const std::int64_t> memory_offsets = {});

// Fraction of rows whose argmax over the first `allowed` columns is the target.
double token_accuracy(const Tensor &logits,
                      std::span<const std::int64_t> targets,
                      std::int64_t allowed);

struct SampleOptions {
  double temperature = 1.0;
  int top_k = 32;
  std::uint64_t seed = 0;
};

// Draws h*w image codes in raster order. For the cross-attention variant pass
// the graph memory and an empty prefix.
std::vector<std::int64_t> sample(const ImtModel &model,
                                 std::span<const std::int64_t> prefix,
                                 const SampleOptions &options,
                                 const Tensor &memory = {});

// Next-code distribution from one logits row: codes only, top_k truncated,
// tempered. Zero temperature or top_k = 1 puts all mass on the argmax.
std::vector<double> next_code_distribution(std::span<const float> logits,
                                           int codes, double temperature,
                                           int top_k);

} // namespace sgti
