#include "imt/imt.hpp"

#include "core/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

namespace sgti {

void Vocabulary::validate() const {
  if (codes < 1 || classes < 1 || positions < 1)
    throw ValidationError("vocabulary: K, N_o and P must be positive");
}

int layout_cell(double v, int positions) {
  const double cell = std::floor(v * positions);
  return static_cast<int>(std::clamp(cell, 0.0, positions - 1.0));
}

std::vector<std::int64_t> encode_layout(const Layout &layout,
                                        const Vocabulary &vocab, int capacity) {
  vocab.validate();
  if (layout.classes.size() != layout.boxes.size())
    throw ValidationError("encode_layout: " +
                          std::to_string(layout.classes.size()) +
                          " classes for " + std::to_string(layout.boxes.size()) +
                          " boxes");
  if (layout.size() > capacity)
    throw ValidationError("encode_layout: " + std::to_string(layout.size()) +
                          " objects exceed capacity " +
                          std::to_string(capacity));
  const int p = vocab.positions;
  struct Triplet {
    std::int64_t cls, tl, br;
  };
  std::vector<Triplet> objects;
  for (int i = 0; i < layout.size(); ++i) {
    const int c = layout.classes[i];
    if (c < 0 || c >= vocab.classes)
      throw ValidationError("encode_layout: class " + std::to_string(c) +
                            " outside [0," + std::to_string(vocab.classes) +
                            ")");
    const Box &b = layout.boxes[i];
    objects.push_back({vocab.class_token(c),
                       vocab.position_token(layout_cell(b.y1, p),
                                            layout_cell(b.x1, p)),
                       vocab.position_token(layout_cell(b.y2, p),
                                            layout_cell(b.x2, p))});
  }
  std::sort(objects.begin(), objects.end(),
                   [](const Triplet &a, const Triplet &b) {
                     return std::tie(a.cls, a.tl, a.br) < std::tie(b.cls, b.tl, b.br);
                   });
  std::vector<std::int64_t> out;
  out.reserve(3 * capacity);
  for (const auto &t : objects)
    out.insert(out.end(), {t.cls, t.tl, t.br});
  out.resize(3 * static_cast<std::size_t>(capacity), vocab.pad());
  return out;
}

Layout decode_layout(std::span<const std::int64_t> tokens,
                     const Vocabulary &vocab) {
  if (tokens.size() % 3 != 0)
    throw ValidationError("decode_layout: " + std::to_string(tokens.size()) +
                          " tokens is not a whole number of triplets");
  const auto first_pos = vocab.position_token(0, 0);
  const auto p = vocab.positions;
  auto cell = [&](std::int64_t t, int &row, int &col) {
    if (t < first_pos || t >= vocab.bos())
      throw ValidationError("decode_layout: token " + std::to_string(t) +
                            " is not a position");
    row = static_cast<int>((t - first_pos) / p);
    col = static_cast<int>((t - first_pos) % p);
  };
  Layout out;
  for (std::size_t i = 0; i < tokens.size(); i += 3) {
    if (tokens[i] == vocab.pad())
      break;
    const auto c = tokens[i] - vocab.codes;
    if (c < 0 || c >= vocab.classes)
      throw ValidationError("decode_layout: token " +
                            std::to_string(tokens[i]) + " is not a class");
    int r1, c1, r2, c2;
    cell(tokens[i + 1], r1, c1);
    cell(tokens[i + 2], r2, c2);
    out.classes.push_back(static_cast<int>(c));
    out.boxes.push_back({(c1 + 0.5) / p, (r1 + 0.5) / p, (c2 + 0.5) / p,
                         (r2 + 0.5) / p});
  }
  return out;
}

bool ConvMask::allows(std::int64_t query, std::int64_t key) const {
  const auto r = keys.row(query);
  return std::binary_search(r.begin(), r.end(), key);
}

RowLists ConvMask::truncated(std::int64_t n) const {
  if (n > size())
    throw ValidationError("conv mask covers " + std::to_string(size()) +
                          " positions, asked for " + std::to_string(n));
  RowLists out;
  out.offsets.assign(keys.offsets.begin(), keys.offsets.begin() + n + 1);
  out.items.assign(keys.items.begin(), keys.items.begin() + out.offsets.back());
  return out;
}

ConvMask conv_mask(int h, int w, int kernel, int prefix_len) {
  if (kernel < 1 || kernel % 2 == 0)
    throw ValidationError("conv_mask: kernel must be odd, got " +
                          std::to_string(kernel));
  if (h < 1 || w < 1 || prefix_len < 0)
    throw ValidationError("conv_mask: bad grid " + std::to_string(h) + "x" +
                          std::to_string(w));
  ConvMask m{prefix_len, h, w, kernel, {}};
  std::vector<std::int64_t> row;
  for (int q = 0; q < prefix_len; ++q) {
    row.resize(q + 1);
    std::iota(row.begin(), row.end(), 0);
    m.keys.push_row(row);
  }
  const int half = kernel / 2;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      row.resize(prefix_len);
      std::iota(row.begin(), row.end(), 0);
      for (int r2 = std::max(0, r - half); r2 <= r; ++r2)
        for (int c2 = std::max(0, c - half);
             c2 <= std::min(w - 1, c + half) && (r2 < r || c2 <= c); ++c2)
          row.push_back(prefix_len + static_cast<std::int64_t>(r2) * w + c2);
      m.keys.push_row(row);
    }
  return m;
}

void ImtConfig::validate() const {
  vocab.validate();
  if (capacity < 0)
    throw ValidationError("imt: capacity must be >= 0");
  if (grid_h < 1 || grid_w < 1)
    throw ValidationError("imt: grid must be positive");
  if (num_layers < 1 || num_heads < 1 || embed_dim % num_heads != 0)
    throw ValidationError("imt: embed_dim " + std::to_string(embed_dim) +
                          " must split into " + std::to_string(num_heads) +
                          " heads");
  if (kernel < 1 || kernel % 2 == 0)
    throw ValidationError("imt: kernel must be odd, got " +
                          std::to_string(kernel));
  if (mlp_ratio < 1 || memory_dim < 1)
    throw ValidationError("imt: mlp_ratio and memory_dim must be positive");
}

ImtModel::ImtModel(const ImtConfig &cfg, std::uint64_t seed) : config(cfg) {
  config.validate();
  nn::Init init(seed);
  const int d = config.embed_dim;
  const auto vsize = config.vocab.size();
  token_embedding =
      params.add("imt.tok_emb", init.uniform({vsize, d}, 0.1f));
  position_embedding =
      params.add("imt.pos_emb", init.uniform({config.context(), d}, 0.1f));
  for (int l = 0; l < config.num_layers; ++l) {
    const std::string p = "imt.block" + std::to_string(l) + ".";
    ImtBlock b;
    b.norm_attn = nn::LayerNorm(params, p + "norm_attn", d);
    b.q = nn::Linear(params, p + "q", d, d, init);
    b.k = nn::Linear(params, p + "k", d, d, init);
    b.v = nn::Linear(params, p + "v", d, d, init);
    b.out = nn::Linear(params, p + "out", d, d, init);
    if (config.cross_attention) {
      b.norm_cross = nn::LayerNorm(params, p + "norm_cross", d);
      b.xq = nn::Linear(params, p + "xq", d, d, init);
      b.xk = nn::Linear(params, p + "xk", config.memory_dim, d, init);
      b.xv = nn::Linear(params, p + "xv", config.memory_dim, d, init);
      b.xout = nn::Linear(params, p + "xout", d, d, init);
    }
    b.norm_mlp = nn::LayerNorm(params, p + "norm_mlp", d);
    b.mlp1 = nn::Linear(params, p + "mlp1", d, config.mlp_ratio * d, init);
    b.mlp2 = nn::Linear(params, p + "mlp2", config.mlp_ratio * d, d, init);
    blocks.push_back(std::move(b));
  }
  norm_out = nn::LayerNorm(params, "imt.norm_out", d);
  head = nn::Linear(params, "imt.head", d, vsize, init);
  // near-uniform initial predictions
  for (auto &v : head.weight.mutable_data())
    v *= 0.1f;
  mask = conv_mask(config.grid_h, config.grid_w, config.kernel,
                   config.prefix_len());
}

std::vector<std::int64_t> build_sequence(const ImtConfig &config,
                                         std::span<const std::int64_t> prefix,
                                         std::span<const std::int64_t> codes) {
  const auto want_prefix = static_cast<std::size_t>(config.prefix_len() - 1);
  if (prefix.size() != want_prefix)
    throw ValidationError("sequence: layout prefix has " +
                          std::to_string(prefix.size()) + " tokens, expected " +
                          std::to_string(want_prefix));
  if (codes.size() != static_cast<std::size_t>(config.image_len()))
    throw ValidationError("sequence: " + std::to_string(codes.size()) +
                          " image tokens, expected " +
                          std::to_string(config.image_len()));
  for (auto t : codes)
    if (!config.vocab.is_code(t))
      throw ValidationError("sequence: image token " + std::to_string(t) +
                            " outside [0," + std::to_string(config.vocab.codes) +
                            ")");
  std::vector<std::int64_t> out(prefix.begin(), prefix.end());
  out.push_back(config.vocab.bos());
  out.insert(out.end(), codes.begin(), codes.end());
  return out;
}

namespace {

RowLists batch_lists(const RowLists &one, std::int64_t batch,
                     std::int64_t stride) {
  RowLists out;
  out.offsets.reserve(one.rows() * batch + 1);
  out.items.reserve(one.items.size() * batch);
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t r = 0; r < one.rows(); ++r) {
      for (auto k : one.row(r))
        out.items.push_back(k + b * stride);
      out.offsets.push_back(static_cast<std::int64_t>(out.items.size()));
    }
  return out;
}

Tensor forward_impl(const ImtModel &model, std::span<const std::int64_t> tokens,
                    std::int64_t batch, const Tensor *memory,
                    std::span<const std::int64_t> memory_offsets) {
  const auto &cfg = model.config;
  if (batch < 1 || tokens.empty() ||
      tokens.size() % static_cast<std::size_t>(batch) != 0)
    throw ValidationError("imt: " + std::to_string(tokens.size()) +
                          " tokens do not split into " + std::to_string(batch) +
                          " sequences");
  const auto len = static_cast<std::int64_t>(tokens.size()) / batch;
  if (len > cfg.context())
    throw ValidationError("imt: sequence of " + std::to_string(len) +
                          " tokens exceeds context " +
                          std::to_string(cfg.context()));
  const auto vsize = cfg.vocab.size();
  for (auto t : tokens)
    if (t < 0 || t >= vsize)
      throw ValidationError("imt: token " + std::to_string(t) +
                            " outside vocabulary of " + std::to_string(vsize));
  std::vector<std::int64_t> pos(tokens.size());
  for (std::size_t i = 0; i < pos.size(); ++i)
    pos[i] = static_cast<std::int64_t>(i) % len;
  const auto keys = batch_lists(model.mask.truncated(len), batch, len);

  RowLists memory_keys;
  Tensor mem;
  if (memory) {
    if (memory->rank() != 2 || memory->dim(1) != cfg.memory_dim)
      throw ShapeError("cross attention: memory " + shape_str(memory->shape()) +
                       ", expected [N," + std::to_string(cfg.memory_dim) + "]");
    if (static_cast<std::int64_t>(memory_offsets.size()) != batch + 1 ||
        memory_offsets.front() != 0 || memory_offsets.back() != memory->dim(0))
      throw ValidationError("cross attention: memory offsets do not cover the "
                            "memory rows");
    for (std::int64_t b = 0; b < batch; ++b) {
      std::vector<std::int64_t> row(memory_offsets[b + 1] - memory_offsets[b]);
      std::iota(row.begin(), row.end(), memory_offsets[b]);
      for (std::int64_t i = 0; i < len; ++i)
        memory_keys.push_row(row);
    }
    mem = *memory;
  }

  const int heads = cfg.num_heads;
  auto x = ops::add(ops::embedding(model.token_embedding, tokens),
                    ops::embedding(model.position_embedding, pos));
  for (const auto &b : model.blocks) {
    const auto a = b.norm_attn(x);
    x = ops::add(x, b.out(ops::sparse_attention(b.q(a), b.k(a), b.v(a), heads,
                                                keys)));
    if (memory) {
      const auto c = b.norm_cross(x);
      x = ops::add(x, b.xout(ops::sparse_attention(b.xq(c), b.xk(mem),
                                                   b.xv(mem), heads,
                                                   memory_keys)));
    }
    const auto m = b.norm_mlp(x);
    x = ops::add(x, b.mlp2(ops::gelu(b.mlp1(m))));
  }
  return model.head(model.norm_out(x));
}

} // namespace

Tensor imt_forward(const ImtModel &model, std::span<const std::int64_t> tokens,
                   std::int64_t batch) {
  if (model.config.cross_attention)
    throw ValidationError("imt_forward: model expects graph memory");
  return forward_impl(model, tokens, batch, nullptr, {});
}

Tensor cross_att_forward(const ImtModel &model, const Tensor &memory,
                         std::span<const std::int64_t> memory_offsets,
                         std::span<const std::int64_t> tokens,
                         std::int64_t batch) {
  if (!model.config.cross_attention)
    throw ValidationError("cross_att_forward: model has no cross attention");
  return forward_impl(model, tokens, batch, &memory, memory_offsets);
}

Tensor nll_loss(const Tensor &logits, std::span<const std::int64_t> targets,
                std::int64_t allowed) {
  if (logits.rank() != 2 || allowed < 1 || allowed > logits.dim(1))
    throw ShapeError("nll_loss: cannot keep " + std::to_string(allowed) +
                     " columns of " + shape_str(logits.shape()));
  for (auto t : targets)
    if (t < 0 || t >= allowed)
      throw ValidationError("nll_loss: target " + std::to_string(t) +
                            " outside the first " + std::to_string(allowed) +
                            " columns");
  if (allowed == logits.dim(1))
    return ops::cross_entropy(logits, targets);
  std::vector<std::uint8_t> mask(logits.dim(1), 0);
  std::fill(mask.begin() + allowed, mask.end(), 1);
  return ops::cross_entropy(
      ops::masked_fill(logits, mask, -std::numeric_limits<float>::infinity()),
      targets);
}

ImageTargets image_targets(const ImtConfig &config,
                           std::span<const std::int64_t> sequences,
                           std::int64_t batch) {
  const std::int64_t full = config.prefix_len() + config.image_len();
  if (batch < 1 || static_cast<std::int64_t>(sequences.size()) != batch * full)
    throw ValidationError("image_targets: expected " + std::to_string(batch) +
                          " sequences of " + std::to_string(full) + " tokens");
  const std::int64_t fed = full - 1;
  ImageTargets out;
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t j = 0; j < config.image_len(); ++j) {
      const auto t = sequences[b * full + config.prefix_len() + j];
      if (!config.vocab.is_code(t))
        throw ValidationError("image_targets: token " + std::to_string(t) +
                              " at image position " + std::to_string(j) +
                              " is not an image code");
      out.rows.push_back(b * fed + config.prefix_len() - 1 + j);
      out.targets.push_back(t);
    }
  return out;
}

ImtLoss imt_loss(const ImtModel &model, std::span<const std::int64_t> sequences,
                 std::int64_t batch, const Tensor &memory,
                 std::span<const std::int64_t> memory_offsets) {
  const auto &cfg = model.config;
  auto tgt = image_targets(cfg, sequences, batch);
  const std::int64_t full = cfg.prefix_len() + cfg.image_len();
  std::vector<std::int64_t> inputs;
  inputs.reserve(batch * (full - 1));
  for (std::int64_t b = 0; b < batch; ++b)
    inputs.insert(inputs.end(), sequences.begin() + b * full,
                  sequences.begin() + (b + 1) * full - 1);
  const auto logits =
      cfg.cross_attention
          ? cross_att_forward(model, memory, memory_offsets, inputs, batch)
          : imt_forward(model, inputs, batch);
  ImtLoss out;
  out.logits = ops::gather_rows(logits, tgt.rows);
  out.targets = std::move(tgt.targets);
  out.total = nll_loss(out.logits, out.targets, cfg.vocab.codes);
  return out;
}

double token_accuracy(const Tensor &logits,
                      std::span<const std::int64_t> targets,
                      std::int64_t allowed) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<std::int64_t>(targets.size()) ||
      allowed < 1 || allowed > logits.dim(1))
    throw ShapeError("token_accuracy: logits " + shape_str(logits.shape()) +
                     " for " + std::to_string(targets.size()) + " targets");
  if (targets.empty())
    return 0.0;
  const auto n = logits.dim(1);
  std::int64_t hits = 0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const float *row = logits.data().data() + r * n;
    hits += std::max_element(row, row + allowed) - row == targets[r];
  }
  return static_cast<double>(hits) / static_cast<double>(targets.size());
}

std::vector<double> next_code_distribution(std::span<const float> logits,
                                           int codes, double temperature,
                                           int top_k) {
  if (!(temperature >= 0.0) || !std::isfinite(temperature))
    throw ValidationError("sample: temperature must be >= 0");
  if (top_k < 1 || static_cast<std::size_t>(top_k) > logits.size())
    throw ValidationError("sample: top_k " + std::to_string(top_k) +
                          " outside [1," + std::to_string(logits.size()) + "]");
  if (codes < 1 || static_cast<std::size_t>(codes) > logits.size())
    throw ValidationError("sample: bad code count");
  std::vector<double> p(codes, 0.0);
  const float *begin = logits.data();
  if (temperature == 0.0 || top_k == 1) {
    p[std::max_element(begin, begin + codes) - begin] = 1.0;
    return p;
  }
  std::vector<int> order(codes);
  std::iota(order.begin(), order.end(), 0);
  const int keep = std::min(top_k, codes);
  std::partial_sort(order.begin(), order.begin() + keep, order.end(),
                    [&](int a, int b) {
                      return begin[a] > begin[b] || (begin[a] == begin[b] && a < b);
                    });
  const double top = begin[order[0]];
  double z = 0.0;
  for (int i = 0; i < keep; ++i) {
    const double e = std::exp((begin[order[i]] - top) / temperature);
    p[order[i]] = e;
    z += e;
  }
  for (auto &v : p)
    v /= z;
  return p;
}

std::vector<std::int64_t> sample(const ImtModel &model,
                                 std::span<const std::int64_t> prefix,
                                 const SampleOptions &options,
                                 const Tensor &memory) {
  const auto &cfg = model.config;
  NoGradGuard no_grad;
  std::vector<std::int64_t> codes;
  std::vector<std::int64_t> seq(prefix.begin(), prefix.end());
  if (seq.size() != static_cast<std::size_t>(cfg.prefix_len() - 1))
    throw ValidationError("sample: layout prefix has " +
                          std::to_string(seq.size()) + " tokens, expected " +
                          std::to_string(cfg.prefix_len() - 1));
  seq.push_back(cfg.vocab.bos());
  const std::vector<std::int64_t> offsets{0, memory.defined() ? memory.dim(0) : 0};
  if (cfg.cross_attention && !memory.defined())
    throw ValidationError("sample: cross-attention model needs graph memory");
  std::mt19937_64 rng(options.seed);
  const auto vsize = cfg.vocab.size();
  for (int t = 0; t < cfg.image_len(); ++t) {
    const auto logits = cfg.cross_attention
                            ? cross_att_forward(model, memory, offsets, seq, 1)
                            : imt_forward(model, seq, 1);
    const auto last = logits.data().subspan((seq.size() - 1) * vsize, vsize);
    const auto p = next_code_distribution(last, cfg.vocab.codes,
                                          options.temperature, options.top_k);
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    double acc = 0.0;
    std::int64_t pick = -1;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] == 0.0)
        continue;
      pick = static_cast<std::int64_t>(i);
      acc += p[i];
      if (u < acc)
        break;
    }
    codes.push_back(pick);
    seq.push_back(pick);
  }
  return codes;
}

} // namespace sgti
