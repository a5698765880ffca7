#pragma once

#include "tensor/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace sgti {

// Compressed row lists: entries of row r are items[offsets[r] .. offsets[r+1]).
struct RowLists {
  std::vector<std::int64_t> offsets{0};
  std::vector<std::int64_t> items;

  std::int64_t rows() const {
    return static_cast<std::int64_t>(offsets.size()) - 1;
  }
  std::span<const std::int64_t> row(std::int64_t r) const {
    return {items.data() + offsets[r],
            static_cast<std::size_t>(offsets[r + 1] - offsets[r])};
  }
  void push_row(std::span<const std::int64_t> entries) {
    items.insert(items.end(), entries.begin(), entries.end());
    offsets.push_back(static_cast<std::int64_t>(items.size()));
  }
};

namespace ops {

// All ops take operands by handle and return a fresh tensor. Unless noted,
// shapes must match exactly; there is no implicit broadcasting.

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor &a, const Tensor &b);
Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &a, float factor);
// a[..., n] + bias[n], bias repeated over every leading index.
Tensor add_bias(const Tensor &a, const Tensor &bias);
// x[rows, in] W[in, out] + b[out]
Tensor linear(const Tensor &x, const Tensor &weight, const Tensor &bias);

Tensor sum(const Tensor &a);
Tensor mean(const Tensor &a);

Tensor softmax(const Tensor &a);     // over the last axis
Tensor log_softmax(const Tensor &a); // over the last axis
// Normalizes over the last axis, then gamma * x + beta.
Tensor layer_norm(const Tensor &x, const Tensor &gamma, const Tensor &beta,
                  float eps = 1e-5f);

Tensor gelu(const Tensor &a); // tanh approximation
Tensor relu(const Tensor &a);
Tensor sigmoid(const Tensor &a);
Tensor tanh(const Tensor &a);
Tensor abs(const Tensor &a);
Tensor square(const Tensor &a);

// Rows of table[V, d] selected by ids -> [ids.size(), d].
Tensor embedding(const Tensor &table, std::span<const std::int64_t> ids);
inline Tensor gather_rows(const Tensor &a, std::span<const std::int64_t> rows) {
  return embedding(a, rows);
}
// out[r] = sum over lists.row(r) of x[i]; empty rows are zero.
Tensor sum_rows(const Tensor &x, const RowLists &lists);

Tensor reshape(const Tensor &a, Shape shape);
Tensor transpose(const Tensor &a); // 2-D only
Tensor concat_rows(const std::vector<Tensor> &parts);
Tensor concat_cols(const Tensor &a, const Tensor &b);
Tensor slice_cols(const Tensor &a, std::int64_t start, std::int64_t count);

// Positions where mask is nonzero take `value`; gradient there is zero.
// mask has either a.numel() entries or one entry per last-axis column.
Tensor masked_fill(const Tensor &a, std::span<const std::uint8_t> mask,
                   float value);

// Mean over rows of -log softmax(logits[r])[targets[r]].
Tensor cross_entropy(const Tensor &logits,
                     std::span<const std::int64_t> targets);

// Stop-gradient.
inline Tensor detach(const Tensor &a) { return a.detach(); }
// Forward value is `values` bit for bit; the gradient is copied to `input`.
Tensor straight_through(const Tensor &input, const Tensor &values);

// x[B,C,H,W] * w[O,C,k,k] + b[O] with stride and symmetric zero padding.
Tensor conv2d(const Tensor &x, const Tensor &weight, const Tensor &bias,
              int stride, int padding);
Tensor upsample_nearest2x(const Tensor &x); // [B,C,H,W] -> [B,C,2H,2W]
// [B,C,H,W] -> [B*H*W, C] (one row per spatial cell, raster order per image)
Tensor nchw_to_rows(const Tensor &x);
// [B*H*W, C] -> [B,C,H,W]
Tensor rows_to_nchw(const Tensor &x, std::int64_t batch, std::int64_t height,
                    std::int64_t width);

// x[P, heads*dk] -> [P, heads]: sum within each head's column block.
Tensor head_sum(const Tensor &x, int heads);
// Softmax over contiguous row segments, independently per column.
// logits[P, heads]; segment s covers rows offsets[s] .. offsets[s+1].
Tensor segment_softmax(const Tensor &logits,
                       std::span<const std::int64_t> offsets);
// out[s, h-block] = sum_{p in segment s} weights[p, h] * values[p, h-block]
Tensor segment_weighted_sum(const Tensor &weights, const Tensor &values,
                            std::span<const std::int64_t> offsets);

// Multi-head scaled dot-product attention where query row r attends only the
// key rows listed in keys.row(r). Queries with no keys produce zero rows.
Tensor sparse_attention(const Tensor &q, const Tensor &k, const Tensor &v,
                        int heads, const RowLists &keys);

} // namespace ops

namespace fault {
// Corrupts the matmul adjoint so gradient checks can be shown to fail.
void set_matmul_adjoint_fault(bool enabled);
} // namespace fault

} // namespace sgti
