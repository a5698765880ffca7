#include "tensor/kernels.hpp"

#include <algorithm>
#include <vector>

namespace sgti::kernels {

namespace {

constexpr int kMr = 8;  // rows per micro tile
constexpr int kNr = 16; // columns per micro tile

typedef double d8 __attribute__((vector_size(64)));

// Packs rows [i0, i0+rows) of A into kMr-interleaved doubles, zero padded.
void pack_a(const float *a, std::int64_t k, std::int64_t i0, int rows,
            double *dst) {
  for (std::int64_t kk = 0; kk < k; ++kk)
    for (int r = 0; r < kMr; ++r)
      dst[kk * kMr + r] = r < rows ? a[(i0 + r) * k + kk] : 0.0;
}

void pack_b(const float *b, std::int64_t k, std::int64_t n, std::int64_t j0,
            int cols, double *dst) {
  for (std::int64_t kk = 0; kk < k; ++kk) {
    const float *src = b + kk * n + j0;
    double *d = dst + kk * kNr;
    int j = 0;
    for (; j < cols; ++j)
      d[j] = src[j];
    for (; j < kNr; ++j)
      d[j] = 0.0;
  }
}

void micro(const double *ap, const double *bp, std::int64_t k, double *out) {
  d8 acc[kMr][2] = {};
  for (std::int64_t kk = 0; kk < k; ++kk) {
    d8 b0, b1;
    __builtin_memcpy(&b0, bp + kk * kNr, sizeof(d8));
    __builtin_memcpy(&b1, bp + kk * kNr + 8, sizeof(d8));
    const double *a = ap + kk * kMr;
    for (int r = 0; r < kMr; ++r) {
      acc[r][0] += a[r] * b0;
      acc[r][1] += a[r] * b1;
    }
  }
  __builtin_memcpy(out, acc, sizeof(acc));
}

} // namespace

void gemm(const float *a, const float *b, float *c, std::int64_t m,
          std::int64_t k, std::int64_t n, bool accumulate) {
  if (m == 0 || n == 0)
    return;
  if (k == 0) {
    if (!accumulate)
      std::fill(c, c + m * n, 0.0f);
    return;
  }
  const std::int64_t mt = (m + kMr - 1) / kMr;
  std::vector<double> ap(mt * k * kMr);
  for (std::int64_t t = 0; t < mt; ++t)
    pack_a(a, k, t * kMr, static_cast<int>(std::min<std::int64_t>(kMr, m - t * kMr)),
           ap.data() + t * k * kMr);
  std::vector<double> bp(k * kNr);
  alignas(64) double tile[kMr * kNr];
  for (std::int64_t j0 = 0; j0 < n; j0 += kNr) {
    const int cols = static_cast<int>(std::min<std::int64_t>(kNr, n - j0));
    pack_b(b, k, n, j0, cols, bp.data());
    for (std::int64_t t = 0; t < mt; ++t) {
      micro(ap.data() + t * k * kMr, bp.data(), k, tile);
      const std::int64_t i0 = t * kMr;
      const int rows = static_cast<int>(std::min<std::int64_t>(kMr, m - i0));
      for (int r = 0; r < rows; ++r) {
        float *crow = c + (i0 + r) * n + j0;
        const double *trow = tile + r * kNr;
        if (accumulate)
          for (int j = 0; j < cols; ++j)
            crow[j] = static_cast<float>(crow[j] + trow[j]);
        else
          for (int j = 0; j < cols; ++j)
            crow[j] = static_cast<float>(trow[j]);
      }
    }
  }
}

void transpose(const float *src, float *dst, std::int64_t rows,
               std::int64_t cols) {
  constexpr std::int64_t kTile = 32;
  for (std::int64_t r0 = 0; r0 < rows; r0 += kTile)
    for (std::int64_t c0 = 0; c0 < cols; c0 += kTile)
      for (std::int64_t r = r0; r < std::min(rows, r0 + kTile); ++r)
        for (std::int64_t c = c0; c < std::min(cols, c0 + kTile); ++c)
          dst[c * rows + r] = src[r * cols + c];
}

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += static_cast<double>(a[i]) * b[i];
  return s;
}

} // namespace sgti::kernels
