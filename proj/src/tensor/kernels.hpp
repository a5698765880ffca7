#pragma once

#include <cstdint>
#include <span>

namespace sgti::kernels {

// C[m,n] (+)= A[m,k] * B[k,n], accumulated in double per output element.
void gemm(const float *a, const float *b, float *c, std::int64_t m,
          std::int64_t k, std::int64_t n, bool accumulate);

// dst[cols, rows] = src[rows, cols]^T
void transpose(const float *src, float *dst, std::int64_t rows,
               std::int64_t cols);

double dot(std::span<const float> a, std::span<const float> b);

} // namespace sgti::kernels
