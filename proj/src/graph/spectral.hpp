#pragma once

#include "graph/scene_graph.hpp"

#include <cstdint>
#include <vector>

namespace sgti {

// Eigenvalues below or at this value count as zero (trivial) eigenvalues.
inline constexpr double kZeroEigenvalueTol = 1e-8;

// I - D^{-1/2} A D^{-1/2} over the symmetrized, unweighted adjacency. A node
// without neighbours keeps its identity row.
SymMatrix normalized_laplacian(const SceneGraph &g);

struct EigenDecomposition {
  int n = 0;
  std::vector<double> values;  // ascending
  std::vector<double> vectors; // row-major n*n, column k is eigenvector k

  double vector_at(int row, int k) const { return vectors[row * n + k]; }
};

// Cyclic Jacobi rotations. Eigenvectors are orthonormal and sign-normalized so
// their first non-negligible entry is positive. Throws ValidationError when
// the input is asymmetric beyond 1e-9.
EigenDecomposition symmetric_eig(const SymMatrix &m);

// Laplacian positional encoding: N x width, column k holds the eigenvector of
// the k-th smallest eigenvalue above kZeroEigenvalueTol; missing columns are
// zero.
struct LapPE {
  int nodes = 0;
  int width = 0;
  int filled = 0; // leading non-zero columns
  std::vector<double> values; // row-major nodes*width

  double operator()(int r, int c) const { return values[r * width + c]; }
};

LapPE lap_pe(const SceneGraph &g, int width);

// Row-wise concatenation of encodings with equal width, matching
// merge_graphs node order.
LapPE stack_pe(const std::vector<LapPE> &parts);

// Multiplies each column by an independent random sign.
LapPE sign_flip(const LapPE &pe, std::uint64_t seed);

// Number of connected components of the symmetrized graph (union-find).
int connected_components(const SceneGraph &g);

} // namespace sgti
