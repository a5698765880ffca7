#include "graph/spectral.hpp"

#include "core/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace sgti {

SymMatrix normalized_laplacian(const SceneGraph &g) {
  g.validate();
  const int n = g.size();
  std::vector<char> adj(static_cast<std::size_t>(n) * n, 0);
  for (const auto &e : g.edges) {
    adj[e.src * n + e.dst] = 1;
    adj[e.dst * n + e.src] = 1;
  }
  std::vector<double> inv_sqrt_deg(n, 0.0);
  for (int i = 0; i < n; ++i) {
    int deg = 0;
    for (int j = 0; j < n; ++j)
      deg += adj[i * n + j];
    inv_sqrt_deg[i] = deg > 0 ? 1.0 / std::sqrt(static_cast<double>(deg)) : 0.0;
  }
  SymMatrix lap{n, std::vector<double>(static_cast<std::size_t>(n) * n, 0.0)};
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double a = adj[i * n + j] ? inv_sqrt_deg[i] * inv_sqrt_deg[j] : 0.0;
      lap(i, j) = (i == j ? 1.0 : 0.0) - a;
    }
  return lap;
}

EigenDecomposition symmetric_eig(const SymMatrix &m) {
  const int n = m.n;
  if (static_cast<int>(m.values.size()) != n * n)
    throw ValidationError("symmetric_eig: matrix storage does not match size");
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (std::fabs(m(i, j) - m(j, i)) > 1e-9)
        throw ValidationError("symmetric_eig: matrix is not symmetric at (" +
                              std::to_string(i) + "," + std::to_string(j) +
                              ")");

  SymMatrix a = m;
  std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    v[i * n + i] = 1.0;

  double scale = 0.0;
  for (double x : a.values)
    scale = std::max(scale, std::fabs(x));
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q)
        off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= 1e-15 * std::max(scale, 1e-300))
      break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::fabs(apq) < 1e-300)
          continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return a(x, x) < a(y, y); });

  EigenDecomposition out;
  out.n = n;
  out.values.resize(n);
  out.vectors.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int k = 0; k < n; ++k) {
    const int src = order[k];
    out.values[k] = a(src, src);
    double sign = 1.0;
    for (int r = 0; r < n; ++r)
      if (std::fabs(v[r * n + src]) > 1e-10) {
        sign = v[r * n + src] < 0 ? -1.0 : 1.0;
        break;
      }
    for (int r = 0; r < n; ++r)
      out.vectors[r * n + k] = sign * v[r * n + src];
  }
  return out;
}

LapPE lap_pe(const SceneGraph &g, int width) {
  if (width < 1)
    throw ValidationError("lap_pe: width must be >= 1");
  const auto eig = symmetric_eig(normalized_laplacian(g));
  LapPE pe;
  pe.nodes = g.size();
  pe.width = width;
  pe.values.assign(static_cast<std::size_t>(pe.nodes) * width, 0.0);
  int col = 0;
  for (int k = 0; k < eig.n && col < width; ++k) {
    if (eig.values[k] <= kZeroEigenvalueTol)
      continue;
    for (int r = 0; r < pe.nodes; ++r)
      pe.values[r * width + col] = eig.vector_at(r, k);
    ++col;
  }
  pe.filled = col;
  return pe;
}

LapPE stack_pe(const std::vector<LapPE> &parts) {
  if (parts.empty())
    throw ValidationError("stack_pe: no encodings");
  LapPE out;
  out.width = parts.front().width;
  for (const auto &p : parts) {
    if (p.width != out.width)
      throw ValidationError("stack_pe: widths differ");
    out.nodes += p.nodes;
    out.filled = std::max(out.filled, p.filled);
    out.values.insert(out.values.end(), p.values.begin(), p.values.end());
  }
  return out;
}

LapPE sign_flip(const LapPE &pe, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LapPE out = pe;
  for (int c = 0; c < pe.width; ++c) {
    const bool flip = (rng() >> 63) != 0;
    if (!flip || c >= pe.filled)
      continue;
    for (int r = 0; r < pe.nodes; ++r)
      out.values[r * pe.width + c] = -out.values[r * pe.width + c];
  }
  return out;
}

int connected_components(const SceneGraph &g) {
  std::vector<int> parent(g.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  int components = g.size();
  for (const auto &e : g.edges) {
    const int a = find(e.src), b = find(e.dst);
    if (a != b) {
      parent[a] = b;
      --components;
    }
  }
  return components;
}

} // namespace sgti
