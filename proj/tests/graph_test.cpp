#include "core/error.hpp"
#include "graph/spectral.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace sgti;
using namespace sgti::oracle;

namespace {

SceneGraph make_graph(int n, std::vector<Edge> edges) {
  SceneGraph g;
  g.nodes.assign(n, 0);
  g.edges = std::move(edges);
  g.num_categories = 4;
  g.num_predicates = 6;
  return g;
}

SceneGraph random_graph(std::mt19937_64 &rng, int max_nodes = 8) {
  std::uniform_int_distribution<int> size(1, max_nodes);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = size(rng);
  const double p = u(rng) * 0.6;
  SceneGraph g = make_graph(n, {});
  for (int i = 0; i < n; ++i) {
    g.nodes[i] = static_cast<int>(rng() % 4);
    for (int j = 0; j < n; ++j)
      if (i != j && u(rng) < p)
        g.edges.push_back({i, j, static_cast<int>(rng() % 6)});
  }
  return g;
}

double det3(const SymMatrix &m, double lambda) {
  auto a = [&](int r, int c) { return m(r, c) - (r == c ? lambda : 0.0); };
  return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
         a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
         a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
}

} // namespace

TEST(Laplacian, SingleEdge) {
  auto lap = normalized_laplacian(make_graph(2, {{0, 1, 0}}));
  EXPECT_EQ(lap.values, (std::vector<double>{1, -1, -1, 1}));
}

TEST(Laplacian, IsolatedNodeIsIdentity) {
  auto lap = normalized_laplacian(make_graph(1, {}));
  EXPECT_EQ(lap.values, (std::vector<double>{1}));
}

TEST(Laplacian, Triangle) {
  // D = 2I, so off-diagonal entries are -1/sqrt(2*2)
  auto lap = normalized_laplacian(make_graph(3, {{0, 1, 0}, {1, 2, 0}, {2, 0, 0}}));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      EXPECT_NEAR(lap(i, j), i == j ? 1.0 : -1.0 / std::sqrt(2.0 * 2.0), 1e-15);
}

TEST(Laplacian, DirectionIsIgnored) {
  auto forward = normalized_laplacian(make_graph(3, {{0, 1, 0}, {1, 2, 0}}));
  auto mixed = normalized_laplacian(make_graph(3, {{1, 0, 2}, {1, 2, 0}, {0, 1, 3}}));
  EXPECT_EQ(forward.values, mixed.values);
}

TEST(Laplacian, RejectsInvalidGraphs) {
  EXPECT_THROW(normalized_laplacian(make_graph(2, {{0, 0, 0}})), ValidationError);
  EXPECT_THROW(normalized_laplacian(make_graph(2, {{0, 2, 0}})), ValidationError);
  EXPECT_THROW(normalized_laplacian(make_graph(0, {})), ValidationError);
}

TEST(SymmetricEig, Identity) {
  SymMatrix m{3, {1, 0, 0, 0, 1, 0, 0, 0, 1}};
  auto e = symmetric_eig(m);
  for (double v : e.values)
    EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(SymmetricEig, KnownTwoByTwo) {
  auto e = symmetric_eig(SymMatrix{2, {1, -1, -1, 1}});
  EXPECT_NEAR(e.values[0], 0.0, 1e-12);
  EXPECT_NEAR(e.values[1], 2.0, 1e-12);
}

TEST(SymmetricEig, PathGraphMatchesCharacteristicPolynomial) {
  auto lap = normalized_laplacian(make_graph(3, {{0, 1, 0}, {1, 2, 0}}));
  // roots of det(L - lambda I)
  for (double root : {0.0, 1.0, 2.0})
    EXPECT_NEAR(det3(lap, root), 0.0, 1e-12);
  auto e = symmetric_eig(lap);
  EXPECT_NEAR(e.values[0], 0.0, 1e-10);
  EXPECT_NEAR(e.values[1], 1.0, 1e-10);
  EXPECT_NEAR(e.values[2], 2.0, 1e-10);
  EXPECT_LT(max_residual(lap, e), 1e-8);
}

TEST(SymmetricEig, RejectsAsymmetricInput) {
  EXPECT_THROW(symmetric_eig(SymMatrix{2, {1, 0.5, 0.4, 1}}), ValidationError);
}

TEST(SymmetricEig, ReconstructsRandomMatrices) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    SymMatrix m{8, std::vector<double>(64)};
    for (int i = 0; i < 8; ++i)
      for (int j = i; j < 8; ++j)
        m(i, j) = m(j, i) = u(rng);
    auto e = symmetric_eig(m);
    EXPECT_TRUE(std::is_sorted(e.values.begin(), e.values.end()));
    double recon = 0.0, ortho = 0.0;
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) {
        double s = 0.0, dotp = 0.0;
        for (int k = 0; k < 8; ++k) {
          s += e.vector_at(i, k) * e.values[k] * e.vector_at(j, k);
          dotp += e.vector_at(k, i) * e.vector_at(k, j);
        }
        recon = std::max(recon, std::fabs(s - m(i, j)));
        ortho = std::max(ortho, std::fabs(dotp - (i == j ? 1.0 : 0.0)));
      }
    EXPECT_LT(recon, 1e-7);
    EXPECT_LT(ortho, 1e-8);
    EXPECT_LT(max_residual(m, e), 1e-8);
  }
}

TEST(SpectralProperties, RandomGraphs) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    auto g = random_graph(rng);
    auto lap = normalized_laplacian(g);
    for (int i = 0; i < g.size(); ++i)
      for (int j = 0; j < g.size(); ++j)
        ASSERT_EQ(lap(i, j), lap(j, i));
    auto e = symmetric_eig(lap);
    EXPECT_LT(max_residual(lap, e), 1e-8);
    int zeros = 0;
    for (double v : e.values) {
      EXPECT_GE(v, -1e-8);
      EXPECT_LE(v, 2.0 + 1e-8);
      zeros += v <= kZeroEigenvalueTol;
    }
    int isolated = 0;
    for (int i = 0; i < g.size(); ++i) {
      bool any = false;
      for (const auto &edge : g.edges)
        any = any || edge.src == i || edge.dst == i;
      isolated += !any;
    }
    // isolated nodes keep an identity row (eigenvalue 1), so only components
    // with at least one edge contribute a zero eigenvalue
    EXPECT_EQ(zeros, connected_components(g) - isolated) << "trial " << trial;
  }
}

TEST(SpectralProperties, PermutationConjugatesLaplacian) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto g = random_graph(rng);
    std::vector<int> perm(g.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto lap = normalized_laplacian(g);
    auto plap = normalized_laplacian(permute_nodes(g, perm));
    for (int i = 0; i < g.size(); ++i)
      for (int j = 0; j < g.size(); ++j)
        ASSERT_EQ(plap(perm[i], perm[j]), lap(i, j));
  }
}

TEST(LapPE, SingleEdgePadded) {
  auto pe = lap_pe(make_graph(2, {{0, 1, 0}}), 8);
  ASSERT_EQ(pe.width, 8);
  const double h = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(std::fabs(pe(0, 0)), h, 1e-12);
  EXPECT_NEAR(pe(1, 0), -pe(0, 0), 1e-12);
  for (int c = 1; c < 8; ++c) {
    EXPECT_EQ(pe(0, c), 0.0);
    EXPECT_EQ(pe(1, c), 0.0);
  }
}

TEST(LapPE, IsolatedNode) {
  auto pe = lap_pe(make_graph(1, {}), 8);
  EXPECT_NEAR(pe(0, 0), 1.0, 1e-12);
  for (int c = 1; c < 8; ++c)
    EXPECT_EQ(pe(0, c), 0.0);
}

TEST(LapPE, ColumnsAreUnitEigenvectors) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto g = random_graph(rng);
    auto pe = lap_pe(g, 8);
    auto lap = normalized_laplacian(g);
    for (int c = 0; c < pe.width; ++c) {
      double norm = 0.0;
      for (int r = 0; r < pe.nodes; ++r)
        norm += pe(r, c) * pe(r, c);
      if (c >= pe.filled) {
        EXPECT_EQ(norm, 0.0);
        continue;
      }
      EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-6);
      // Rayleigh quotient gives the eigenvalue for a unit vector
      double lambda = 0.0;
      for (int r = 0; r < pe.nodes; ++r)
        for (int s = 0; s < pe.nodes; ++s)
          lambda += pe(r, c) * lap(r, s) * pe(s, c);
      EXPECT_GT(lambda, kZeroEigenvalueTol);
      for (int r = 0; r < pe.nodes; ++r) {
        double lv = 0.0;
        for (int s = 0; s < pe.nodes; ++s)
          lv += lap(r, s) * pe(s, c);
        EXPECT_LT(std::fabs(lv - lambda * pe(r, c)), 1e-8);
      }
    }
  }
}

TEST(LapPE, WidthMustBePositive) {
  EXPECT_THROW(lap_pe(make_graph(1, {}), 0), ValidationError);
}

TEST(SignFlip, PreservesMagnitudesAndPadding) {
  auto g = make_graph(4, {{0, 1, 0}, {1, 2, 0}, {2, 3, 0}});
  auto pe = lap_pe(g, 8);
  bool any_flipped = false;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto f = sign_flip(pe, seed);
    for (int r = 0; r < pe.nodes; ++r)
      for (int c = 0; c < pe.width; ++c) {
        EXPECT_EQ(std::fabs(f(r, c)), std::fabs(pe(r, c)));
        if (c >= pe.filled) {
          EXPECT_EQ(f(r, c), 0.0);
        }
        any_flipped = any_flipped || f(r, c) != pe(r, c);
      }
    EXPECT_EQ(sign_flip(pe, seed).values, f.values);
  }
  EXPECT_TRUE(any_flipped);
}
