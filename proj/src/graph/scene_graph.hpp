#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sgti {

struct Edge {
  int src = 0;
  int dst = 0;
  int predicate = 0;

  friend bool operator==(const Edge &, const Edge &) = default;
};

// Directed scene graph: node i has category nodes[i], edges carry a predicate.
struct SceneGraph {
  std::vector<int> nodes;
  std::vector<Edge> edges;
  int num_categories = 0;
  int num_predicates = 0;

  int size() const { return static_cast<int>(nodes.size()); }
  // Throws ValidationError on out-of-range ids, self loops or an empty graph.
  void validate() const;

  friend bool operator==(const SceneGraph &, const SceneGraph &) = default;
};

// Relabels node i as perm[i]; edges follow their endpoints.
SceneGraph permute_nodes(const SceneGraph &g, const std::vector<int> &perm);

// Disjoint union; node and edge order follow the input order.
SceneGraph merge_graphs(const std::vector<SceneGraph> &graphs);

// Dense symmetric matrix in double precision.
struct SymMatrix {
  int n = 0;
  std::vector<double> values; // row-major n*n

  double operator()(int r, int c) const { return values[r * n + c]; }
  double &operator()(int r, int c) { return values[r * n + c]; }
};

} // namespace sgti
