#include "graph/scene_graph.hpp"

#include "core/error.hpp"

namespace sgti {

void SceneGraph::validate() const {
  if (nodes.empty())
    throw ValidationError("scene graph has no nodes");
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i] < 0 || nodes[i] >= num_categories)
      throw ValidationError("node " + std::to_string(i) + " has category " +
                            std::to_string(nodes[i]) + ", vocabulary size " +
                            std::to_string(num_categories));
  for (std::size_t m = 0; m < edges.size(); ++m) {
    const auto &e = edges[m];
    if (e.src < 0 || e.src >= size() || e.dst < 0 || e.dst >= size())
      throw ValidationError("edge " + std::to_string(m) +
                            " references a missing node");
    if (e.src == e.dst)
      throw ValidationError("edge " + std::to_string(m) + " is a self loop");
    if (e.predicate < 0 || e.predicate >= num_predicates)
      throw ValidationError("edge " + std::to_string(m) + " has predicate " +
                            std::to_string(e.predicate) +
                            ", vocabulary size " +
                            std::to_string(num_predicates));
  }
}

SceneGraph permute_nodes(const SceneGraph &g, const std::vector<int> &perm) {
  if (static_cast<int>(perm.size()) != g.size())
    throw ValidationError("permutation size does not match graph");
  SceneGraph out = g;
  for (int i = 0; i < g.size(); ++i)
    out.nodes[perm[i]] = g.nodes[i];
  for (auto &e : out.edges) {
    e.src = perm[e.src];
    e.dst = perm[e.dst];
  }
  return out;
}

SceneGraph merge_graphs(const std::vector<SceneGraph> &graphs) {
  if (graphs.empty())
    throw ValidationError("merge_graphs: no graphs");
  SceneGraph out;
  out.num_categories = graphs.front().num_categories;
  out.num_predicates = graphs.front().num_predicates;
  for (const auto &g : graphs) {
    if (g.num_categories != out.num_categories ||
        g.num_predicates != out.num_predicates)
      throw ValidationError("merge_graphs: vocabulary sizes differ");
    const int base = out.size();
    out.nodes.insert(out.nodes.end(), g.nodes.begin(), g.nodes.end());
    for (auto e : g.edges) {
      e.src += base;
      e.dst += base;
      out.edges.push_back(e);
    }
  }
  return out;
}

} // namespace sgti
