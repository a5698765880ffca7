#pragma once

#include "graph/layout.hpp"
#include "graph/scene_graph.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sgti {

enum Predicate : int {
  kAbove = 0,
  kBelow = 1,
  kLeftOf = 2,
  kRightOf = 3,
  kInside = 4,
  kSurrounding = 5,
};

inline constexpr int kNumPredicates = 6;
inline constexpr int kNumShapes = 3; // square, circle, triangle
inline constexpr int kNumColors = 4;
inline constexpr int kNumClasses = kNumShapes * kNumColors;

const std::vector<std::string> &predicate_names();
// "red square", ..., indexed by class id = shape * kNumColors + color.
const std::vector<std::string> &class_names();
// -1 when unknown.
int predicate_id(const std::string &name);
int class_id(const std::string &name);

// Spatial relation of A with respect to B; see README for the rule table.
int infer_relation(const Box &a, const Box &b);

// H x W x 3 row-major pixels in [-1, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  float &at(int y, int x, int c) { return pixels[(y * width + x) * 3 + c]; }
  float at(int y, int x, int c) const {
    return pixels[(y * width + x) * 3 + c];
  }
  friend bool operator==(const Image &, const Image &) = default;
};

struct SynthConfig {
  int image_size = 32;
  int min_objects = 2;
  int max_objects = 4;
  double min_size = 0.25; // object side as a fraction of the image
  double max_size = 0.5;
  int grid = 1; // box corners snap to multiples of this many pixels

  void validate() const;
  friend bool operator==(const SynthConfig &, const SynthConfig &) = default;
};

struct SceneSample {
  Image image;
  Layout layout;
  SceneGraph graph;

  friend bool operator==(const SceneSample &, const SceneSample &) = default;
};

// Hard-edged shapes on a light-gray background, painted in layout order.
Image rasterize(const Layout &layout, int height, int width);

SceneSample gen_scene(const SynthConfig &cfg, std::uint64_t seed);

// Samples base_seed + i for i in [0, count).
std::vector<SceneSample> gen_dataset(const SynthConfig &cfg, int count,
                                     std::uint64_t base_seed);

} // namespace sgti
