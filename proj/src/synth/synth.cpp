#include "synth/synth.hpp"

#include "core/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <tuple>

namespace sgti {

namespace {

const unsigned char kBackground[3] = {200, 200, 200};
const unsigned char kPalette[kNumColors][3] = {
    {220, 40, 40}, {40, 170, 60}, {40, 80, 220}, {230, 200, 40}};

float to_unit(unsigned char v) { return static_cast<float>(v) / 127.5f - 1.0f; }

std::uint64_t draw(std::mt19937_64 &rng, std::uint64_t lo, std::uint64_t hi) {
  return lo + rng() % (hi - lo + 1);
}

} // namespace

const std::vector<std::string> &predicate_names() {
  static const std::vector<std::string> names = {
      "above", "below", "left of", "right of", "inside", "surrounding"};
  return names;
}

const std::vector<std::string> &class_names() {
  static const std::vector<std::string> names = [] {
    const char *shapes[kNumShapes] = {"square", "circle", "triangle"};
    const char *colors[kNumColors] = {"red", "green", "blue", "yellow"};
    std::vector<std::string> out;
    for (auto *s : shapes)
      for (auto *c : colors)
        out.push_back(std::string(c) + " " + s);
    return out;
  }();
  return names;
}

int predicate_id(const std::string &name) {
  const auto &n = predicate_names();
  auto it = std::find(n.begin(), n.end(), name);
  return it == n.end() ? -1 : static_cast<int>(it - n.begin());
}

int class_id(const std::string &name) {
  const auto &n = class_names();
  auto it = std::find(n.begin(), n.end(), name);
  return it == n.end() ? -1 : static_cast<int>(it - n.begin());
}

int infer_relation(const Box &a, const Box &b) {
  if (a.x1 < b.x1 && a.y1 < b.y1 && a.x2 > b.x2 && a.y2 > b.y2)
    return kSurrounding;
  if (b.x1 < a.x1 && b.y1 < a.y1 && b.x2 > a.x2 && b.y2 > a.y2)
    return kInside;
  const double dx = (a.x1 + a.x2) / 2 - (b.x1 + b.x2) / 2;
  const double dy = (a.y1 + a.y2) / 2 - (b.y1 + b.y2) / 2;
  if (std::fabs(dx) >= std::fabs(dy)) {
    if (dx != 0)
      return dx < 0 ? kLeftOf : kRightOf;
    // coincident centres: order by corner coordinates
    return std::tie(a.x1, a.y1, a.x2, a.y2) <= std::tie(b.x1, b.y1, b.x2, b.y2)
               ? kLeftOf
               : kRightOf;
  }
  return dy < 0 ? kAbove : kBelow;
}

void SynthConfig::validate() const {
  if (image_size < 4)
    throw ValidationError("synth: image_size must be >= 4");
  if (min_objects < 1 || max_objects < min_objects)
    throw ValidationError("synth: need 1 <= min_objects <= max_objects");
  if (max_objects > kNumClasses)
    throw ValidationError("synth: at most " + std::to_string(kNumClasses) +
                          " objects per scene");
  if (!(min_size > 0) || max_size > 1 || max_size < min_size)
    throw ValidationError("synth: need 0 < min_size <= max_size <= 1");
  if (grid < 1 || image_size % grid != 0)
    throw ValidationError("synth: grid must divide image_size");
}

Image rasterize(const Layout &layout, int height, int width) {
  Image img{height, width, std::vector<float>(height * width * 3)};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = to_unit(kBackground[c]);
  for (int i = 0; i < layout.size(); ++i) {
    const int cls = layout.classes[i];
    if (cls < 0 || cls >= kNumClasses)
      throw ValidationError("rasterize: unknown class " + std::to_string(cls));
    const int shape = cls / kNumColors;
    const auto &rgb = kPalette[cls % kNumColors];
    const Box b = canonical_box(layout.boxes[i]);
    // box in pixel units
    const double x1 = b.x1 * width, x2 = b.x2 * width;
    const double y1 = b.y1 * height, y2 = b.y2 * height;
    const double cx = (x1 + x2) / 2, cy = (y1 + y2) / 2;
    const double rx = (x2 - x1) / 2, ry = (y2 - y1) / 2;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        if (px < x1 || px > x2 || py < y1 || py > y2)
          continue;
        bool inside = true;
        if (shape == 1) {
          const double u = (px - cx) / rx, v = (py - cy) / ry;
          inside = u * u + v * v <= 1.0;
        } else if (shape == 2) {
          // apex at the top centre, base along the bottom edge
          const double t = (py - y1) / (y2 - y1);
          inside = std::fabs(px - cx) <= t * rx;
        }
        if (inside)
          for (int c = 0; c < 3; ++c)
            img.at(y, x, c) = to_unit(rgb[c]);
      }
  }
  return img;
}

SceneSample gen_scene(const SynthConfig &cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const int n = static_cast<int>(draw(rng, cfg.min_objects, cfg.max_objects));
  const int cells = cfg.image_size / cfg.grid;
  const int min_cells = std::max(
      1, static_cast<int>(std::lround(cfg.min_size * cells)));
  const int max_cells = std::max(
      min_cells, static_cast<int>(std::lround(cfg.max_size * cells)));

  std::vector<int> classes(kNumClasses);
  for (int i = 0; i < kNumClasses; ++i)
    classes[i] = i;
  SceneSample s;
  for (int i = 0; i < n; ++i) {
    const auto pick = draw(rng, i, kNumClasses - 1);
    std::swap(classes[i], classes[pick]);
    const int side = static_cast<int>(draw(rng, min_cells, max_cells));
    const int x0 = static_cast<int>(draw(rng, 0, cells - side));
    const int y0 = static_cast<int>(draw(rng, 0, cells - side));
    s.layout.classes.push_back(classes[i]);
    s.layout.boxes.push_back({double(x0) / cells, double(y0) / cells,
                              double(x0 + side) / cells,
                              double(y0 + side) / cells});
  }

  s.graph.nodes = s.layout.classes;
  s.graph.num_categories = kNumClasses;
  s.graph.num_predicates = kNumPredicates;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && (rng() >> 63))
        s.graph.edges.push_back(
            {i, j, infer_relation(s.layout.boxes[i], s.layout.boxes[j])});
  if (n >= 2 && s.graph.edges.empty()) {
    const int i = static_cast<int>(draw(rng, 0, n - 1));
    int j = static_cast<int>(draw(rng, 0, n - 2));
    j += j >= i;
    s.graph.edges.push_back(
        {i, j, infer_relation(s.layout.boxes[i], s.layout.boxes[j])});
  }
  s.image = rasterize(s.layout, cfg.image_size, cfg.image_size);
  return s;
}

std::vector<SceneSample> gen_dataset(const SynthConfig &cfg, int count,
                                     std::uint64_t base_seed) {
  std::vector<SceneSample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i)
    out.push_back(gen_scene(cfg, base_seed + i));
  return out;
}

} // namespace sgti
