#pragma once

#include <vector>

namespace sgti {

// Corner-form box in normalized image coordinates.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  friend bool operator==(const Box &, const Box &) = default;
};

struct Layout {
  std::vector<int> classes;
  std::vector<Box> boxes;

  int size() const { return static_cast<int>(classes.size()); }
  friend bool operator==(const Layout &, const Layout &) = default;
};

// Clamps to [0,1] and swaps corners so x1 <= x2, y1 <= y2.
Box canonical_box(Box b);

// Intersection over union with clamped (non-negative) extents. Two empty boxes
// have IoU 0.
double iou(const Box &a, const Box &b);

// Mean IoU over objects matched by index. Sizes must agree.
double mean_iou(const std::vector<Box> &pred, const std::vector<Box> &gt);

} // namespace sgti
