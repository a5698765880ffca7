#include "graph/layout.hpp"

#include "core/error.hpp"

#include <algorithm>
#include <string>

namespace sgti {

Box canonical_box(Box b) {
  auto c = [](double v) { return std::clamp(v, 0.0, 1.0); };
  b = {c(b.x1), c(b.y1), c(b.x2), c(b.y2)};
  if (b.x1 > b.x2)
    std::swap(b.x1, b.x2);
  if (b.y1 > b.y2)
    std::swap(b.y1, b.y2);
  return b;
}

double iou(const Box &a, const Box &b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double area_a = std::max(0.0, a.x2 - a.x1) * std::max(0.0, a.y2 - a.y1);
  const double area_b = std::max(0.0, b.x2 - b.x1) * std::max(0.0, b.y2 - b.y1);
  const double uni = area_a + area_b - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double mean_iou(const std::vector<Box> &pred, const std::vector<Box> &gt) {
  if (pred.size() != gt.size())
    throw ValidationError("mean_iou: " + std::to_string(pred.size()) +
                          " predicted boxes for " + std::to_string(gt.size()) +
                          " ground-truth boxes");
  if (pred.empty())
    return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    s += iou(pred[i], gt[i]);
  return s / static_cast<double>(pred.size());
}

} // namespace sgti
