#include "sgt/diou.hpp"

#include "core/error.hpp"

#include <algorithm>
#include <cmath>

namespace sgti {

namespace {

// Index of the smallest / largest value among the four coordinates of one
// axis: a_lo, a_hi, b_lo, b_hi.
int arg_extreme(const double (&v)[4], bool largest) {
  int best = 0;
  for (int i = 1; i < 4; ++i)
    if (largest ? v[i] > v[best] : v[i] < v[best])
      best = i;
  return best;
}

} // namespace

double diou_eval(const double *a, const double *b, double *ga, double *gb) {
  double span[2], inter_len[2], ext_lo[2], ext_hi[2], ctr[2];
  double wa[2], wb[2];
  int ext_lo_at[2], ext_hi_at[2];
  for (int k = 0; k < 2; ++k) {
    const int lo = k, hi = k + 2;
    wa[k] = std::max(0.0, a[hi] - a[lo]);
    wb[k] = std::max(0.0, b[hi] - b[lo]);
    inter_len[k] = std::max(0.0, std::min(a[hi], b[hi]) - std::max(a[lo], b[lo]));
    const double v[4] = {a[lo], a[hi], b[lo], b[hi]};
    ext_lo_at[k] = arg_extreme(v, false);
    ext_hi_at[k] = arg_extreme(v, true);
    ext_lo[k] = v[ext_lo_at[k]];
    ext_hi[k] = v[ext_hi_at[k]];
    span[k] = ext_hi[k] - ext_lo[k];
    ctr[k] = (a[lo] + a[hi]) * 0.5 - (b[lo] + b[hi]) * 0.5;
  }
  const double area_a = wa[0] * wa[1];
  const double area_b = wb[0] * wb[1];
  const double inter = inter_len[0] * inter_len[1];
  const double uni = area_a + area_b - inter;
  const double iou_v = uni > 0 ? inter / uni : 0.0;
  const double c2 = span[0] * span[0] + span[1] * span[1];
  const double rho2 = ctr[0] * ctr[0] + ctr[1] * ctr[1];

  if (ga)
    std::fill(ga, ga + 4, 0.0);
  if (gb)
    std::fill(gb, gb + 4, 0.0);
  if (c2 == 0.0)
    return 0.0;
  const double value = 1.0 - iou_v + rho2 / c2;
  if (!ga && !gb)
    return value;

  double gA[4] = {0, 0, 0, 0}, gB[4] = {0, 0, 0, 0};
  if (uni > 0) {
    const double d_inter = -(uni + inter) / (uni * uni);
    const double d_area = inter / (uni * uni);
    for (int k = 0; k < 2; ++k) {
      const int lo = k, hi = k + 2, other = 1 - k;
      if (inter_len[k] > 0) {
        const double g = d_inter * inter_len[other];
        if (a[hi] <= b[hi])
          gA[hi] += g;
        else
          gB[hi] += g;
        if (a[lo] >= b[lo])
          gA[lo] -= g;
        else
          gB[lo] -= g;
      }
      if (a[hi] - a[lo] > 0) {
        gA[hi] += d_area * wa[other];
        gA[lo] -= d_area * wa[other];
      }
      if (b[hi] - b[lo] > 0) {
        gB[hi] += d_area * wb[other];
        gB[lo] -= d_area * wb[other];
      }
    }
  }
  const double d_rho2 = 1.0 / c2;
  const double d_c2 = -rho2 / (c2 * c2);
  for (int k = 0; k < 2; ++k) {
    const int lo = k, hi = k + 2;
    const double gc = d_rho2 * ctr[k]; // d(rho2)/d(ctr) = 2 ctr, times 1/2
    gA[lo] += gc;
    gA[hi] += gc;
    gB[lo] -= gc;
    gB[hi] -= gc;
    const double gs = d_c2 * 2.0 * span[k];
    double *slot[4] = {&gA[lo], &gA[hi], &gB[lo], &gB[hi]};
    *slot[ext_hi_at[k]] += gs;
    *slot[ext_lo_at[k]] -= gs;
  }
  if (ga)
    std::copy(gA, gA + 4, ga);
  if (gb)
    std::copy(gB, gB + 4, gb);
  return value;
}

double diou_loss(const Box &a, const Box &b) {
  const double pa[4] = {a.x1, a.y1, a.x2, a.y2};
  const double pb[4] = {b.x1, b.y1, b.x2, b.y2};
  return diou_eval(pa, pb, nullptr, nullptr);
}

Tensor diou_rows(const Tensor &pred, const Tensor &target) {
  if (pred.rank() != 2 || pred.dim(1) != 4 || pred.shape() != target.shape())
    throw ShapeError("diou_rows: incompatible shapes " +
                     shape_str(pred.shape()) + " and " +
                     shape_str(target.shape()));
  const auto n = pred.dim(0);
  std::vector<float> out(n);
  for (std::int64_t r = 0; r < n; ++r) {
    double a[4], b[4];
    for (int j = 0; j < 4; ++j) {
      a[j] = pred.data()[r * 4 + j];
      b[j] = target.data()[r * 4 + j];
    }
    out[r] = static_cast<float>(diou_eval(a, b, nullptr, nullptr));
  }
  return make_op_result({n}, std::move(out), "diou", {pred, target},
                        [n](detail::Node &self) {
                          auto &pa = *self.parents[0];
                          auto &pb = *self.parents[1];
                          for (std::int64_t r = 0; r < n; ++r) {
                            double a[4], b[4], ga[4], gb[4];
                            for (int j = 0; j < 4; ++j) {
                              a[j] = pa.data[r * 4 + j];
                              b[j] = pb.data[r * 4 + j];
                            }
                            diou_eval(a, b, ga, gb);
                            const double g = self.grad[r];
                            if (pa.requires_grad) {
                              auto buf = pa.grad_buffer();
                              for (int j = 0; j < 4; ++j)
                                buf[r * 4 + j] += static_cast<float>(g * ga[j]);
                            }
                            if (pb.requires_grad) {
                              auto buf = pb.grad_buffer();
                              for (int j = 0; j < 4; ++j)
                                buf[r * 4 + j] += static_cast<float>(g * gb[j]);
                            }
                          }
                        });
}

} // namespace sgti
