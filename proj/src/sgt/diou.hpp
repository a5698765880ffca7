#pragma once

#include "graph/layout.hpp"
#include "tensor/tensor.hpp"

namespace sgti {

// 1 - IoU + rho^2/c^2 for corner-form boxes. c is the diagonal of the box
// enclosing all corners of both inputs; returns 0 when c = 0.
double diou_loss(const Box &a, const Box &b);

// Same value for packed boxes (x1,y1,x2,y2); when ga/gb are non-null they
// receive d(loss)/d(a) and d(loss)/d(b).
double diou_eval(const double *a, const double *b, double *ga, double *gb);

// Row-wise DIoU: pred[N,4], target[N,4] -> [N], differentiable in both.
Tensor diou_rows(const Tensor &pred, const Tensor &target);

} // namespace sgti
