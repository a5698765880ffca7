#pragma once

#include "tensor/tensor.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace sgti {

using TensorFn = std::function<Tensor(const std::vector<Tensor> &)>;

struct GradCheckOptions {
  double step = 1e-3;
  // Seed for the fixed random projection that turns fn's output into a scalar.
  std::uint64_t projection_seed = 7;
};

// Compares reverse-mode gradients of fn against central differences.
//
// fn may return any shape; both routes differentiate the scalar
// L = sum_i w_i * out_i for a fixed pseudo-random weight vector w. Every
// component of every input with requires_grad is perturbed by +/- step.
// Returns max |analytic - numeric| / max(1, |numeric|). Throws NumericError
// when fn produces a non-finite value.
double grad_check(const TensorFn &fn, std::vector<Tensor> inputs,
                  const GradCheckOptions &options = {});

} // namespace sgti
