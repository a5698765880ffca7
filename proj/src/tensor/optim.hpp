#pragma once

#include "tensor/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace sgti {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;

  // Zeroed moment buffers shaped like `params`.
  static OptimizerState for_params(std::span<const Tensor> params,
                                   AdamConfig config = {});
};

// One bias-corrected Adam update. Every parameter must carry a gradient.
void adam_step(std::span<Tensor> params, OptimizerState &state, double lr);

void zero_grads(std::span<Tensor> params);
// Gives parameters that took no part in the last backward a zero gradient.
void allocate_grads(std::span<Tensor> params);

// Cosine one-cycle schedule: warm up from max_lr/div_factor to max_lr over
// round(pct_warmup * total_steps) steps, then anneal to max_lr/final_div_factor.
struct LrSchedule {
  double max_lr = 1e-4;
  std::int64_t total_steps = 1;
  double pct_warmup = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;

  void validate() const;
  std::int64_t warmup_steps() const;
};

double lr_at(const LrSchedule &schedule, std::int64_t step);

} // namespace sgti
