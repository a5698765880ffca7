#include "tensor/optim.hpp"

#include "core/error.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace sgti {

OptimizerState OptimizerState::for_params(std::span<const Tensor> params,
                                          AdamConfig config) {
  OptimizerState s;
  s.config = config;
  for (const auto &p : params) {
    s.first_moment.emplace_back(p.numel(), 0.0f);
    s.second_moment.emplace_back(p.numel(), 0.0f);
  }
  return s;
}

void adam_step(std::span<Tensor> params, OptimizerState &state, double lr) {
  if (params.size() != state.first_moment.size())
    throw ShapeError("adam_step: optimizer state tracks " +
                     std::to_string(state.first_moment.size()) +
                     " parameters, got " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad())
      throw ShapeError("adam_step: parameter " + std::to_string(i) +
                       " has no gradient");
    if (static_cast<std::int64_t>(state.first_moment[i].size()) !=
        params[i].numel())
      throw ShapeError("adam_step: moment buffer shape mismatch for " +
                       shape_str(params[i].shape()));
  }
  const auto &c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto g = params[i].grad();
    auto &m = state.first_moment[i];
    auto &v = state.second_moment[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      const double vj = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double update = lr * (mj / bc1) / (std::sqrt(vj / bc2) + c.eps);
      w[j] = static_cast<float>(w[j] - update);
    }
  }
}

void zero_grads(std::span<Tensor> params) {
  for (auto &p : params)
    p.zero_grad();
}

void allocate_grads(std::span<Tensor> params) {
  for (auto &p : params)
    p.mutable_grad();
}

void LrSchedule::validate() const {
  if (!(max_lr > 0.0))
    throw ValidationError("lr schedule: max_lr must be > 0");
  if (total_steps < 1)
    throw ValidationError("lr schedule: total_steps must be >= 1");
  if (!(pct_warmup > 0.0 && pct_warmup < 1.0))
    throw ValidationError("lr schedule: pct_warmup must be in (0,1)");
  if (!(div_factor > 1.0) || !(final_div_factor > 1.0))
    throw ValidationError("lr schedule: div factors must be > 1");
}

std::int64_t LrSchedule::warmup_steps() const {
  return std::llround(pct_warmup * static_cast<double>(total_steps));
}

namespace {
double cosine_between(double from, double to, double frac) {
  return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}
} // namespace

double lr_at(const LrSchedule &s, std::int64_t step) {
  s.validate();
  if (step < 0 || step > s.total_steps)
    throw ValidationError("lr_at: step " + std::to_string(step) +
                          " outside [0, " + std::to_string(s.total_steps) +
                          "]");
  const double initial = s.max_lr / s.div_factor;
  const double final_lr = s.max_lr / s.final_div_factor;
  const auto up = s.warmup_steps();
  if (step <= up) {
    if (up == 0)
      return s.max_lr;
    return cosine_between(initial, s.max_lr,
                          static_cast<double>(step) / static_cast<double>(up));
  }
  const auto down = s.total_steps - up;
  return cosine_between(s.max_lr, final_lr,
                        static_cast<double>(step - up) /
                            static_cast<double>(down));
}

} // namespace sgti
