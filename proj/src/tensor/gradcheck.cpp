#include "tensor/gradcheck.hpp"

#include "core/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace sgti {

namespace {

double projected(const Tensor &out, const std::vector<float> &weights) {
  double s = 0.0;
  const auto v = out.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]))
      throw NumericError("grad_check: non-finite function value");
    s += static_cast<double>(weights[i]) * v[i];
  }
  return s;
}

} // namespace

double grad_check(const TensorFn &fn, std::vector<Tensor> inputs,
                  const GradCheckOptions &options) {
  for (const auto &in : inputs)
    for (float v : in.data())
      if (!std::isfinite(v))
        throw NumericError("grad_check: non-finite input");

  Tensor out = fn(inputs);
  std::mt19937_64 rng(options.projection_seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  std::vector<float> weights(out.numel());
  for (auto &w : weights)
    w = dist(rng);
  projected(out, weights);

  for (auto &in : inputs)
    in.zero_grad();
  backward_with(out, weights);

  double worst = 0.0;
  NoGradGuard no_grad;
  for (auto &in : inputs) {
    if (!in.requires_grad())
      continue;
    std::vector<float> analytic(in.numel(), 0.0f);
    if (in.has_grad())
      std::copy(in.grad().begin(), in.grad().end(), analytic.begin());
    auto values = in.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const float original = values[i];
      values[i] = static_cast<float>(original + options.step);
      const double up_x = values[i];
      const double plus = projected(fn(inputs), weights);
      values[i] = static_cast<float>(original - options.step);
      const double down_x = values[i];
      const double minus = projected(fn(inputs), weights);
      values[i] = original;
      // float rounding makes the realized step slightly uneven
      const double numeric = (plus - minus) / (up_x - down_x);
      const double err = std::fabs(analytic[i] - numeric) /
                         std::max(1.0, std::fabs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

} // namespace sgti
