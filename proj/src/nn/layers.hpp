#pragma once

#include "tensor/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace sgti::nn {

// Ordered named parameter table. Names are unique; order is registration
// order and defines optimizer and checkpoint layout.
class Params {
public:
  Tensor add(const std::string &name, Tensor t);
  const Tensor &get(const std::string &name) const;
  bool contains(const std::string &name) const;

  const std::vector<std::string> &names() const { return names_; }
  std::vector<Tensor> &tensors() { return tensors_; }
  const std::vector<Tensor> &tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }
  std::int64_t count() const; // scalar parameters

  // Copies values from `other` by name; shapes must match.
  void copy_values_from(const Params &other);

private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

// Deterministic initializer; draws come from raw 64-bit words so results do
// not depend on the standard library's distribution implementations.
class Init {
public:
  explicit Init(std::uint64_t seed) : rng_(seed) {}
  double uniform(); // [0, 1)
  Tensor uniform(Shape shape, float bound);
  // Uniform in +-1/sqrt(fan_in), i.e. variance 1/(3 fan_in).
  Tensor fan_in(Shape shape, std::int64_t fan);

private:
  std::mt19937_64 rng_;
};

struct Linear {
  Tensor weight; // [in, out]
  Tensor bias;   // [out]

  Linear() = default;
  Linear(Params &params, const std::string &name, std::int64_t in,
         std::int64_t out, Init &init, bool with_bias = true);
  Tensor operator()(const Tensor &x) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  LayerNorm(Params &params, const std::string &name, std::int64_t width);
  Tensor operator()(const Tensor &x) const;
};

// [B,C,H,W] -> [B,O,H',W'] with a square kernel.
struct Conv2d {
  Tensor weight; // [O, C, k, k]
  Tensor bias;   // [O]
  int stride = 1;
  int padding = 0;

  Conv2d() = default;
  Conv2d(Params &params, const std::string &name, std::int64_t in,
         std::int64_t out, int kernel, int stride, int padding, Init &init);
  Tensor operator()(const Tensor &x) const;
};

} // namespace sgti::nn
