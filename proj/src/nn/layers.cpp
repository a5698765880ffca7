#include "nn/layers.hpp"

#include "core/error.hpp"
#include "tensor/ops.hpp"

#include <algorithm>
#include <cmath>

namespace sgti::nn {

Tensor Params::add(const std::string &name, Tensor t) {
  if (contains(name))
    throw ShapeError("duplicate parameter name " + name);
  t.set_requires_grad(true);
  names_.push_back(name);
  tensors_.push_back(t);
  return t;
}

bool Params::contains(const std::string &name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const Tensor &Params::get(const std::string &name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end())
    throw ValidationError("unknown parameter " + name);
  return tensors_[it - names_.begin()];
}

std::int64_t Params::count() const {
  std::int64_t n = 0;
  for (const auto &t : tensors_)
    n += t.numel();
  return n;
}

void Params::copy_values_from(const Params &other) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    const auto &src = other.get(names_[i]);
    if (src.shape() != tensors_[i].shape())
      throw ValidationError("parameter " + names_[i] + " has shape " +
                            shape_str(src.shape()) + ", expected " +
                            shape_str(tensors_[i].shape()));
    std::copy(src.data().begin(), src.data().end(),
              tensors_[i].mutable_data().begin());
  }
}

double Init::uniform() {
  return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
}

Tensor Init::uniform(Shape shape, float bound) {
  std::vector<float> v(shape_numel(shape));
  for (auto &x : v)
    x = static_cast<float>((2.0 * uniform() - 1.0) * bound);
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor Init::fan_in(Shape shape, std::int64_t fan) {
  return uniform(std::move(shape),
                 static_cast<float>(1.0 / std::sqrt(static_cast<double>(fan))));
}

Linear::Linear(Params &params, const std::string &name, std::int64_t in,
               std::int64_t out, Init &init, bool with_bias) {
  weight = params.add(name + ".w", init.fan_in({in, out}, in));
  if (with_bias)
    bias = params.add(name + ".b", Tensor::zeros({out}));
}

Tensor Linear::operator()(const Tensor &x) const {
  auto y = ops::matmul(x, weight);
  return bias.defined() ? ops::add_bias(y, bias) : y;
}

LayerNorm::LayerNorm(Params &params, const std::string &name,
                     std::int64_t width) {
  gamma = params.add(name + ".g", Tensor::full({width}, 1.0f));
  beta = params.add(name + ".b", Tensor::zeros({width}));
}

Tensor LayerNorm::operator()(const Tensor &x) const {
  return ops::layer_norm(x, gamma, beta);
}

Conv2d::Conv2d(Params &params, const std::string &name, std::int64_t in,
               std::int64_t out, int kernel, int stride_, int padding_,
               Init &init)
    : stride(stride_), padding(padding_) {
  weight = params.add(name + ".w", init.fan_in({out, in, kernel, kernel},
                                               in * kernel * kernel));
  bias = params.add(name + ".b", Tensor::zeros({out}));
}

Tensor Conv2d::operator()(const Tensor &x) const {
  return ops::conv2d(x, weight, bias, stride, padding);
}

} // namespace sgti::nn
