#include "tensor/tensor.hpp"

#include "core/error.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace sgti {

namespace {
thread_local bool g_grad_enabled = true;
} // namespace

std::int64_t shape_numel(const Shape &shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0)
      throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::span<float> detail::Node::grad_buffer() {
  if (grad.empty())
    grad.assign(data.size(), 0.0f);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<float> values,
                    bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

float Tensor::item() const {
  if (numel() != 1)
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty())
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

Tensor Tensor::clone() const {
  return from(node_->shape, node_->data, node_->requires_grad);
}

Tensor Tensor::detach() const { return from(node_->shape, node_->data, false); }

namespace {

template <typename Range>
Tensor build_result(Shape shape, std::vector<float> data, const char *op,
                    const Range &parents,
                    std::function<void(detail::Node &)> backward_fn) {
  Tensor out = Tensor::from(std::move(shape), std::move(data), false);
  if (!g_grad_enabled)
    return out;
  bool any = false;
  for (const Tensor &p : parents)
    any = any || (p.defined() && p.requires_grad());
  if (!any)
    return out;
  auto &node = *out.node();
  node.requires_grad = true;
  node.op = op;
  node.backward = std::move(backward_fn);
  for (const Tensor &p : parents)
    node.parents.push_back(p.node());
  return out;
}

std::vector<detail::Node *> topo_order(detail::Node *root) {
  std::vector<detail::Node *> order;
  std::unordered_set<detail::Node *> seen;
  std::vector<std::pair<detail::Node *, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto &[node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node *p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second)
        stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order; // parents before children
}

} // namespace

Tensor make_op_result(Shape shape, std::vector<float> data, const char *op,
                      std::initializer_list<Tensor> parents,
                      std::function<void(detail::Node &)> backward_fn) {
  return build_result(std::move(shape), std::move(data), op, parents,
                      std::move(backward_fn));
}

Tensor make_op_result(Shape shape, std::vector<float> data, const char *op,
                      const std::vector<Tensor> &parents,
                      std::function<void(detail::Node &)> backward_fn) {
  return build_result(std::move(shape), std::move(data), op, parents,
                      std::move(backward_fn));
}

void backward_with(const Tensor &output, std::span<const float> seed) {
  if (!output.defined() || !output.requires_grad())
    throw ShapeError("backward: tensor is not on the tape (op '" +
                     std::string(output.defined() ? output.op() : "null") +
                     "')");
  if (static_cast<std::int64_t>(seed.size()) != output.numel())
    throw ShapeError("backward: seed has " + std::to_string(seed.size()) +
                     " values for output of shape " +
                     shape_str(output.shape()));
  auto order = topo_order(output.node().get());
  for (auto *n : order)
    if (!n->is_leaf())
      n->grad.assign(n->data.size(), 0.0f);
  auto g = output.node()->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if (!(*it)->is_leaf())
      (*it)->backward(**it);
}

void backward(const Tensor &loss) {
  if (loss.defined() && loss.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " +
                     shape_str(loss.shape()));
  const float one = 1.0f;
  backward_with(loss, std::span<const float>(&one, 1));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

} // namespace sgti
