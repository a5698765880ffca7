#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sgti {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape &shape);
std::string shape_str(const Shape &shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad; // empty when absent
  bool requires_grad = false;
  const char *op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node &)> backward;

  bool is_leaf() const { return !backward; }
  // Allocates a zero gradient buffer on first use.
  std::span<float> grad_buffer();
};

} // namespace detail

// Dense row-major float32 tensor. Copies share the underlying node, so a
// Tensor behaves like a handle; use clone() for a deep copy.
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values,
                     bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape &shape() const { return node_->shape; }
  std::int64_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::int64_t numel() const {
    return static_cast<std::int64_t>(node_->data.size());
  }

  std::span<const float> data() const { return node_->data; }
  // Mutating data of a tensor that is already on a tape invalidates that tape.
  std::span<float> mutable_data() { return node_->data; }
  float item() const;
  float at(std::int64_t flat_index) const { return node_->data.at(flat_index); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const float> grad() const { return node_->grad; }
  std::span<float> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();
  const char *op() const { return node_->op; }

  Tensor clone() const;
  // Same values, no tape connection.
  Tensor detach() const;

  const std::shared_ptr<detail::Node> &node() const { return node_; }

private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Builds an op output; the node is put on the tape only when grad mode is on
// and at least one parent requires grad.
Tensor make_op_result(Shape shape, std::vector<float> data, const char *op,
                      std::initializer_list<Tensor> parents,
                      std::function<void(detail::Node &)> backward);
Tensor make_op_result(Shape shape, std::vector<float> data, const char *op,
                      const std::vector<Tensor> &parents,
                      std::function<void(detail::Node &)> backward);

// Reverse pass from a scalar loss. Leaf grads accumulate across calls;
// intermediate grads are recomputed from scratch on every call.
void backward(const Tensor &loss);
// Same as backward() but seeds the output gradient explicitly.
void backward_with(const Tensor &output, std::span<const float> seed);

bool grad_enabled();

class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
  bool previous_;
};

} // namespace sgti
