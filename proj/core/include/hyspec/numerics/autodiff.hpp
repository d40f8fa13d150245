#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hyspec/numerics/tensor.hpp"

namespace hyspec::numerics {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const noexcept { return parents.empty(); }

  void accumulate(const Tensor<T>& g);
  void accumulate(Tensor<T>&& g);
};

// Handle to a node of the recorded computation graph. Cheap to copy; copies
// alias the same node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var constant(Tensor<T> v) { return Var(std::move(v), false); }
  static Var leaf(Tensor<T> v) { return Var(std::move(v), true); }

  bool valid() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }
  void zero_grad() { node_->grad = Tensor<T>(); }
  T item() const { return node_->value.item(); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Thread-local switch: when disabled, ops record no graph edges.
class GradMode {
 public:
  static bool enabled() noexcept;
  static void set_enabled(bool e) noexcept;
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Builds the result node of an op. If no input requires a gradient (or grad
// mode is off) the result is a constant and `fn` is dropped.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool any = false;
  if (GradMode::enabled()) {
    for (auto& in : inputs) any = any || in.requires_grad();
  }
  if (any) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (auto& in : inputs) n->parents.push_back(in.node());
    n->backward_fn = std::move(fn);
  }
  return Var<T>(std::move(n));
}

// Reverse sweep from a scalar root. Gradients are accumulated (+=) into every
// node that requires them. Unless `retain_graph`, the graph is released and a
// second call on the same root throws ContractError.
template <typename T>
void backward(const Var<T>& root, bool retain_graph = false);

}  // namespace hyspec::numerics
