#include "hyspec/numerics/autodiff.hpp"

#include <unordered_set>

namespace hyspec::numerics {
namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() noexcept { return g_grad_enabled; }
void GradMode::set_enabled(bool e) noexcept { g_grad_enabled = e; }

template <typename T>
void Node<T>::accumulate(const Tensor<T>& g) {
  if (grad.empty()) {
    grad = g;
    return;
  }
  if (!grad.same_shape(g)) {
    throw DimensionError("gradient shape " + shape_str(g.shape()) + " does not match " +
                         shape_str(grad.shape()));
  }
  auto* d = grad.data();
  const auto* s = g.data();
  for (std::int64_t i = 0, n = grad.numel(); i < n; ++i) d[i] += s[i];
}

template <typename T>
void Node<T>::accumulate(Tensor<T>&& g) {
  if (grad.empty()) {
    grad = std::move(g);
    return;
  }
  accumulate(static_cast<const Tensor<T>&>(g));
}

template <typename T>
void backward(const Var<T>& root, bool retain_graph) {
  if (!root.valid()) throw ContractError("backward on an empty variable");
  if (root.numel() != 1) {
    throw ContractError("backward requires a scalar root, got shape " + shape_str(root.shape()));
  }
  Node<T>* r = root.node().get();
  if (r->consumed) throw ContractError("graph already consumed by a previous backward");
  if (!r->requires_grad) return;

  // Iterative post-order DFS gives a topological order; each node once.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(r, 0);
  seen.insert(r);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  r->accumulate(Tensor<T>(r->value.shape(), T(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Interior gradients are transient; only leaves keep theirs.
  for (Node<T>* n : order) {
    if (n->is_leaf()) continue;
    n->grad = Tensor<T>();
    if (!retain_graph) {
      n->backward_fn = nullptr;
      n->parents.clear();
      n->consumed = true;
    }
  }
}

template struct Node<float>;
template struct Node<double>;
template void backward<float>(const Var<float>&, bool);
template void backward<double>(const Var<double>&, bool);

}  // namespace hyspec::numerics
