#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "oaug/core/tensor.hpp"

namespace oaug {

// Reverse-mode autodiff on a dynamically built DAG. Each forward op returns a
// Var holding the value, its parents, and a closure that pushes the node's
// gradient into the parents. Graphs are rebuilt per evaluation; parameters are
// persistent leaf nodes whose values the optimizers mutate between graphs.
//
// Contract: do not mutate a leaf's value between building a graph and calling
// backward() on it — closures read parent values at backward time.

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor val;
  Tensor grad;  // allocated by backward(); same shape as val
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;  // null for leaves and constants
};

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables taping in scope; forwards run value-only (eval passes).
struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Trainable leaf.
inline Var make_leaf(Tensor v) {
  auto n = std::make_shared<Node>();
  n->val = std::move(v);
  n->requires_grad = true;
  return n;
}

/// Non-trainable input.
inline Var make_const(Tensor v) {
  auto n = std::make_shared<Node>();
  n->val = std::move(v);
  return n;
}

inline Var make_op(Tensor val, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  bool rg = false;
  if (grad_enabled()) {
    for (const auto& p : parents)
      if (p && p->requires_grad) {
        rg = true;
        break;
      }
  }
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

/// Accumulate `delta`-style contributions inside backprop closures.
inline void add_grad(const Var& p, const std::function<void(Tensor&)>& accumulate) {
  if (p && p->requires_grad) accumulate(p->grad);
}

/// Runs reverse accumulation from a scalar root. Gradients of every node
/// reachable through requires_grad parents are (re)initialized to zero first,
/// so repeated backward calls on overlapping graphs do not leak contributions
/// across calls. Snapshot any gradient you need before the next backward.
inline void backward(const Var& root) {
  if (!root) throw std::invalid_argument("backward: null root");
  if (root->val.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
  if (!root->requires_grad) return;

  // Iterative postorder DFS over requires_grad subgraph.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next].get();
      ++next;
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->grad.same_shape(n->val))
      n->grad.fill(0.0);
    else
      n->grad = Tensor::zeros(n->val.shape());
  }
  root->grad.fill(1.0);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

}  // namespace oaug
