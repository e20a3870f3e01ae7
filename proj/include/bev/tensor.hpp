#pragma once

// Reverse-mode automatic differentiation over dense NCHW tensors.
//
// A Tensor is a shared handle to a graph node. Operations create new nodes
// that remember their parents and a backward rule; Tensor::backward() orders
// the reachable nodes topologically and runs each rule exactly once, in
// reverse order. Leaf gradients accumulate until zero_grad().

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "bev/error.hpp"

namespace bev {

struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  Eigen::Index size() const { return Eigen::Index(n) * c * h * w; }
  Eigen::Index plane() const { return Eigen::Index(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const {
    return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
           std::to_string(w) + ")";
  }
};

inline std::ostream& operator<<(std::ostream& os, const Shape& s) { return os << s.str(); }

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

template <class Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  struct Node {
    Shape shape;
    Array value;
    Array grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    /// Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward;

    Array& ensure_grad() {
      if (grad.size() != value.size()) grad = Array::Zero(value.size());
      return grad;
    }
  };

  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return Tensor(shape, Array::Zero(shape.size()), requires_grad);
  }

  static Tensor from(const Shape& shape, Array values, bool requires_grad = false) {
    if (values.size() != shape.size()) {
      throw Error(ErrorKind::Shape, "value count " + std::to_string(values.size()) + " does not match shape " +
                                        shape.str());
    }
    return Tensor(shape, std::move(values), requires_grad);
  }

  static Tensor scalar(Scalar v, bool requires_grad = false) {
    Array a(1);
    a(0) = v;
    return Tensor(Shape{}, std::move(a), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Array& value() { return node_->value; }
  const Array& value() const { return node_->value; }
  Scalar item() const { return node_->value(0); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Gradient slot; zero-sized until a backward pass reaches this node.
  const Array& grad() const { return node_->grad; }
  Array& grad() { return node_->grad; }
  void zero_grad() {
    if (node_->grad.size() > 0) node_->grad.setZero();
  }

  Node& node() { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  /// Back-propagates from a scalar (or with an explicit seed of matching size).
  void backward() const {
    if (node_->shape.size() != 1) throw Error(ErrorKind::Shape, "backward() without seed needs a scalar");
    backward(Array::Ones(1));
  }

  void backward(const Array& seed) const {
    if (seed.size() != node_->value.size()) throw Error(ErrorKind::Shape, "backward seed has wrong size");
    std::vector<Node*> order = topological_order();
    node_->ensure_grad() += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node& n = **it;
      if (n.backward && n.grad.size() == n.value.size()) n.backward(n);
    }
  }

  /// Creates a recorded result node. The backward rule is only kept when
  /// recording is enabled and some parent needs a gradient.
  static Tensor make_result(const Shape& shape, Array value, std::vector<Tensor> parents,
                            std::function<void(Node&)> backward) {
    Tensor out(shape, std::move(value), false);
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& p : parents) any = any || p.node_->requires_grad;
    if (!any) return out;
    out.node_->requires_grad = true;
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward = std::move(backward);
    return out;
  }

 private:
  Tensor(const Shape& shape, Array values, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->shape = shape;
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  std::vector<Node*> topological_order() const {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // Iterative post-order DFS; pairs of (node, next parent index).
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    return order;
  }

  std::shared_ptr<Node> node_;
};

}  // namespace bev
