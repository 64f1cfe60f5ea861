#pragma once

// Dense row-major tensors with a dynamically built reverse-mode tape.
//
// Every Tensor owns a shared node. Operations on tensors that require
// gradients record their parents and a backward closure; tensors that do not
// require gradients carry values only. There is no global tape, so graphs
// built on different threads never interact.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "smat/core/dual.hpp"
#include "smat/core/error.hpp"

namespace smat {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";
  bool requires_grad = false;

  void accumulate(std::size_t i, T g) {
    if (grad.empty()) grad.assign(value.size(), T(0));
    grad[i] += g;
  }
  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <class T>
class Tensor {
 public:
  using scalar_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor make(Shape shape, std::vector<T> values, bool requires_grad) {
    if (shape_size(shape) != values.size()) {
      throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    }
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor constant(Shape shape, std::vector<T> values) {
    return make(std::move(shape), std::move(values), false);
  }
  /// Leaf that participates in differentiation.
  static Tensor variable(Shape shape, std::vector<T> values) {
    return make(std::move(shape), std::move(values), true);
  }
  static Tensor scalar(T v) { return constant({}, {v}); }
  static Tensor zeros(Shape shape) {
    const std::size_t n = shape_size(shape);
    return constant(std::move(shape), std::vector<T>(n, T(0)));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::span<const T> values() const { return node_->value; }
  const T& operator[](std::size_t i) const { return node_->value[i]; }
  T item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds the output of an operation. The backward closure and the parent
/// links are only kept when some parent requires a gradient.
template <class T, class Backward>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> value,
                  const std::vector<Tensor<T>>& parents, Backward&& backward) {
  for (std::size_t i = 0; i < value.size(); ++i) {
    if (!finite(value[i])) {
      throw NumericError(std::string("non-finite value produced by ") + op + " at index " +
                         std::to_string(i));
    }
  }
  auto out = Tensor<T>::make(std::move(shape), std::move(value), false);
  Node<T>* n = out.node();
  n->op = op;
  for (const auto& p : parents) {
    if (p.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    for (const auto& p : parents) n->parents.push_back(p.node_ptr());
    n->backward_fn = std::forward<Backward>(backward);
  }
  return out;
}

template <class T, class Backward>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> value,
                  std::initializer_list<Tensor<T>> parents, Backward&& backward) {
  return make_op(op, std::move(shape), std::move(value), std::vector<Tensor<T>>(parents),
                 std::forward<Backward>(backward));
}

/// Nodes reachable from `root` that require gradients, parents before children.
template <class T>
std::vector<Node<T>*> topological_order(Node<T>* root) {
  std::vector<Node<T>*> order;
  if (root == nullptr || !root->requires_grad) return order;
  std::unordered_map<Node<T>*, bool> done;  // false: on stack, true: emitted
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root, 0}};
  done[root] = false;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (!p->requires_grad || done.count(p)) continue;
      done[p] = false;
      stack.emplace_back(p, 0);
    } else {
      done[node] = true;
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <class T>
struct GradientMap {
  std::vector<std::vector<T>> grads;  // aligned with the `wrt` list
  std::vector<bool> reachable;

  const std::vector<T>& operator[](std::size_t i) const { return grads.at(i); }
  std::size_t size() const { return grads.size(); }
};

/// Exact reverse-mode gradients of a scalar `loss` with respect to `wrt`.
/// Unreachable parameters get a zero gradient and reachable[i] == false.
/// The tape is left intact, so backward may be called again.
template <class T>
GradientMap<T> backward(const Tensor<T>& loss, std::span<const Tensor<T>> wrt) {
  if (loss.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  auto order = topological_order(loss.node());
  for (Node<T>* n : order) n->grad.assign(n->value.size(), T(0));
  for (const auto& w : wrt) {
    if (w.requires_grad()) w.node()->grad.assign(w.size(), T(0));
  }
  if (!order.empty()) {
    loss.node()->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      for (const T& g : n->grad) {
        if (!finite(g)) {
          throw NumericError(std::string("non-finite gradient at node ") + n->op);
        }
      }
      if (n->backward_fn) n->backward_fn(*n);
    }
  }
  const std::unordered_set<Node<T>*> visited(order.begin(), order.end());
  GradientMap<T> out;
  for (const auto& w : wrt) {
    const bool reached = w.requires_grad() && visited.count(w.node()) > 0;
    out.reachable.push_back(reached);
    if (reached) {
      out.grads.push_back(w.node()->grad);
    } else {
      out.grads.emplace_back(w.size(), T(0));
    }
  }
  return out;
}

template <class T>
GradientMap<T> backward(const Tensor<T>& loss, const std::vector<Tensor<T>>& wrt) {
  return backward(loss, std::span<const Tensor<T>>(wrt));
}

template <class T>
GradientMap<T> backward(const Tensor<T>& loss, std::initializer_list<Tensor<T>> wrt) {
  std::vector<Tensor<T>> v(wrt);
  return backward(loss, std::span<const Tensor<T>>(v));
}

/// Converts values between scalar types (float <-> double <-> Dual).
template <class To, class From>
std::vector<To> cast_values(std::span<const From> in) {
  std::vector<To> out;
  out.reserve(in.size());
  for (const From& x : in) {
    if constexpr (std::is_same_v<To, From>) {
      out.push_back(x);
    } else if constexpr (is_dual_v<From> && !is_dual_v<To>) {
      out.push_back(static_cast<To>(primal(x)));
    } else {
      out.push_back(To(static_cast<double>(primal(x))));
    }
  }
  return out;
}

template <class To, class From>
std::vector<To> cast_values(const std::vector<From>& in) {
  return cast_values<To, From>(std::span<const From>(in));
}

}  // namespace smat
