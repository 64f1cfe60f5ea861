#pragma once

#include <cmath>
#include <string>

#include "smat/core/ops.hpp"

namespace smat {

inline constexpr double kKlFloor = 1e-8;

/// KL(p || q) = sum_i p_i log(p_i / q_i), with 0 log 0 = 0 and both
/// arguments floored at `floor` inside the logarithm.
template <class T>
Tensor<T> kl_divergence(const Tensor<T>& p, const Tensor<T>& q, double floor = kKlFloor) {
  using std::log;
  if (p.size() != q.size()) {
    throw ShapeError("kl_divergence: dimension mismatch " + std::to_string(p.size()) + " vs " +
                     std::to_string(q.size()));
  }
  const T eps(floor);
  T acc(0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > T(0)) {
      const T pi = p[i] > eps ? p[i] : eps;
      const T qi = q[i] > eps ? q[i] : eps;
      acc += p[i] * (log(pi) - log(qi));
    }
  }
  return make_op<T>("kl_divergence", {}, {acc}, {p, q}, [eps](Node<T>& self) {
    using std::log;
    Node<T>& pp = *self.parents[0];
    Node<T>& pq = *self.parents[1];
    const T g = self.grad[0];
    if (pp.requires_grad) {
      auto& gp = pp.grad_buffer();
      for (std::size_t i = 0; i < gp.size(); ++i) {
        const T pi = pp.value[i] > eps ? pp.value[i] : eps;
        const T qi = pq.value[i] > eps ? pq.value[i] : eps;
        gp[i] += g * (log(pi) - log(qi) + T(1));
      }
    }
    if (pq.requires_grad) {
      auto& gq = pq.grad_buffer();
      for (std::size_t i = 0; i < gq.size(); ++i) {
        if (pq.value[i] > eps) gq[i] -= g * pp.value[i] / pq.value[i];
      }
    }
  });
}

/// -log softmax(logits)[target].
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t target) {
  if (target >= logits.size()) {
    throw ShapeError("cross_entropy: target " + std::to_string(target) + " out of range for " +
                     std::to_string(logits.size()) + " classes");
  }
  return neg(index(log_softmax(logits), target));
}

/// -sum_c target_c log softmax(logits)_c for a target distribution.
template <class T>
Tensor<T> cross_entropy_soft(const Tensor<T>& logits, const Tensor<T>& target) {
  if (logits.size() != target.size()) throw ShapeError("cross_entropy_soft: dimension mismatch");
  return neg(sum(mul(log_softmax(logits), target)));
}

/// Squared error (pred - target)^2 averaged over elements.
template <class T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.size() != target.size()) throw ShapeError("mse: dimension mismatch");
  const auto d = sub(reshape(pred, target.shape()), target);
  return mean(mul(d, d));
}

}  // namespace smat
