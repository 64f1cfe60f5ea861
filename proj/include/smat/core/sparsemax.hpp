#pragma once

// Euclidean projection onto the probability simplex (sparsemax) and its
// Jacobian-vector product.

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "smat/core/tensor.hpp"

namespace smat {

/// argmin_{p in simplex} ||p - z||_2 by sort and threshold. Ties in the sort
/// keep the original index order.
template <class T>
std::vector<T> sparsemax_values(std::span<const T> z) {
  if (z.empty()) throw ShapeError("sparsemax of empty vector");
  for (const T& x : z) {
    if (!finite(x)) throw NumericError("sparsemax: non-finite input");
  }
  std::vector<std::size_t> order(z.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });
  T cumsum(0);
  T support_sum(0);
  std::size_t k = 0;
  for (std::size_t j = 0; j < order.size(); ++j) {
    const T zj = z[order[j]];
    cumsum += zj;
    if (T(1) + T(static_cast<double>(j + 1)) * zj > cumsum) {
      k = j + 1;
      support_sum = cumsum;
    }
  }
  const T tau = (support_sum - T(1)) / T(static_cast<double>(k));
  std::vector<T> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const T d = z[i] - tau;
    p[i] = d > T(0) ? d : T(0);
  }
  return p;
}

template <class T>
std::vector<T> sparsemax_values(const std::vector<T>& z) {
  return sparsemax_values<T>(std::span<const T>(z));
}

/// J^T u for J = Diag(m) - m m^T / |S|, m the support indicator of p.
template <class T>
std::vector<T> sparsemax_backward(std::span<const T> p, std::span<const T> upstream) {
  if (p.size() != upstream.size()) throw ShapeError("sparsemax_backward: size mismatch");
  std::size_t support = 0;
  T u_sum(0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > T(0)) {
      ++support;
      u_sum += upstream[i];
    }
  }
  if (support == 0) throw NumericError("sparsemax_backward: empty support");
  const T mean = u_sum / T(static_cast<double>(support));
  std::vector<T> out(p.size(), T(0));
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > T(0)) out[i] = upstream[i] - mean;
  }
  return out;
}

template <class T>
std::vector<T> sparsemax_backward(const std::vector<T>& p, const std::vector<T>& upstream) {
  return sparsemax_backward<T>(std::span<const T>(p), std::span<const T>(upstream));
}

template <class T>
Tensor<T> sparsemax(const Tensor<T>& z) {
  if (z.rank() != 1) throw ShapeError("sparsemax expects a vector, got " + shape_str(z.shape()));
  auto p = sparsemax_values(z.values());
  return make_op<T>("sparsemax", z.shape(), std::move(p), {z}, [](Node<T>& self) {
    auto jt = sparsemax_backward<T>(std::span<const T>(self.value), std::span<const T>(self.grad));
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += jt[i];
  });
}

}  // namespace smat
