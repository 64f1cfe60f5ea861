#pragma once

// Hessian-vector products and, more generally, directional derivatives of a
// gradient map. Two mechanisms:
//   central_difference: (g(theta + eps v) - g(theta - eps v)) / (2 eps),
//                       eps = eps0 / max(||v||, delta)
//   exact:              forward-over-reverse; the gradient is evaluated on
//                       Dual scalars seeded with tangent v.

#include <cmath>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "smat/core/dual.hpp"
#include "smat/core/tensor.hpp"

namespace smat {

enum class HvpMode { central_difference, exact };

struct HvpOptions {
  double eps0 = 1e-2;
  double delta = 1e-8;
};

inline const char* to_string(HvpMode m) {
  return m == HvpMode::exact ? "exact" : "central-difference";
}

template <class T>
double l2_norm(std::span<const T> v) {
  double acc = 0.0;
  for (const T& x : v) acc += primal(x) * primal(x);
  return std::sqrt(acc);
}

/// d/dt g(theta + t v) at t = 0, where g maps a parameter vector to a
/// gradient vector. For exact mode `grad_at` must also accept Dual<T> vectors.
template <class T, class GradFn>
std::vector<T> gradient_jvp(GradFn&& grad_at, std::span<const T> theta, std::span<const T> v,
                            HvpMode mode, const HvpOptions& opt = {}) {
  if (theta.size() != v.size()) {
    throw ShapeError("hvp: direction has " + std::to_string(v.size()) + " entries, parameters " +
                     std::to_string(theta.size()));
  }
  std::vector<T> out;
  if (mode == HvpMode::exact) {
    if constexpr (std::is_invocable_v<GradFn, const std::vector<Dual<T>>&>) {
      std::vector<Dual<T>> seeded(theta.size());
      for (std::size_t i = 0; i < theta.size(); ++i) seeded[i] = Dual<T>(theta[i], v[i]);
      const std::vector<Dual<T>> g = grad_at(seeded);
      out.resize(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i].d;
    } else {
      throw Error("exact Hessian-vector product requested for a function without Dual support");
    }
  } else {
    const double norm = l2_norm(v);
    const double eps = opt.eps0 / std::max(norm, opt.delta);
    if (!(eps > 0.0) || !std::isfinite(eps)) {
      throw NumericError("hvp: perturbation scale underflow (eps = " + std::to_string(eps) + ")");
    }
    std::vector<T> plus(theta.begin(), theta.end());
    std::vector<T> minus(theta.begin(), theta.end());
    for (std::size_t i = 0; i < theta.size(); ++i) {
      plus[i] += T(eps) * v[i];
      minus[i] -= T(eps) * v[i];
    }
    const std::vector<T> gp = grad_at(static_cast<const std::vector<T>&>(plus));
    const std::vector<T> gm = grad_at(static_cast<const std::vector<T>&>(minus));
    if (gp.size() != gm.size()) throw ShapeError("hvp: gradient size changed between probes");
    out.resize(gp.size());
    const T inv = T(1.0 / (2.0 * eps));
    for (std::size_t i = 0; i < gp.size(); ++i) out[i] = (gp[i] - gm[i]) * inv;
  }
  for (const T& x : out) {
    if (!finite(x)) throw NumericError(std::string("hvp: non-finite result (") + to_string(mode) + ")");
  }
  return out;
}

/// H v for H the Hessian of `loss_fn` at theta. `loss_fn` maps a leaf tensor
/// of shape (n) to a scalar tensor; it is called with Tensor<T> and, in exact
/// mode, with Tensor<Dual<T>>.
template <class T, class LossFn>
std::vector<T> hvp(LossFn&& loss_fn, std::span<const T> theta, std::span<const T> v, HvpMode mode,
                   const HvpOptions& opt = {}) {
  auto grad_at = [&loss_fn]<class S>(const std::vector<S>& point) -> std::vector<S>
    requires std::is_invocable_v<LossFn&, const Tensor<S>&>
  {
    auto leaf = Tensor<S>::variable({point.size()}, point);
    auto loss = loss_fn(leaf);
    return backward(loss, {leaf}).grads[0];
  };
  return gradient_jvp<T>(grad_at, theta, v, mode, opt);
}

template <class T, class LossFn>
std::vector<T> hvp(LossFn&& loss_fn, const std::vector<T>& theta, const std::vector<T>& v,
                   HvpMode mode, const HvpOptions& opt = {}) {
  return hvp<T>(std::forward<LossFn>(loss_fn), std::span<const T>(theta), std::span<const T>(v),
                mode, opt);
}

}  // namespace smat
