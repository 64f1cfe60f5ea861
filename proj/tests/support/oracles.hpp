#pragma once

// Independent reference computations used by the unit tests and the
// acceptance binary. Nothing here calls the autodiff backward pass.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "smat/smat.hpp"

namespace smat::oracle {

/// ||a - b||_2 / max(||a||_2, ||b||_2, floor).
inline double rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

template <class U>
std::vector<double> to_double(const std::vector<U>& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(primal(v[i]));
  return out;
}

/// Central differences with step h * max(1, |x_i|).
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h = 1e-3) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double step = h * std::max(1.0, std::abs(x[i]));
    const double keep = x[i];
    x[i] = keep + step;
    const double fp = f(x);
    x[i] = keep - step;
    const double fm = f(x);
    x[i] = keep;
    g[i] = (fp - fm) / (2 * step);
  }
  return g;
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

/// Minimizer of ||p - z|| over a grid on the simplex (H = 2 or 3).
inline std::vector<double> sparsemax_grid(const std::vector<double>& z, double step = 1e-3) {
  const auto n = static_cast<int>(std::lround(1.0 / step));
  std::vector<double> best;
  double best_d = 1e300;
  auto consider = [&](const std::vector<double>& p) {
    double d = 0;
    for (std::size_t i = 0; i < p.size(); ++i) d += (p[i] - z[i]) * (p[i] - z[i]);
    if (d < best_d) {
      best_d = d;
      best = p;
    }
  };
  if (z.size() == 2) {
    for (int i = 0; i <= n; ++i) consider({i * step, 1.0 - i * step});
  } else if (z.size() == 3) {
    for (int i = 0; i <= n; ++i)
      for (int j = 0; i + j <= n; ++j) consider({i * step, j * step, 1.0 - (i + j) * step});
  } else {
    throw Error("grid oracle supports H = 2 or 3");
  }
  return best;
}

inline std::vector<std::size_t> support_of(const std::vector<double>& p) {
  std::vector<std::size_t> s;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0) s.push_back(i);
  return s;
}

/// Composed outer objective as a function of phi_T alone:
/// L_sim(theta - lr_inner grad_theta L_student(theta, phi_S, phi_T)) on the outer batch.
/// The inner gradient uses autodiff (it is a first-order quantity); the
/// dependence on phi_T is what the caller differentiates numerically.
template <class T>
double composed_outer_loss(const TrainState<T>& state, const std::vector<T>& phi_t,
                           std::span<const std::size_t> train_batch, std::span<const std::size_t> outer_batch,
                           const std::vector<TeacherView<T>>& train_views,
                           const std::vector<TeacherView<T>>& outer_views, const TrainConfig& cfg) {
  auto g = detail::student_gradients<T>(state.student, state.phi_s, phi_t, train_views, train_batch, cfg);
  std::vector<T> pilot = state.student.parameters();
  for (std::size_t i = 0; i < pilot.size(); ++i) pilot[i] -= T(cfg.lr_inner) * g.theta[i];
  auto model = state.student.template with_parameters<T>(pilot);
  auto bound = model.bind(false);
  auto ps = Tensor<T>::constant({state.phi_s.size()}, state.phi_s);
  auto pt = Tensor<T>::constant({phi_t.size()}, phi_t);
  return primal(student_loss(model, bound, ps, pt, outer_views, outer_batch, cfg, false).total.item());
}

/// Per-coordinate central differences of composed_outer_loss in phi_T.
template <class T>
std::vector<double> brute_force_hypergradient(const TrainState<T>& state, std::span<const std::size_t> train_batch,
                                              std::span<const std::size_t> outer_batch,
                                              const std::vector<TeacherView<T>>& train_views,
                                              const std::vector<TeacherView<T>>& outer_views,
                                              const TrainConfig& cfg, double h) {
  std::vector<double> out(state.phi_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto plus = state.phi_t, minus = state.phi_t;
    plus[i] += T(h);
    minus[i] -= T(h);
    const double fp = composed_outer_loss(state, plus, train_batch, outer_batch, train_views, outer_views, cfg);
    const double fm = composed_outer_loss(state, minus, train_batch, outer_batch, train_views, outer_views, cfg);
    out[i] = (fp - fm) / (2 * h);
  }
  return out;
}

/// Result of one simulated tournament: recovered mu and latent skills.
struct TournamentOutcome {
  std::vector<double> latent;
  std::vector<double> mu;
};

/// Methods with latent skills play `rounds` rankings; each ranking orders the
/// methods by latent + N(0, noise) performance.
inline TournamentOutcome simulate_tournament(std::mt19937_64& rng, const std::vector<double>& latent,
                                             std::size_t rounds, double noise, SkillParams params = {}) {
  SkillRatings r(params);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < latent.size(); ++i) {
    names.push_back("m" + std::to_string(i));
    r.add(names.back());
  }
  std::normal_distribution<double> perf(0.0, noise);
  for (std::size_t k = 0; k < rounds; ++k) {
    std::vector<std::pair<double, std::size_t>> p;
    for (std::size_t i = 0; i < latent.size(); ++i) p.emplace_back(latent[i] + perf(rng), i);
    std::sort(p.begin(), p.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    Ranking rk;
    for (const auto& [v, i] : p) rk.push_back({names[i]});
    r.update(rk);
  }
  TournamentOutcome out{latent, {}};
  for (const auto& n : names) out.mu.push_back(r.at(n).mu);
  return out;
}

}  // namespace smat::oracle
