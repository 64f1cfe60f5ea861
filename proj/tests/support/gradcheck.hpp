#pragma once

// Finite-difference gradient checks for every differentiable primitive and a
// tiny end-to-end model loss, all in double precision.

#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"

namespace smat::gradcheck {

using TD = Tensor<double>;
using Inputs = std::vector<TD>;

struct PrimitiveCase {
  std::string name;
  std::vector<Shape> shapes;
  std::function<TD(const Inputs&)> fn;
  double lo = -1.0;
  double hi = 1.0;
  double h = 1e-3;
};

inline std::vector<PrimitiveCase> primitive_cases() {
  std::vector<PrimitiveCase> c;
  c.push_back({"add", {{3, 2}, {3, 2}}, [](const Inputs& x) { return add(x[0], x[1]); }});
  c.push_back({"sub", {{4}, {4}}, [](const Inputs& x) { return sub(x[0], x[1]); }});
  c.push_back({"mul", {{2, 3}, {2, 3}}, [](const Inputs& x) { return mul(x[0], x[1]); }});
  c.push_back({"scale", {{5}}, [](const Inputs& x) { return scale(x[0], 1.7); }});
  c.push_back({"neg", {{5}}, [](const Inputs& x) { return neg(x[0]); }});
  c.push_back({"relu", {{6}}, [](const Inputs& x) { return relu(x[0]); }, -1.0, 1.0, 1e-5});
  c.push_back({"exp", {{4}}, [](const Inputs& x) { return exp(x[0]); }});
  c.push_back({"log", {{4}}, [](const Inputs& x) { return log(x[0]); }, 0.5, 2.0});
  c.push_back({"clamp", {{6}}, [](const Inputs& x) { return clamp(x[0], -0.5, 0.5); }, -1.0, 1.0, 1e-5});
  c.push_back({"reshape", {{2, 3}}, [](const Inputs& x) { return reshape(x[0], {3, 2}); }});
  c.push_back({"add_row", {{3, 4}, {4}}, [](const Inputs& x) { return add_row(x[0], x[1]); }});
  c.push_back({"mul_row", {{3, 4}, {4}}, [](const Inputs& x) { return mul_row(x[0], x[1]); }});
  c.push_back({"matmul", {{3, 4}, {4, 2}}, [](const Inputs& x) { return matmul(x[0], x[1]); }});
  c.push_back({"matmul_nt", {{3, 4}, {5, 4}}, [](const Inputs& x) { return matmul_nt(x[0], x[1]); }});
  c.push_back({"slice_cols", {{3, 5}}, [](const Inputs& x) { return slice_cols(x[0], 1, 3); }});
  c.push_back({"slice_rows", {{4, 3}}, [](const Inputs& x) { return slice_rows(x[0], 1, 2); }});
  c.push_back({"concat_cols", {{3, 2}, {3, 3}}, [](const Inputs& x) { return concat_cols<double>({x[0], x[1]}); }});
  c.push_back({"stack_rows", {{4}, {4}, {4}}, [](const Inputs& x) { return stack_rows<double>({x[0], x[1], x[2]}); }});
  c.push_back({"gather_rows", {{5, 3}}, [](const Inputs& x) { return gather_rows(x[0], {4, 0, 4, 2}); }});
  c.push_back({"mean_rows", {{4, 3}}, [](const Inputs& x) { return mean_rows(x[0]); }});
  c.push_back({"sum", {{3, 3}}, [](const Inputs& x) { return sum(x[0]); }});
  c.push_back({"mean", {{7}}, [](const Inputs& x) { return mean(x[0]); }});
  c.push_back({"add_all", {{}, {}, {}}, [](const Inputs& x) { return add_all<double>({x[0], x[1], x[2]}); }});
  c.push_back({"index", {{5}}, [](const Inputs& x) { return index(x[0], 3); }});
  c.push_back({"softmax", {{5}}, [](const Inputs& x) { return softmax(x[0]); }, -2.0, 2.0});
  c.push_back({"softmax_rows", {{3, 4}}, [](const Inputs& x) { return softmax_rows(x[0]); }, -2.0, 2.0});
  c.push_back({"log_softmax", {{5}}, [](const Inputs& x) { return log_softmax(x[0]); }, -2.0, 2.0});
  c.push_back({"layer_norm_rows", {{3, 6}}, [](const Inputs& x) { return layer_norm_rows(x[0]); }});
  c.push_back({"sparsemax", {{4}}, [](const Inputs& x) { return sparsemax(x[0]); }, -1.0, 1.0, 1e-5});
  c.push_back({"kl_divergence", {{4}, {4}}, [](const Inputs& x) { return kl_divergence(x[0], x[1]); }, 0.1, 1.0});
  c.push_back({"cross_entropy", {{4}}, [](const Inputs& x) { return cross_entropy(x[0], 2); }, -2.0, 2.0});
  c.push_back({"cross_entropy_soft",
               {{4}},
               [](const Inputs& x) { return cross_entropy_soft(x[0], TD::constant({4}, {0.1, 0.2, 0.3, 0.4})); },
               -2.0,
               2.0});
  c.push_back({"mse", {{3}, {3}}, [](const Inputs& x) { return mse(x[0], x[1]); }});
  return c;
}

struct CheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t points = 0;
};

/// True when the sparsemax support of every probe point equals that of x.
inline bool sparsemax_support_stable(const std::vector<double>& z, double h) {
  const auto base = oracle::support_of(sparsemax_values(z));
  for (std::size_t i = 0; i < z.size(); ++i) {
    for (double s : {h, -h}) {
      auto p = z;
      p[i] += s * std::max(1.0, std::abs(z[i]));
      if (oracle::support_of(sparsemax_values(p)) != base) return false;
    }
  }
  return true;
}

/// Checks d/dx sum(W * f(x)) with a random fixed weighting W at `points`
/// seeded random inputs.
inline CheckResult check_primitive(const PrimitiveCase& pc, std::uint64_t seed, std::size_t points = 10) {
  std::mt19937_64 rng(seed);
  CheckResult res{pc.name, 0.0, 0};
  std::size_t attempts = 0;
  while (res.points < points) {
    if (++attempts > 100 * points) throw Error("could not sample stable points for " + pc.name);
    std::vector<std::vector<double>> xs;
    std::vector<double> flat;
    for (const auto& s : pc.shapes) {
      xs.push_back(oracle::random_vector(rng, shape_size(s), pc.lo, pc.hi));
      flat.insert(flat.end(), xs.back().begin(), xs.back().end());
    }
    if (pc.name == "sparsemax" && !sparsemax_support_stable(xs[0], pc.h)) continue;
    if (pc.name == "relu" || pc.name == "clamp") {
      bool near_kink = false;
      for (double v : flat) near_kink |= std::abs(v) < 1e-3 || std::abs(std::abs(v) - 0.5) < 1e-3;
      if (near_kink) continue;
    }
    Inputs probe;
    for (std::size_t k = 0; k < xs.size(); ++k) probe.push_back(TD::constant(pc.shapes[k], xs[k]));
    const Shape out_shape = pc.fn(probe).shape();
    const auto w = oracle::random_vector(rng, shape_size(out_shape));
    auto objective = [&](const Inputs& in) { return sum(mul(pc.fn(in), TD::constant(out_shape, w))); };

    Inputs leaves;
    for (std::size_t k = 0; k < xs.size(); ++k) leaves.push_back(TD::variable(pc.shapes[k], xs[k]));
    const auto g = backward(objective(leaves), leaves);
    std::vector<double> analytic;
    for (std::size_t k = 0; k < g.size(); ++k) analytic.insert(analytic.end(), g[k].begin(), g[k].end());

    auto f = [&](const std::vector<double>& v) {
      Inputs in;
      std::size_t off = 0;
      for (const auto& s : pc.shapes) {
        const std::size_t n = shape_size(s);
        in.push_back(TD::constant(s, std::vector<double>(v.begin() + off, v.begin() + off + n)));
        off += n;
      }
      return objective(in).item();
    };
    const auto numeric = oracle::fd_gradient(f, flat, pc.h);
    res.max_rel_error = std::max(res.max_rel_error, oracle::rel_error(analytic, numeric));
    ++res.points;
  }
  return res;
}

/// Tiny model used by end-to-end and hypergradient checks: L = 4, two layers
/// of two heads, model width 8.
inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.vocab_size = 12;
  c.max_len = 4;
  c.num_layers = 2;
  c.heads_per_layer = 2;
  c.model_dim = 8;
  c.head_dim = 4;
  c.ffn_dim = 16;
  return c;
}

inline Dataset tiny_dataset(std::size_t n, std::uint64_t seed) {
  auto spec = SyntheticSpec::symmetric(2, 12, seed);
  spec.min_len = 4;
  spec.max_len = 4;
  spec.noise_ratio = 0.5;
  return generate_synthetic(spec, n);
}

/// ReLU activation pattern of `model` with weights `theta` over `inputs`.
inline std::vector<std::uint8_t> ffn_pattern(const MiniTransformer<double>& model, const std::vector<double>& theta,
                                             const std::vector<TokenIds>& inputs) {
  const auto m = model.with_parameters<double>(theta);
  std::vector<std::uint8_t> out;
  for (const auto& ids : inputs) {
    const auto r = m.forward(ids, true);
    out.insert(out.end(), r.ffn_active.begin(), r.ffn_active.end());
  }
  return out;
}

inline std::vector<TokenIds> token_lists(const Dataset& data) {
  std::vector<TokenIds> out;
  for (const auto& ex : data.examples) out.push_back(ex.ids);
  return out;
}

/// True when the ReLU pattern is the same at theta and theta +- step * v, so
/// the loss is smooth along the probe.
inline bool ffn_pattern_stable(const MiniTransformer<double>& model, const std::vector<double>& theta,
                               const std::vector<double>& v, double step, const std::vector<TokenIds>& inputs) {
  const auto base = ffn_pattern(model, theta, inputs);
  for (double s : {step, -step}) {
    auto p = theta;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += s * v[i];
    if (ffn_pattern(model, p, inputs) != base) return false;
  }
  return true;
}

/// One hypergradient probe on the tiny model: the central-difference and
/// exact hypergradients against brute-force differences of the composed
/// outer loss. `stable` is false when the probe leaves the smooth region
/// (the sparsemax support of phi_T changes under the brute-force step, or a
/// ReLU flips along the central-difference step in theta).
struct HypergradientProbe {
  std::vector<double> central;
  std::vector<double> exact;
  std::vector<double> brute;
  bool support_stable = true;
  bool relu_stable = true;
  bool stable = true;
};

inline HypergradientProbe probe_hypergradient(std::uint64_t seed, double brute_h = 1e-4) {
  const auto mc = tiny_model_config();
  const auto teacher = MiniTransformer<double>::initialize(mc, seed + 500);
  const auto train_data = tiny_dataset(8, seed + 11);
  const auto outer_data = tiny_dataset(8, seed + 12);
  TrainConfig cfg;
  cfg.mode = TrainMode::smat;
  cfg.batch_size = cfg.outer_batch_size = 8;
  const auto train_views = prepare_teacher_views(teacher, train_data, cfg);
  const auto outer_views = prepare_teacher_views(teacher, outer_data, cfg);
  std::vector<std::size_t> batch(8);
  std::iota(batch.begin(), batch.end(), std::size_t{0});

  std::mt19937_64 rng(seed);
  auto state = init_state<double>(cfg, mc, mc, 8, 8);
  state.student = MiniTransformer<double>::initialize(mc, seed + 3);
  state.phi_s = oracle::random_vector(rng, mc.total_heads(), -0.5, 0.5);
  state.phi_t = oracle::random_vector(rng, mc.total_heads(), -0.5, 0.5);

  HypergradientProbe p;
  cfg.hvp_mode = HvpMode::central_difference;
  p.central = hypergradient(state, batch, batch, train_views, outer_views, cfg);
  cfg.hvp_mode = HvpMode::exact;
  p.exact = hypergradient(state, batch, batch, train_views, outer_views, cfg);
  p.brute = oracle::brute_force_hypergradient(state, batch, batch, train_views, outer_views, cfg, brute_h);

  p.support_stable = sparsemax_support_stable(state.phi_t, brute_h);
  const auto& theta = state.student.parameters();
  const auto g = detail::student_gradients<double>(state.student, state.phi_s, state.phi_t, train_views, batch, cfg);
  std::vector<double> pilot(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) pilot[i] = theta[i] - cfg.lr_inner * g.theta[i];
  const auto v = detail::student_gradients<double>(state.student.with_parameters<double>(pilot), state.phi_s,
                                                   state.phi_t, outer_views, batch, cfg, false)
                     .theta;
  const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  const double eps = cfg.hvp.eps0 / std::max(norm, cfg.hvp.delta);
  p.relu_stable = ffn_pattern_stable(state.student, theta, v, eps, token_lists(train_data));
  p.stable = p.support_stable && p.relu_stable;
  return p;
}

/// End-to-end check of the student loss (simulation plus explanation term in
/// smat mode) with respect to all student weights and phi_S, at `points`
/// seeded student initializations.
inline CheckResult check_end_to_end(std::uint64_t seed, std::size_t points = 10) {
  const auto mc = tiny_model_config();
  const auto teacher = MiniTransformer<double>::initialize(mc, seed + 1000);
  const auto data = tiny_dataset(8, seed + 7);
  TrainConfig cfg;
  cfg.mode = TrainMode::smat;
  const auto views = prepare_teacher_views(teacher, data, cfg);
  std::vector<std::size_t> batch(data.size());
  std::iota(batch.begin(), batch.end(), std::size_t{0});

  CheckResult res{"student_loss", 0.0, 0};
  std::mt19937_64 rng(seed);
  for (std::size_t p = 0; p < points; ++p) {
    const auto student = MiniTransformer<double>::initialize(mc, seed * 31 + p);
    const auto phi_s = oracle::random_vector(rng, mc.total_heads(), -0.05, 0.05);
    const auto phi_t = oracle::random_vector(rng, mc.total_heads(), -0.05, 0.05);
    const auto g = detail::student_gradients<double>(student, phi_s, phi_t, views, batch, cfg);
    std::vector<double> analytic = g.theta;
    analytic.insert(analytic.end(), g.phi_s.begin(), g.phi_s.end());

    std::vector<double> flat = student.parameters();
    flat.insert(flat.end(), phi_s.begin(), phi_s.end());
    const std::size_t nt = student.num_parameters();
    auto f = [&](const std::vector<double>& v) {
      auto m = student.with_parameters<double>(std::vector<double>(v.begin(), v.begin() + nt));
      auto ps = TD::constant({phi_s.size()}, std::vector<double>(v.begin() + nt, v.end()));
      auto pt = TD::constant({phi_t.size()}, phi_t);
      return student_loss(m, m.bind(false), ps, pt, views, batch, cfg).total.item();
    };
    const auto numeric = oracle::fd_gradient(f, flat, 1e-5);
    res.max_rel_error = std::max(res.max_rel_error, oracle::rel_error(analytic, numeric));
    ++res.points;
  }
  return res;
}

}  // namespace smat::gradcheck
