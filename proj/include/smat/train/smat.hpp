#pragma once

// Student training with explanation regularization and the bi-level update of
// the teacher explainer. Each iteration takes one SGD step on the student and
// its explainer (inner step) and, in smat mode, one hypergradient step on the
// teacher explainer computed through an uncommitted pilot update (outer step).
// The teacher itself is never modified.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "smat/core/hvp.hpp"
#include "smat/core/losses.hpp"
#include "smat/data/dataset.hpp"
#include "smat/eval/metrics.hpp"
#include "smat/explain/explainers.hpp"
#include "smat/model/transformer.hpp"
#include "smat/train/config.hpp"

namespace smat {

/// Frozen-teacher quantities for one example, computed once.
template <class T>
struct TeacherView {
  TokenIds ids;
  std::size_t n = 0;
  double target = 0.0;         // teacher's predicted class or score
  std::vector<T> probs;        // teacher class probabilities (soft targets)
  std::vector<T> head_logits;  // (H_teacher, n) saliency logits of every head
  std::vector<T> static_saliency;
};

template <class T>
std::vector<TeacherView<T>> prepare_teacher_views(const MiniTransformer<T>& teacher, const Dataset& data,
                                                  const TrainConfig& cfg) {
  std::vector<TeacherView<T>> views;
  views.reserve(data.size());
  const auto heads = heads_in_scope(teacher.config(), HeadScope::all_layers);
  for (const auto& ex : data.examples) {
    TeacherView<T> v;
    v.ids = strip_padding(ex.ids);
    v.n = v.ids.size();
    auto fwd = teacher.forward(v.ids, true);
    if (teacher.config().task == TaskKind::regression) {
      v.target = primal(fwd.output[0]);
    } else {
      v.target = static_cast<double>(argmax(fwd.output.values()));
      auto p = softmax(fwd.output);
      v.probs.assign(p.values().begin(), p.values().end());
    }
    auto logits = head_saliency_logits(*fwd.internals, heads);
    v.head_logits.assign(logits.values().begin(), logits.values().end());
    if (cfg.mode == TrainMode::static_explainer) {
      auto s = explain_static(teacher, v.ids, cfg.static_explainer, cfg.ig_steps);
      v.static_saliency = cast_values<T>(s.scores);
    }
    views.push_back(std::move(v));
  }
  return views;
}

template <class S>
struct StudentLoss {
  Tensor<S> total;
  Tensor<S> sim;
  Tensor<S> expl;  // undefined when no explanation term is used
};

template <class S, class T>
Tensor<S> simulation_term(const MiniTransformer<S>& student, const Tensor<S>& output, const TeacherView<T>& view,
                          const TrainConfig& cfg) {
  if (student.config().task == TaskKind::regression) {
    if (cfg.sim_loss != SimLoss::mse) throw ConfigError("regression students need sim_loss = mse");
    return mse(output, Tensor<S>::constant({1}, {S(view.target)}));
  }
  if (cfg.sim_loss != SimLoss::cross_entropy) throw ConfigError("classification students need sim_loss = cross_entropy");
  if (cfg.soft_targets) {
    return cross_entropy_soft(output, Tensor<S>::constant({view.probs.size()}, cast_values<S>(view.probs)));
  }
  return cross_entropy(output, static_cast<std::size_t>(view.target));
}

/// Mean over the batch of L_sim + beta * KL between the two explanations.
/// With `with_explanations` false only the simulation term is built.
template <class S, class T>
StudentLoss<S> student_loss(const MiniTransformer<S>& student, const typename MiniTransformer<S>::Bound& bound,
                            const Tensor<S>& phi_s, const Tensor<S>& phi_t,
                            const std::vector<TeacherView<T>>& views, std::span<const std::size_t> batch,
                            const TrainConfig& cfg, bool with_explanations = true) {
  if (batch.empty()) throw ConfigError("empty batch");
  const double beta = cfg.effective_beta();
  const bool use_expl = with_explanations && beta > 0.0 && cfg.mode != TrainMode::none;
  const auto student_heads = heads_in_scope(student.config(), cfg.student_scope());
  Tensor<S> lam_s, lam_t;
  if (use_expl) {
    lam_s = head_coefficients(phi_s, cfg.normalize);
    if (cfg.mode == TrainMode::smat) lam_t = head_coefficients(phi_t, cfg.normalize);
  }
  std::vector<Tensor<S>> sims, expls;
  for (std::size_t idx : batch) {
    const auto& view = views.at(idx);
    auto fwd = student.forward(bound, view.ids, use_expl);
    sims.push_back(simulation_term(student, fwd.output, view, cfg));
    if (!use_expl) continue;
    auto e_s = combine_heads(lam_s, head_saliency_logits(*fwd.internals, student_heads));
    Tensor<S> e_t;
    if (cfg.mode == TrainMode::smat) {
      const std::size_t h = view.head_logits.size() / view.n;
      e_t = combine_heads(lam_t, Tensor<S>::constant({h, view.n}, cast_values<S>(view.head_logits)));
    } else {
      e_t = Tensor<S>::constant({view.n}, cast_values<S>(view.static_saliency));
    }
    if (e_s.size() != e_t.size()) throw ShapeError("student and teacher explanations differ in length");
    expls.push_back(cfg.kl_direction == KlDirection::teacher_to_student ? kl_divergence(e_t, e_s)
                                                                         : kl_divergence(e_s, e_t));
  }
  const S inv_b = S(1.0 / static_cast<double>(batch.size()));
  StudentLoss<S> out;
  out.sim = scale(add_all(sims), inv_b);
  if (use_expl) {
    out.expl = scale(add_all(expls), inv_b);
    out.total = add(out.sim, scale(out.expl, S(beta)));
  } else {
    out.total = out.sim;
  }
  return out;
}

/// Cycles through seeded permutations of [0, n).
class BatchSampler {
 public:
  BatchSampler() = default;
  BatchSampler(std::size_t n, std::uint64_t seed) : n_(n), rng_(seed) {}

  std::vector<std::size_t> next(std::size_t batch) {
    if (n_ == 0) throw ConfigError("cannot sample batches from an empty split");
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
      if (cursor_ >= order_.size()) {
        order_.resize(n_);
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
      }
      out.push_back(order_[cursor_++]);
      if (batch > n_ && out.size() == n_) break;
    }
    return out;
  }

 private:
  std::size_t n_ = 0;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

template <class T>
struct TrainState {
  MiniTransformer<T> student;
  std::vector<T> phi_s;
  std::vector<T> phi_t;
  std::size_t step = 0;
  BatchSampler train_sampler;
  BatchSampler outer_sampler;
};

/// Initial explainer coefficients: the mean over heads under any normalization
/// (zeros for sparsemax/softmax, 1/H for the unnormalized variant).
template <class T>
std::vector<T> initial_phi(std::size_t heads, Normalize normalize) {
  const T v = normalize == Normalize::none ? T(1.0 / static_cast<double>(heads)) : T(0);
  return std::vector<T>(heads, v);
}

template <class T>
TrainState<T> init_state(const TrainConfig& cfg, const ModelConfig& student_cfg, const ModelConfig& teacher_cfg,
                         std::size_t n_train, std::size_t n_outer) {
  TrainState<T> s{MiniTransformer<T>::initialize(student_cfg, cfg.seed),
                  initial_phi<T>(heads_in_scope(student_cfg, cfg.student_scope()).size(), cfg.normalize),
                  initial_phi<T>(teacher_cfg.total_heads(), cfg.normalize),
                  0,
                  BatchSampler(n_train, cfg.seed * 2654435761ULL + 1),
                  BatchSampler(n_outer, cfg.seed * 2654435761ULL + 2)};
  return s;
}

namespace detail {

template <class T>
void check_finite(std::span<const T> g, const char* what) {
  for (const T& x : g) {
    if (!finite(x)) throw NumericError(std::string("non-finite gradient for ") + what);
  }
}

template <class T>
struct LossGradients {
  double loss = 0.0;
  std::vector<T> theta;
  std::vector<T> phi_s;
};

template <class T>
LossGradients<T> student_gradients(const MiniTransformer<T>& student, std::span<const T> phi_s,
                                   std::span<const T> phi_t, const std::vector<TeacherView<T>>& views,
                                   std::span<const std::size_t> batch, const TrainConfig& cfg,
                                   bool with_explanations = true) {
  auto bound = student.bind(true);
  auto ps = Tensor<T>::variable({phi_s.size()}, std::vector<T>(phi_s.begin(), phi_s.end()));
  auto pt = Tensor<T>::constant({phi_t.size()}, std::vector<T>(phi_t.begin(), phi_t.end()));
  auto loss = student_loss(student, bound, ps, pt, views, batch, cfg, with_explanations).total;
  std::vector<Tensor<T>> wrt = bound;
  wrt.push_back(ps);
  auto grads = backward(loss, wrt);
  LossGradients<T> out;
  out.loss = primal(loss.item());
  out.theta = student.flatten(grads);
  out.phi_s = grads.grads.back();
  return out;
}

}  // namespace detail

/// theta <- theta - lr grad_theta L_student; phi_S <- phi_S - lr grad_phi_S L_student,
/// both from one loss evaluation on `batch`. Returns the pre-update loss.
template <class T>
double inner_step(TrainState<T>& state, std::span<const std::size_t> batch, const std::vector<TeacherView<T>>& views,
                  const TrainConfig& cfg) {
  auto g = detail::student_gradients<T>(state.student, state.phi_s, state.phi_t, views, batch, cfg);
  detail::check_finite<T>(g.theta, "student parameters");
  detail::check_finite<T>(g.phi_s, "student explainer");
  const T lr(cfg.lr_inner);
  auto& theta = state.student.parameters();
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * g.theta[i];
  for (std::size_t i = 0; i < state.phi_s.size(); ++i) state.phi_s[i] -= lr * g.phi_s[i];
  return g.loss;
}

/// Gradient of the teacher-explainer loss L_student with respect to phi_T
/// at student parameters `theta`.
template <class T, class S>
std::vector<S> teacher_explainer_gradient(const TrainState<T>& state, const std::vector<S>& theta,
                                          const std::vector<TeacherView<T>>& views,
                                          std::span<const std::size_t> batch, const TrainConfig& cfg) {
  auto student = state.student.template with_parameters<S>(theta);
  auto bound = student.bind(false);
  auto ps = Tensor<S>::constant({state.phi_s.size()}, cast_values<S>(state.phi_s));
  auto pt = Tensor<S>::variable({state.phi_t.size()}, cast_values<S>(state.phi_t));
  auto loss = student_loss(student, bound, ps, pt, views, batch, cfg).total;
  return backward(loss, {pt}).grads[0];
}

struct HypergradientInfo {
  double pilot_loss = 0.0;
  double outer_loss = 0.0;  // L_sim at the pilot parameters on the outer batch
  double v_norm = 0.0;
};

/// d/d phi_T of L_sim(theta_pilot(phi_T)) on the outer batch, where
/// theta_pilot = theta - lr_inner grad_theta L_student(theta, phi_S, phi_T) on
/// the train batch and theta, phi_S are the committed values. Equals
/// -lr_inner * (d/d theta grad_phi_T L_student) . v with v = grad_theta L_sim(theta_pilot).
template <class T>
std::vector<T> hypergradient(const TrainState<T>& state, std::span<const std::size_t> train_batch,
                             std::span<const std::size_t> outer_batch, const std::vector<TeacherView<T>>& train_views,
                             const std::vector<TeacherView<T>>& outer_views, const TrainConfig& cfg,
                             HypergradientInfo* info = nullptr) {
  const auto& theta = state.student.parameters();
  auto pilot_g = detail::student_gradients<T>(state.student, state.phi_s, state.phi_t, train_views, train_batch, cfg);
  detail::check_finite<T>(pilot_g.theta, "pilot update");
  std::vector<T> pilot(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) pilot[i] = theta[i] - T(cfg.lr_inner) * pilot_g.theta[i];

  auto pilot_model = state.student.template with_parameters<T>(pilot);
  auto outer_g = detail::student_gradients<T>(pilot_model, state.phi_s, state.phi_t, outer_views, outer_batch, cfg,
                                              /*with_explanations=*/false);
  const std::vector<T>& v = outer_g.theta;

  auto grad_phi_t = [&]<class S>(const std::vector<S>& at) -> std::vector<S> {
    return teacher_explainer_gradient<T, S>(state, at, train_views, train_batch, cfg);
  };
  auto mixed = gradient_jvp<T>(grad_phi_t, std::span<const T>(theta), std::span<const T>(v), cfg.hvp_mode, cfg.hvp);
  for (auto& m : mixed) m *= T(-cfg.lr_inner);
  detail::check_finite<T>(mixed, "teacher explainer (hypergradient)");
  if (info) {
    info->pilot_loss = pilot_g.loss;
    info->outer_loss = outer_g.loss;
    info->v_norm = l2_norm(std::span<const T>(v));
  }
  return mixed;
}

/// phi_T <- phi_T - lr_outer * hypergradient. Student weights and phi_S keep
/// their committed values.
template <class T>
std::vector<T> outer_step(TrainState<T>& state, std::span<const std::size_t> train_batch,
                          std::span<const std::size_t> outer_batch, const std::vector<TeacherView<T>>& train_views,
                          const std::vector<TeacherView<T>>& outer_views, const TrainConfig& cfg) {
  auto g = hypergradient(state, train_batch, outer_batch, train_views, outer_views, cfg);
  for (std::size_t i = 0; i < g.size(); ++i) state.phi_t[i] -= T(cfg.lr_outer) * g[i];
  return g;
}

struct MetricsRecord {
  std::size_t step = 0;
  double train_loss = 0.0;
  double dev_simulability = 0.0;
  std::size_t active_heads = 0;  // |{h : lambda_T^h > 0}|
};

template <class T>
struct TrainResult {
  MiniTransformer<T> student;
  std::vector<T> phi_s;
  std::vector<T> phi_t;
  std::vector<double> lambda_t;
  std::vector<MetricsRecord> log;
};

template <class T>
std::size_t count_active(std::span<const T> phi, Normalize normalize) {
  std::size_t k = 0;
  for (double l : head_coefficient_values(phi, normalize)) k += l > 0.0;
  return k;
}

/// Full training run. Teacher views for train/dev are built once; each
/// iteration is one inner step followed, in smat mode, by one outer step on a
/// dev batch.
template <class T>
TrainResult<T> train(const TrainConfig& cfg, const ModelConfig& student_cfg, const MiniTransformer<T>& teacher,
                     const DataSplits& splits) {
  cfg.validate();
  auto state = init_state<T>(cfg, student_cfg, teacher.config(), splits.train.size(), splits.dev.size());
  TrainResult<T> result{state.student, {}, {}, {}, {}};
  if (cfg.steps > 0) {
    const auto train_views = prepare_teacher_views(teacher, splits.train, cfg);
    const auto dev_views = cfg.mode == TrainMode::smat ? prepare_teacher_views(teacher, splits.dev, cfg)
                                                       : std::vector<TeacherView<T>>{};
    double running = 0.0;
    std::size_t since = 0;
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
      const auto batch = state.train_sampler.next(cfg.batch_size);
      running += inner_step(state, batch, train_views, cfg);
      ++since;
      if (cfg.mode == TrainMode::smat) {
        const auto outer = state.outer_sampler.next(cfg.outer_batch_size);
        outer_step(state, batch, outer, train_views, dev_views, cfg);
      }
      state.step = step;
      const bool eval_now = step == cfg.steps || (cfg.eval_every > 0 && step % cfg.eval_every == 0);
      if (eval_now) {
        MetricsRecord rec;
        rec.step = step;
        rec.train_loss = running / static_cast<double>(since);
        rec.dev_simulability = splits.dev.empty() ? 0.0 : simulability(state.student, teacher, splits.dev);
        rec.active_heads = count_active<T>(state.phi_t, cfg.normalize);
        result.log.push_back(rec);
        running = 0.0;
        since = 0;
      }
    }
  }
  result.student = state.student;
  result.phi_s = state.phi_s;
  result.phi_t = state.phi_t;
  result.lambda_t = head_coefficient_values<T>(state.phi_t, cfg.normalize);
  return result;
}

/// Trains a teacher on gold labels (or scores) with momentum SGD.
template <class T>
MiniTransformer<T> train_teacher(const ModelConfig& model_cfg, const TeacherTrainConfig& cfg, const Dataset& data,
                                 std::vector<double>* epoch_loss = nullptr) {
  if (data.empty()) throw ConfigError("teacher training set is empty");
  auto model = MiniTransformer<T>::initialize(model_cfg, cfg.seed);
  std::vector<T> velocity(model.num_parameters(), T(0));
  BatchSampler sampler(data.size(), cfg.seed + 17);
  const std::size_t per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    for (std::size_t it = 0; it < per_epoch; ++it) {
      const auto batch = sampler.next(cfg.batch_size);
      auto bound = model.bind(true);
      std::vector<Tensor<T>> losses;
      for (std::size_t i : batch) {
        const auto& ex = data.examples[i];
        losses.push_back(task_loss(model, model.forward(bound, ex.ids, false).output, ex.label));
      }
      auto loss = scale(add_all(losses), T(1.0 / static_cast<double>(batch.size())));
      auto g = model.flatten(backward(loss, bound));
      detail::check_finite<T>(g, "teacher parameters");
      auto& theta = model.parameters();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        velocity[i] = T(cfg.momentum) * velocity[i] + g[i];
        theta[i] -= T(cfg.lr) * velocity[i];
      }
      total += primal(loss.item());
    }
    if (epoch_loss) epoch_loss->push_back(total / static_cast<double>(per_epoch));
  }
  return model;
}

}  // namespace smat
