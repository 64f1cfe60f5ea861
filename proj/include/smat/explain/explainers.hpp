#pragma once

// Saliency producers. Every explainer maps (model, tokens) to a distribution
// over the non-pad tokens. Attention explainers pool per-head saliency logits
// and normalize with softmax; gradient explainers project raw per-token scores
// to the simplex with softmax (temperature 1). No top-k truncation is applied.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "smat/core/losses.hpp"
#include "smat/core/ops.hpp"
#include "smat/core/sparsemax.hpp"
#include "smat/model/transformer.hpp"

namespace smat {

enum class Normalize { sparsemax, softmax, none };

inline const char* to_string(Normalize n) {
  switch (n) {
    case Normalize::sparsemax: return "sparsemax";
    case Normalize::softmax: return "softmax";
    case Normalize::none: return "none";
  }
  return "?";
}

inline Normalize normalize_from_string(const std::string& s) {
  if (s == "sparsemax") return Normalize::sparsemax;
  if (s == "softmax") return Normalize::softmax;
  if (s == "none") return Normalize::none;
  throw ConfigError("unknown normalization '" + s + "'");
}

/// |lambda| bound for the unnormalized variant.
inline constexpr double kUnnormalizedClamp = 10.0;

struct Saliency {
  std::vector<double> scores;

  std::size_t size() const { return scores.size(); }
  double operator[](std::size_t i) const { return scores[i]; }
};

inline bool on_simplex(std::span<const double> p, double tol = 1e-5) {
  double total = 0.0;
  for (double x : p) {
    if (x < 0.0 || !std::isfinite(x)) return false;
    total += x;
  }
  return std::abs(total - 1.0) <= tol;
}

template <class T>
Saliency to_saliency(std::span<const T> values) {
  Saliency s;
  s.scores.reserve(values.size());
  for (const T& v : values) s.scores.push_back(primal(v));
  return s;
}

/// Softmax of raw scores as a Saliency, computed in double.
inline Saliency softmax_saliency(std::span<const double> raw) {
  std::vector<double> p(raw.begin(), raw.end());
  detail::softmax_inplace(std::span<double>(p));
  return Saliency{std::move(p)};
}

/// Head coefficients lambda = normalize(phi).
template <class T>
Tensor<T> head_coefficients(const Tensor<T>& phi, Normalize normalize) {
  switch (normalize) {
    case Normalize::sparsemax: return sparsemax(phi);
    case Normalize::softmax: return softmax(phi);
    case Normalize::none: return clamp(phi, T(-kUnnormalizedClamp), T(kUnnormalizedClamp));
  }
  throw ConfigError("unknown normalization");
}

/// Values of normalize(phi) without building a graph.
template <class T>
std::vector<double> head_coefficient_values(std::span<const T> phi, Normalize normalize) {
  auto lam = head_coefficients(Tensor<T>::constant({phi.size()}, std::vector<T>(phi.begin(), phi.end())),
                               normalize);
  return to_saliency(lam.values()).scores;
}

/// softmax(sum_h lambda_h s^h) for coefficients (H) and logits (H, n).
template <class T>
Tensor<T> combine_heads(const Tensor<T>& lambda, const Tensor<T>& head_logits) {
  if (head_logits.rank() != 2 || lambda.size() != head_logits.dim(0)) {
    throw ShapeError("combine_heads: " + std::to_string(lambda.size()) + " coefficients for " +
                     shape_str(head_logits.shape()) + " head logits");
  }
  const std::size_t h = lambda.size();
  const std::size_t n = head_logits.dim(1);
  return softmax(reshape(matmul(reshape(lambda, {1, h}), head_logits), {n}));
}

/// Parameterized attention explainer over recorded internals.
template <class T>
Tensor<T> explain_parameterized(const AttentionInternals<T>& internals,
                                const std::vector<std::size_t>& heads, const Tensor<T>& phi,
                                Normalize normalize) {
  if (phi.size() != heads.size()) {
    throw ShapeError("explainer has " + std::to_string(phi.size()) + " coefficients but scope has " +
                     std::to_string(heads.size()) + " heads");
  }
  return combine_heads(head_coefficients(phi, normalize), head_saliency_logits(internals, heads));
}

template <class T>
Saliency explain_parameterized(const MiniTransformer<T>& model, std::span<const std::int32_t> tokens,
                               std::span<const T> phi, Normalize normalize,
                               HeadScope scope = HeadScope::all_layers) {
  auto fwd = model.forward(tokens, true);
  auto phi_t = Tensor<T>::constant({phi.size()}, std::vector<T>(phi.begin(), phi.end()));
  auto e = explain_parameterized(*fwd.internals, heads_in_scope(model.config(), scope), phi_t, normalize);
  return to_saliency(e.values());
}

/// Uniform head coefficients over the scope.
template <class T>
Tensor<T> uniform_coefficients(std::size_t heads) {
  return Tensor<T>::constant({heads}, std::vector<T>(heads, T(1) / T(static_cast<double>(heads))));
}

/// softmax(mean_h s^h) over the heads of the scope.
template <class T>
Saliency explain_attention_mean(const MiniTransformer<T>& model, std::span<const std::int32_t> tokens,
                                HeadScope scope) {
  auto fwd = model.forward(tokens, true);
  const auto heads = heads_in_scope(model.config(), scope);
  auto e = combine_heads(uniform_coefficients<T>(heads.size()), head_saliency_logits(*fwd.internals, heads));
  return to_saliency(e.values());
}

// ---------------------------------------------------------------------------
// Gradient attributions. A scorer maps token embeddings (n, d) to a scalar.

template <class T>
struct EmbeddingGradient {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<T> grad;
  double value = 0.0;
};

template <class T, class Scorer>
EmbeddingGradient<T> embedding_gradient(Scorer&& scorer, const std::vector<T>& emb, std::size_t n,
                                        std::size_t d) {
  auto leaf = Tensor<T>::variable({n, d}, emb);
  auto out = scorer(leaf);
  EmbeddingGradient<T> g{n, d, backward(out, {leaf}).grads[0], primal(out.item())};
  return g;
}

/// ||dL/de_i||_2 per token.
template <class T, class Scorer>
std::vector<double> raw_grad_l2(Scorer&& scorer, const std::vector<T>& emb, std::size_t n, std::size_t d) {
  auto g = embedding_gradient<T>(scorer, emb, n, d);
  std::vector<double> raw(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += primal(g.grad[i * d + j]) * primal(g.grad[i * d + j]);
    raw[i] = std::sqrt(acc);
  }
  return raw;
}

/// (dL/de_i) . e_i per token.
template <class T, class Scorer>
std::vector<double> raw_grad_x_input(Scorer&& scorer, const std::vector<T>& emb, std::size_t n,
                                     std::size_t d) {
  auto g = embedding_gradient<T>(scorer, emb, n, d);
  std::vector<double> raw(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += primal(g.grad[i * d + j]) * primal(emb[i * d + j]);
    raw[i] = acc;
  }
  return raw;
}

/// Integrated gradients from the zero baseline, right-endpoint Riemann sum
/// with alpha_k = k / steps, k = 1..steps.
template <class T, class Scorer>
std::vector<double> raw_integrated_gradients(Scorer&& scorer, const std::vector<T>& emb, std::size_t n,
                                             std::size_t d, std::size_t steps) {
  if (steps < 1) throw ConfigError("integrated gradients needs steps >= 1");
  std::vector<double> avg(n * d, 0.0);
  for (std::size_t k = 1; k <= steps; ++k) {
    const T alpha = T(static_cast<double>(k) / static_cast<double>(steps));
    std::vector<T> scaled(emb.size());
    for (std::size_t i = 0; i < emb.size(); ++i) scaled[i] = emb[i] * alpha;
    auto g = embedding_gradient<T>(scorer, scaled, n, d);
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += primal(g.grad[i]);
  }
  std::vector<double> raw(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += primal(emb[i * d + j]) * avg[i * d + j] / static_cast<double>(steps);
    raw[i] = acc;
  }
  return raw;
}

/// Scalar explained by gradient methods: log-probability of `target`
/// (classification) or the output score (regression).
template <class T>
Tensor<T> explanation_objective(const MiniTransformer<T>& model, const Tensor<T>& output, std::size_t target) {
  if (model.config().task == TaskKind::regression) return index(output, 0);
  return index(log_softmax(output), target);
}

/// Objective as a function of token embeddings, with the explained class fixed
/// to the model's prediction on the unmodified input.
template <class T>
struct ModelScorer {
  const MiniTransformer<T>* model;
  typename MiniTransformer<T>::Bound bound;
  std::size_t target;

  Tensor<T> operator()(const Tensor<T>& emb) const {
    auto out = model->forward_embedded(bound, emb, false).output;
    return explanation_objective(*model, out, target);
  }
};

template <class T>
struct ScorerSetup {
  ModelScorer<T> scorer;
  std::vector<T> emb;
  std::size_t n;
  std::size_t d;
};

template <class T>
ScorerSetup<T> make_scorer(const MiniTransformer<T>& model, std::span<const std::int32_t> tokens) {
  auto bound = model.bind(false);
  auto emb = model.embed(bound, tokens);
  const auto out = model.forward_embedded(bound, emb, false).output;
  const std::size_t target = model.config().task == TaskKind::regression ? 0 : argmax(out.values());
  std::vector<T> ev(emb.values().begin(), emb.values().end());
  return {ModelScorer<T>{&model, std::move(bound), target}, std::move(ev), emb.dim(0), emb.dim(1)};
}

template <class T>
Saliency explain_grad_l2(const MiniTransformer<T>& model, std::span<const std::int32_t> tokens) {
  auto s = make_scorer(model, tokens);
  return softmax_saliency(raw_grad_l2<T>(s.scorer, s.emb, s.n, s.d));
}

template <class T>
Saliency explain_grad_x_input(const MiniTransformer<T>& model, std::span<const std::int32_t> tokens) {
  auto s = make_scorer(model, tokens);
  return softmax_saliency(raw_grad_x_input<T>(s.scorer, s.emb, s.n, s.d));
}

template <class T>
Saliency explain_integrated_gradients(const MiniTransformer<T>& model, std::span<const std::int32_t> tokens,
                                      std::size_t steps) {
  auto s = make_scorer(model, tokens);
  return softmax_saliency(raw_integrated_gradients<T>(s.scorer, s.emb, s.n, s.d, steps));
}

// ---------------------------------------------------------------------------

enum class StaticExplainer { grad_l2, grad_x_input, integrated_gradients, attn_all, attn_last };

inline const char* to_string(StaticExplainer e) {
  switch (e) {
    case StaticExplainer::grad_l2: return "grad_l2";
    case StaticExplainer::grad_x_input: return "grad_x_input";
    case StaticExplainer::integrated_gradients: return "integrated_gradients";
    case StaticExplainer::attn_all: return "attn_all";
    case StaticExplainer::attn_last: return "attn_last";
  }
  return "?";
}

inline StaticExplainer static_explainer_from_string(const std::string& s) {
  for (auto e : {StaticExplainer::grad_l2, StaticExplainer::grad_x_input, StaticExplainer::integrated_gradients,
                 StaticExplainer::attn_all, StaticExplainer::attn_last}) {
    if (s == to_string(e)) return e;
  }
  throw ConfigError("unknown explainer '" + s +
                    "' (expected grad_l2, grad_x_input, integrated_gradients, attn_all or attn_last)");
}

inline bool is_attention_explainer(StaticExplainer e) {
  return e == StaticExplainer::attn_all || e == StaticExplainer::attn_last;
}

template <class T>
Saliency explain_static(const MiniTransformer<T>& model, std::span<const std::int32_t> tokens,
                        StaticExplainer kind, std::size_t ig_steps = 10) {
  switch (kind) {
    case StaticExplainer::grad_l2: return explain_grad_l2(model, tokens);
    case StaticExplainer::grad_x_input: return explain_grad_x_input(model, tokens);
    case StaticExplainer::integrated_gradients: return explain_integrated_gradients(model, tokens, ig_steps);
    case StaticExplainer::attn_all: return explain_attention_mean(model, tokens, HeadScope::all_layers);
    case StaticExplainer::attn_last: return explain_attention_mean(model, tokens, HeadScope::last_layer);
  }
  throw ConfigError("unknown explainer");
}

/// Word-level saliency by summing the scores of each word's pieces. `groups`
/// must partition the piece indices.
inline Saliency wordpiece_to_word(const Saliency& pieces, const std::vector<std::vector<std::size_t>>& groups) {
  std::vector<int> seen(pieces.size(), 0);
  Saliency out;
  out.scores.reserve(groups.size());
  for (const auto& g : groups) {
    double total = 0.0;
    for (std::size_t i : g) {
      if (i >= pieces.size()) throw ShapeError("alignment index " + std::to_string(i) + " out of range");
      if (seen[i]++) throw ShapeError("alignment groups overlap at piece " + std::to_string(i));
      total += pieces[i];
    }
    out.scores.push_back(total);
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw ShapeError("alignment does not cover piece " + std::to_string(i));
  }
  return out;
}

}  // namespace smat
