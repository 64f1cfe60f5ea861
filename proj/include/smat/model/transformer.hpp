#pragma once

// Small pre-layer-norm transformer encoder used for both teacher and student.
// Parameters live in one flat vector addressed through a ParamLayout so that
// optimizers and perturbation probes can treat theta as a single vector.

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "smat/core/losses.hpp"
#include "smat/core/ops.hpp"
#include "smat/core/tensor.hpp"
#include "smat/model/config.hpp"

namespace smat {

using TokenIds = std::vector<std::int32_t>;

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  std::size_t fan_in = 0;  // 0: initialized to a constant instead
  double fill = 0.0;
};

class ParamLayout {
 public:
  explicit ParamLayout(const ModelConfig& cfg) {
    const std::size_t d = cfg.model_dim;
    add("tok_emb", {cfg.vocab_size, d}, d);
    add("pos_emb", {cfg.max_len, d}, d);
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      add(p + "ln1.g", {d}, 0, 1.0);
      add(p + "ln1.b", {d}, 0);
      add(p + "wq", {d, d}, d);
      add(p + "bq", {d}, 0);
      add(p + "wk", {d, d}, d);
      add(p + "bk", {d}, 0);
      add(p + "wv", {d, d}, d);
      add(p + "bv", {d}, 0);
      add(p + "wo", {d, d}, d);
      add(p + "bo", {d}, 0);
      add(p + "ln2.g", {d}, 0, 1.0);
      add(p + "ln2.b", {d}, 0);
      add(p + "ffn.w1", {d, cfg.ffn_dim}, d);
      add(p + "ffn.b1", {cfg.ffn_dim}, 0);
      add(p + "ffn.w2", {cfg.ffn_dim, d}, cfg.ffn_dim);
      add(p + "ffn.b2", {d}, 0);
    }
    add("mix.w", {cfg.num_layers}, 0);
    add("final_ln.g", {d}, 0, 1.0);
    add("final_ln.b", {d}, 0);
    add("head.w", {d, cfg.output_dim()}, d);
    add("head.b", {cfg.output_dim()}, 0);
  }

  const std::vector<ParamSpec>& specs() const { return specs_; }
  std::size_t total() const { return total_; }
  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      if (specs_[i].name == name) return i;
    }
    throw Error("unknown parameter '" + name + "'");
  }

 private:
  void add(std::string name, Shape shape, std::size_t fan_in, double fill = 0.0) {
    ParamSpec s;
    s.name = std::move(name);
    s.size = shape_size(shape);
    s.shape = std::move(shape);
    s.offset = total_;
    s.fan_in = fan_in;
    s.fill = fill;
    total_ += s.size;
    specs_.push_back(std::move(s));
  }

  std::vector<ParamSpec> specs_;
  std::size_t total_ = 0;
};

template <class T>
struct HeadInternals {
  std::size_t layer = 0;
  std::size_t head = 0;
  Tensor<T> queries;  // (n, head_dim), post-projection
  Tensor<T> keys;     // (n, head_dim)
  Tensor<T> scores;   // (n, n) unnormalized q_i . k_j
  Tensor<T> weights;  // (n, n) row-wise softmax of scores
};

/// Per-head attention internals, layer-major: index = layer * heads_per_layer + head.
template <class T>
struct AttentionInternals {
  std::vector<HeadInternals<T>> heads;
};

template <class T>
struct ForwardResult {
  Tensor<T> output;  // class logits (C) or a (1) regression score
  std::optional<AttentionInternals<T>> internals;
  std::vector<std::uint8_t> ffn_active;  // ReLU input > 0, per layer, row-major; filled when recording
};

enum class HeadScope { all_layers, last_layer };

/// Head indices (layer-major) covered by a scope.
inline std::vector<std::size_t> heads_in_scope(const ModelConfig& cfg, HeadScope scope) {
  std::vector<std::size_t> out;
  const std::size_t first = scope == HeadScope::all_layers ? 0 : (cfg.num_layers - 1) * cfg.heads_per_layer;
  for (std::size_t h = first; h < cfg.total_heads(); ++h) out.push_back(h);
  return out;
}

/// Strips right padding. Throws on an empty sequence.
inline TokenIds strip_padding(std::span<const std::int32_t> tokens) {
  std::size_t n = tokens.size();
  while (n > 0 && tokens[n - 1] == kPadId) --n;
  if (n == 0) throw ShapeError("empty token sequence");
  return TokenIds(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(n));
}

template <class T>
class MiniTransformer {
 public:
  using Bound = std::vector<Tensor<T>>;

  explicit MiniTransformer(ModelConfig cfg)
      : cfg_(cfg), layout_(std::make_shared<ParamLayout>(validated(cfg))), theta_(layout_->total(), T(0)) {
    for (const auto& s : layout_->specs()) {
      for (std::size_t i = 0; i < s.size; ++i) theta_[s.offset + i] = T(s.fill);
    }
  }

  /// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
  static MiniTransformer initialize(const ModelConfig& cfg, std::uint64_t seed) {
    MiniTransformer m(cfg);
    std::mt19937_64 rng(seed);
    for (const auto& s : m.layout_->specs()) {
      if (s.fan_in == 0) continue;
      const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (std::size_t i = 0; i < s.size; ++i) m.theta_[s.offset + i] = T(dist(rng));
    }
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return *layout_; }
  std::vector<T>& parameters() { return theta_; }
  const std::vector<T>& parameters() const { return theta_; }
  std::size_t num_parameters() const { return theta_.size(); }

  std::span<const T> parameter(const std::string& name) const {
    const auto& s = layout_->specs()[layout_->index_of(name)];
    return std::span<const T>(theta_).subspan(s.offset, s.size);
  }

  template <class U>
  MiniTransformer<U> cast() const {
    MiniTransformer<U> out(cfg_);
    out.parameters() = cast_values<U>(theta_);
    return out;
  }

  /// Same weights, with parameter vector replaced (e.g. a perturbed or Dual copy).
  template <class U>
  MiniTransformer<U> with_parameters(std::vector<U> theta) const {
    if (theta.size() != theta_.size()) throw ShapeError("with_parameters: size mismatch");
    MiniTransformer<U> out(cfg_);
    out.parameters() = std::move(theta);
    return out;
  }

  /// One leaf tensor per parameter block.
  Bound bind(bool requires_grad) const {
    Bound b;
    b.reserve(layout_->specs().size());
    for (const auto& s : layout_->specs()) {
      std::vector<T> v(theta_.begin() + static_cast<std::ptrdiff_t>(s.offset),
                       theta_.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size));
      b.push_back(Tensor<T>::make(s.shape, std::move(v), requires_grad));
    }
    return b;
  }

  /// Gradient map over bound leaves flattened into theta order.
  std::vector<T> flatten(const GradientMap<T>& g) const {
    std::vector<T> out(theta_.size(), T(0));
    const auto& specs = layout_->specs();
    for (std::size_t i = 0; i < specs.size() && i < g.size(); ++i) {
      std::copy(g[i].begin(), g[i].end(), out.begin() + static_cast<std::ptrdiff_t>(specs[i].offset));
    }
    return out;
  }

  void check_tokens(std::span<const std::int32_t> tokens) const {
    if (tokens.empty()) throw ShapeError("empty token sequence");
    if (tokens.size() > cfg_.max_len) {
      throw ShapeError("sequence length " + std::to_string(tokens.size()) + " exceeds max_len " +
                       std::to_string(cfg_.max_len));
    }
    for (auto id : tokens) {
      if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) {
        throw ShapeError("token id " + std::to_string(id) + " outside vocabulary of size " +
                         std::to_string(cfg_.vocab_size));
      }
    }
  }

  /// Token embeddings (n, d) for a padded or unpadded sequence.
  Tensor<T> embed(const Bound& b, std::span<const std::int32_t> tokens) const {
    const TokenIds ids = strip_padding(tokens);
    check_tokens(ids);
    return gather_rows(b[0], ids);
  }

  ForwardResult<T> forward(const Bound& b, std::span<const std::int32_t> tokens, bool record) const {
    return forward_embedded(b, embed(b, tokens), record);
  }

  ForwardResult<T> forward(std::span<const std::int32_t> tokens, bool record = false) const {
    return forward(bind(false), tokens, record);
  }

  /// Forward pass from token embeddings (n, d); positional embeddings are
  /// added inside.
  ForwardResult<T> forward_embedded(const Bound& b, const Tensor<T>& token_emb, bool record) const {
    const std::size_t n = token_emb.dim(0);
    const std::size_t d = cfg_.model_dim;
    const std::size_t dh = cfg_.head_dim;
    if (n == 0) throw ShapeError("empty token sequence");
    if (n > cfg_.max_len) throw ShapeError("sequence exceeds max_len");
    if (token_emb.dim(1) != d) throw ShapeError("embedding width mismatch");

    std::size_t k = 2;  // cursor into the bound parameter list
    auto next = [&]() -> const Tensor<T>& { return b[k++]; };

    ForwardResult<T> result;
    AttentionInternals<T> internals;
    Tensor<T> x = add(token_emb, slice_rows(b[1], 0, n));
    std::vector<Tensor<T>> layer_repr;
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
      const auto& ln1g = next();
      const auto& ln1b = next();
      const auto& wq = next();
      const auto& bq = next();
      const auto& wk = next();
      const auto& bk = next();
      const auto& wv = next();
      const auto& bv = next();
      const auto& wo = next();
      const auto& bo = next();
      const auto& ln2g = next();
      const auto& ln2b = next();
      const auto& w1 = next();
      const auto& b1 = next();
      const auto& w2 = next();
      const auto& b2 = next();

      const auto z = add_row(mul_row(layer_norm_rows(x), ln1g), ln1b);
      const auto q = add_row(matmul(z, wq), bq);
      const auto kk = add_row(matmul(z, wk), bk);
      const auto v = add_row(matmul(z, wv), bv);
      std::vector<Tensor<T>> head_out;
      for (std::size_t h = 0; h < cfg_.heads_per_layer; ++h) {
        auto qh = slice_cols(q, h * dh, dh);
        auto kh = slice_cols(kk, h * dh, dh);
        auto vh = slice_cols(v, h * dh, dh);
        auto scores = matmul_nt(qh, kh);
        auto weights = softmax_rows(scores);
        head_out.push_back(matmul(weights, vh));
        if (record) internals.heads.push_back({l, h, qh, kh, scores, weights});
      }
      x = add(x, add_row(matmul(concat_cols(head_out), wo), bo));
      const auto z2 = add_row(mul_row(layer_norm_rows(x), ln2g), ln2b);
      const auto pre = add_row(matmul(z2, w1), b1);
      if (record)
        for (const auto& p : pre.values()) result.ffn_active.push_back(primal(p) > 0 ? 1 : 0);
      x = add(x, add_row(matmul(relu(pre), w2), b2));
      layer_repr.push_back(mean_rows(x));
    }
    const auto& mix_w = next();
    const auto& fg = next();
    const auto& fb = next();
    const auto& hw = next();
    const auto& hb = next();

    const std::size_t nl = cfg_.num_layers;
    const auto mix = reshape(softmax(mix_w), {1, nl});
    auto pooled = matmul(mix, stack_rows(layer_repr));  // (1, d)
    pooled = add_row(mul_row(layer_norm_rows(pooled), fg), fb);
    result.output = reshape(add_row(matmul(pooled, hw), hb), {cfg_.output_dim()});
    if (record) result.internals = std::move(internals);
    return result;
  }

 private:
  static const ModelConfig& validated(const ModelConfig& cfg) {
    cfg.validate();
    return cfg;
  }

  ModelConfig cfg_;
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<T> theta_;
};

/// Per-head saliency logits s^h = (1/n) sum_i q_i^T K for the heads in `heads`,
/// stacked to (|heads|, n). Differentiable.
template <class T>
Tensor<T> head_saliency_logits(const AttentionInternals<T>& internals,
                               const std::vector<std::size_t>& heads) {
  std::vector<Tensor<T>> rows;
  rows.reserve(heads.size());
  for (std::size_t h : heads) {
    if (h >= internals.heads.size()) throw ShapeError("head index out of range");
    rows.push_back(mean_rows(internals.heads[h].scores));
  }
  return stack_rows(rows);
}

template <class T>
Tensor<T> head_saliency_logits(const AttentionInternals<T>& internals) {
  std::vector<std::size_t> all(internals.heads.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return head_saliency_logits(internals, all);
}

/// Argmax with lowest-index tie-break.
template <class T>
std::size_t argmax(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

/// Class id (classification) or score (regression) as a double.
template <class T>
double predict_label(const MiniTransformer<T>& model, std::span<const std::int32_t> tokens) {
  const auto out = model.forward(tokens, false).output;
  if (model.config().task == TaskKind::regression) return primal(out[0]);
  return static_cast<double>(argmax(out.values()));
}

/// Task loss against a gold label (class id) or target score.
template <class T>
Tensor<T> task_loss(const MiniTransformer<T>& model, const Tensor<T>& output, double target) {
  if (model.config().task == TaskKind::regression) {
    return mse(output, Tensor<T>::constant({1}, {T(target)}));
  }
  return cross_entropy(output, static_cast<std::size_t>(target));
}

}  // namespace smat
