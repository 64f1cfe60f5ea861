#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "smat/core/error.hpp"
#include "smat/data/dataset.hpp"
#include "smat/model/transformer.hpp"

namespace smat {

/// Fraction of positions where the two prediction sequences agree.
inline double agreement(std::span<const double> student, std::span<const double> teacher) {
  if (student.size() != teacher.size()) throw ShapeError("agreement: length mismatch");
  if (student.empty()) throw Error("simulability on an empty test set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < student.size(); ++i) hits += student[i] == teacher[i];
  return static_cast<double>(hits) / static_cast<double>(student.size());
}

/// Sample Pearson correlation; throws when either side has zero variance.
inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("pearson: length mismatch");
  if (a.size() < 2) throw Error("pearson: need at least two examples");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw Error("pearson: correlation undefined for zero-variance scores");
  return sab / std::sqrt(saa * sbb);
}

template <class T>
std::vector<double> predictions(const MiniTransformer<T>& model, const Dataset& data) {
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& ex : data.examples) out.push_back(predict_label(model, ex.ids));
  return out;
}

template <class T>
double simulability_accuracy(const MiniTransformer<T>& student, const MiniTransformer<T>& teacher, const Dataset& test) {
  if (test.empty()) throw Error("simulability on an empty test set");
  return agreement(predictions(student, test), predictions(teacher, test));
}

template <class T>
double simulability_pearson(const MiniTransformer<T>& student, const MiniTransformer<T>& teacher, const Dataset& test) {
  if (student.config().task != TaskKind::regression) throw Error("pearson simulability needs a regression task");
  return pearson(predictions(student, test), predictions(teacher, test));
}

/// Teacher agreement for classification, Pearson correlation for regression.
template <class T>
double simulability(const MiniTransformer<T>& student, const MiniTransformer<T>& teacher, const Dataset& test) {
  return student.config().task == TaskKind::regression ? simulability_pearson(student, teacher, test)
                                                       : simulability_accuracy(student, teacher, test);
}

/// Accuracy against gold labels.
template <class T>
double gold_accuracy(const MiniTransformer<T>& model, const Dataset& data) {
  std::vector<double> gold;
  for (const auto& ex : data.examples) gold.push_back(ex.label);
  return agreement(predictions(model, data), gold);
}

/// ROC-AUC of scores against a binary mask via the rank-sum statistic with
/// average ranks for ties. Returns nullopt when the mask is single-class.
inline std::optional<double> roc_auc(std::span<const double> scores, std::span<const std::uint8_t> mask) {
  if (scores.size() != mask.size()) throw ShapeError("roc_auc: score/mask length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i]) {
      pos += 1;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

struct AucReport {
  double mean_auc = 0.0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;  // single-class masks
};

/// Mean per-example AUC over examples whose mask has both classes.
inline AucReport plausibility_auc(const std::vector<std::vector<double>>& saliencies,
                                  const std::vector<std::vector<std::uint8_t>>& masks) {
  if (saliencies.size() != masks.size()) throw ShapeError("plausibility_auc: count mismatch");
  AucReport r;
  double total = 0;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    auto auc = roc_auc(saliencies[i], masks[i]);
    if (!auc) {
      ++r.skipped;
      continue;
    }
    total += *auc;
    ++r.evaluated;
  }
  if (r.evaluated > 0) r.mean_auc = total / static_cast<double>(r.evaluated);
  return r;
}

struct SimReport {
  std::vector<double> values;
  double median = 0.0;
  double iqr_low = 0.0;
  double iqr_high = 0.0;
};

/// Percentile with linear interpolation between order statistics.
inline double percentile(std::vector<double> sorted, double q) {
  if (sorted.empty()) throw Error("percentile of empty list");
  std::sort(sorted.begin(), sorted.end());
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Median (lower middle for even counts) with the 25th and 75th percentiles.
/// For two values the percentiles can straddle the lower median; the bounds
/// are widened to contain it.
inline SimReport aggregate_median_iqr(std::vector<double> values) {
  if (values.empty()) throw Error("aggregate_median_iqr: empty list");
  SimReport r;
  r.values = values;
  std::sort(values.begin(), values.end());
  r.median = values[(values.size() - 1) / 2];
  r.iqr_low = std::min(percentile(values, 0.25), r.median);
  r.iqr_high = std::max(percentile(values, 0.75), r.median);
  return r;
}

/// True when the two 25-75 ranges do not intersect.
inline bool iqr_disjoint(const SimReport& a, const SimReport& b) {
  return a.iqr_high < b.iqr_low || b.iqr_high < a.iqr_low;
}

}  // namespace smat
