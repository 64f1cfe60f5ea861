#pragma once

// Two-player Gaussian skill rating applied to ranked lists by adjacent-pair
// decomposition, plus a partial order from 95% rating intervals.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "smat/core/error.hpp"

namespace smat {

struct SkillParams {
  double mu0 = 0.0;
  double sigma0 = 0.5;
  double beta = 0.25;  // performance noise, sigma0 / 2
  double draw_probability = 0.1;
};

struct Skill {
  double mu = 0.0;
  double sigma = 0.5;
};

/// One ranking: groups of tied methods, best group first.
using Ranking = std::vector<std::vector<std::string>>;

namespace ts_detail {

inline double pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
inline double cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double inv_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("inv_cdf: probability must lie in (0, 1)");
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Win correction functions for a performance difference t and margin e.
inline double v_win(double t, double e) {
  const double x = t - e;
  const double denom = cdf(x);
  return denom < 1e-300 ? -x : pdf(x) / denom;
}
inline double w_win(double t, double e) {
  const double v = v_win(t, e);
  return v * (v + t - e);
}

inline double v_draw(double t, double e) {
  const double a = e - t, b = -e - t;
  const double denom = cdf(a) - cdf(b);
  if (denom < 1e-300) return t < 0 ? -t - e : -t + e;
  return (pdf(b) - pdf(a)) / denom;
}
inline double w_draw(double t, double e) {
  const double a = e - t, b = -e - t;
  const double denom = cdf(a) - cdf(b);
  if (denom < 1e-300) return 1.0;
  const double v = v_draw(t, e);
  return v * v + (a * pdf(a) - b * pdf(b)) / denom;
}

}  // namespace ts_detail

class SkillRatings {
 public:
  explicit SkillRatings(SkillParams p = {}) : p_(p) {
    if (!(p_.sigma0 > 0) || !(p_.beta > 0)) throw ConfigError("rating sigma and beta must be positive");
    if (!(p_.draw_probability > 0 && p_.draw_probability < 1)) throw ConfigError("draw probability must be in (0, 1)");
  }

  const SkillParams& params() const { return p_; }

  void add(const std::string& name) {
    if (!ratings_.contains(name)) ratings_.emplace(name, Skill{p_.mu0, p_.sigma0});
  }
  bool contains(const std::string& name) const { return ratings_.contains(name); }

  const Skill& at(const std::string& name) const {
    auto it = ratings_.find(name);
    if (it == ratings_.end()) throw ConfigError("unknown method '" + name + "'");
    return it->second;
  }
  const std::map<std::string, Skill>& all() const { return ratings_; }

  /// Margin for a two-player match such that a tie between equal players has
  /// the configured probability.
  double draw_margin() const {
    return ts_detail::inv_cdf(0.5 * (p_.draw_probability + 1.0)) * std::numbers::sqrt2 * p_.beta;
  }

  /// `first` ranked above `second`, or tied with it when `draw` is set.
  void update(const std::string& first, const std::string& second, bool draw = false) {
    if (first == second) throw ConfigError("a method cannot play itself: '" + first + "'");
    Skill& a = ref(first);
    Skill& b = ref(second);
    const double c2 = 2.0 * p_.beta * p_.beta + a.sigma * a.sigma + b.sigma * b.sigma;
    const double c = std::sqrt(c2);
    const double t = (a.mu - b.mu) / c;
    const double e = draw_margin() / c;
    const double v = draw ? ts_detail::v_draw(t, e) : ts_detail::v_win(t, e);
    const double w = draw ? ts_detail::w_draw(t, e) : ts_detail::w_win(t, e);
    const double a2 = a.sigma * a.sigma, b2 = b.sigma * b.sigma;
    a.mu += a2 / c * v;
    b.mu -= b2 / c * v;
    a.sigma = std::sqrt(a2 * std::max(1.0 - a2 / c2 * w, 1e-12));
    b.sigma = std::sqrt(b2 * std::max(1.0 - b2 / c2 * w, 1e-12));
  }

  /// Adjacent pairs of the flattened ranking update in order; neighbours in
  /// the same group are draws.
  void update(const Ranking& ranking) {
    std::vector<std::pair<std::string, std::size_t>> flat;
    for (std::size_t g = 0; g < ranking.size(); ++g)
      for (const auto& name : ranking[g]) flat.emplace_back(name, g);
    if (flat.size() < 2) throw ConfigError("a ranking needs at least two methods");
    for (const auto& [name, g] : flat) (void)at(name);
    for (std::size_t i = 0; i + 1 < flat.size(); ++i) {
      update(flat[i].first, flat[i + 1].first, flat[i].second == flat[i + 1].second);
    }
  }

 private:
  Skill& ref(const std::string& name) {
    auto it = ratings_.find(name);
    if (it == ratings_.end()) throw ConfigError("unknown method '" + name + "'");
    return it->second;
  }

  SkillParams p_;
  std::map<std::string, Skill> ratings_;
};

/// "A,B=C,D": comma separates ranks, '=' joins tied methods.
inline Ranking parse_ranking(const std::string& line) {
  Ranking r;
  std::stringstream groups(line);
  std::string group;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(groups, group, ',')) {
    std::vector<std::string> tied;
    std::stringstream gs(group);
    std::string name;
    while (std::getline(gs, name, '=')) {
      name = trim(name);
      if (name.empty()) throw FormatError("empty method name in ranking '" + line + "'");
      tied.push_back(name);
    }
    if (tied.empty()) throw FormatError("empty rank group in ranking '" + line + "'");
    r.push_back(std::move(tied));
  }
  return r;
}

inline std::vector<Ranking> load_rankings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<Ranking> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    out.push_back(parse_ranking(line));
  }
  if (out.empty()) throw FormatError(path + ": rankings file is empty");
  return out;
}

/// Ratings after playing every ranking in order from the prior.
inline SkillRatings rate_rankings(const std::vector<Ranking>& rankings, SkillParams p = {}) {
  SkillRatings r(p);
  for (const auto& rk : rankings)
    for (const auto& g : rk)
      for (const auto& name : g) r.add(name);
  for (const auto& rk : rankings) r.update(rk);
  return r;
}

struct RankedMethod {
  std::string name;
  Skill skill;
  std::size_t best = 1;   // 1 + number of methods whose interval lies strictly above
  std::size_t worst = 1;  // N - number of methods whose interval lies strictly below
  std::string label() const {
    return best == worst ? std::to_string(best) : std::to_string(best) + "-" + std::to_string(worst);
  }
};

/// Partial order from mu +- z sigma intervals, sorted by descending mu.
inline std::vector<RankedMethod> rank_with_confidence(const std::vector<std::pair<std::string, Skill>>& ratings,
                                                      double z = 1.96) {
  const std::size_t n = ratings.size();
  std::vector<RankedMethod> out;
  for (const auto& [name, s] : ratings) {
    if (!(s.sigma > 0)) throw ConfigError("rating sigma must be positive for '" + name + "'");
    std::size_t above = 0, below = 0;
    for (const auto& [other, o] : ratings) {
      above += o.mu - z * o.sigma > s.mu + z * s.sigma;
      below += s.mu - z * s.sigma > o.mu + z * o.sigma;
    }
    out.push_back({name, s, 1 + above, n - below});
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.skill.mu > b.skill.mu; });
  return out;
}

inline std::vector<RankedMethod> rank_with_confidence(const SkillRatings& r, double z = 1.96) {
  return rank_with_confidence(std::vector<std::pair<std::string, Skill>>(r.all().begin(), r.all().end()), z);
}

/// Kendall tau-a between two score vectors over the same items.
inline double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw ShapeError("kendall_tau: need two equal-length lists of >= 2");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double x = (a[i] - a[j]) * (b[i] - b[j]);
      s += x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
    }
  }
  const double pairs = 0.5 * static_cast<double>(a.size() * (a.size() - 1));
  return s / pairs;
}

}  // namespace smat
