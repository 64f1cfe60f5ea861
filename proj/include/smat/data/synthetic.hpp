#pragma once

// Cue-token sentiment task with known gold rationales. Each sequence is noise
// words with a few planted polarity cues; the label is the sign of the summed
// cue polarity and the rationale marks the cue positions.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "smat/data/dataset.hpp"

namespace smat {

struct SyntheticSpec {
  std::size_t vocab_size = 64;  // total, including <pad>, <unk> and the cues
  std::vector<std::pair<std::string, int>> cues;
  std::size_t min_len = 8;
  std::size_t max_len = 16;
  double noise_ratio = 0.75;  // fraction of positions filled with noise words
  std::uint64_t seed = 1;

  /// `per_polarity` positive cues good0.. and as many negative cues bad0..
  static SyntheticSpec symmetric(std::size_t per_polarity, std::size_t vocab_size, std::uint64_t seed) {
    SyntheticSpec s;
    s.vocab_size = vocab_size;
    s.seed = seed;
    for (std::size_t i = 0; i < per_polarity; ++i) s.cues.emplace_back("good" + std::to_string(i), +1);
    for (std::size_t i = 0; i < per_polarity; ++i) s.cues.emplace_back("bad" + std::to_string(i), -1);
    return s;
  }

  std::size_t noise_words() const { return vocab_size - 2 - cues.size(); }

  std::size_t cues_for_length(std::size_t len) const {
    const auto k = static_cast<std::size_t>(std::lround(static_cast<double>(len) * (1.0 - noise_ratio)));
    return std::max<std::size_t>(1, std::min(k, len));
  }

  void validate() const {
    bool pos = false, neg = false;
    for (const auto& [w, p] : cues) {
      if (p != 1 && p != -1) throw ConfigError("cue polarity must be +1 or -1 for '" + w + "'");
      pos |= p > 0;
      neg |= p < 0;
    }
    if (cues.empty() || !pos || !neg) throw ConfigError("cue lexicon needs positive and negative cues");
    if (vocab_size < cues.size() + 3) throw ConfigError("vocab_size leaves no room for noise words");
    if (min_len < 1 || max_len < min_len) throw ConfigError("infeasible sequence length range");
    if (!(noise_ratio >= 0.0 && noise_ratio < 1.0)) throw ConfigError("noise_ratio must be in [0, 1)");
  }
};

/// <pad>, <unk>, cues in lexicon order, then noise words w0, w1, ...
inline Vocabulary synthetic_vocabulary(const SyntheticSpec& spec) {
  spec.validate();
  Vocabulary v;
  for (const auto& c : spec.cues) v.add(c.first);
  for (std::size_t i = 0; i < spec.noise_words(); ++i) v.add("w" + std::to_string(i));
  return v;
}

/// Label and rationale implied by a token sequence under a cue lexicon:
/// label 1 iff the summed polarity is positive; the mask marks cue positions.
inline std::pair<int, std::vector<std::uint8_t>> label_from_cues(
    const std::vector<std::string>& tokens, const std::vector<std::pair<std::string, int>>& cues) {
  int net = 0;
  std::vector<std::uint8_t> mask(tokens.size(), 0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (const auto& [w, p] : cues) {
      if (tokens[i] == w) {
        net += p;
        mask[i] = 1;
        break;
      }
    }
  }
  return {net > 0 ? 1 : 0, std::move(mask)};
}

/// Deterministic in (spec, n). Sequences with zero net polarity are redrawn.
inline Dataset generate_synthetic(const SyntheticSpec& spec, std::size_t n) {
  spec.validate();
  if (n < 1) throw ConfigError("generate_synthetic needs n >= 1");
  const Vocabulary vocab = synthetic_vocabulary(spec);
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> len_dist(spec.min_len, spec.max_len);
  std::uniform_int_distribution<std::size_t> cue_dist(0, spec.cues.size() - 1);
  std::uniform_int_distribution<std::size_t> noise_dist(0, spec.noise_words() - 1);

  Dataset data;
  data.task = TaskKind::classification;
  data.examples.reserve(n);
  while (data.examples.size() < n) {
    const std::size_t len = len_dist(rng);
    const std::size_t k = spec.cues_for_length(len);
    std::vector<std::size_t> positions(len);
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    std::shuffle(positions.begin(), positions.end(), rng);
    Example ex;
    ex.tokens.resize(len);
    for (auto& t : ex.tokens) t = "w" + std::to_string(noise_dist(rng));
    int net = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const auto& cue = spec.cues[cue_dist(rng)];
      ex.tokens[positions[j]] = cue.first;
      net += cue.second;
    }
    if (net == 0) continue;
    auto [label, mask] = label_from_cues(ex.tokens, spec.cues);
    ex.label = label;
    ex.rationale = std::move(mask);
    ex.ids = tokenize(ex.tokens, vocab);
    data.examples.push_back(std::move(ex));
  }
  return data;
}

}  // namespace smat
