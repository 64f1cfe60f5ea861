#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "smat/core/error.hpp"
#include "smat/model/config.hpp"
#include "smat/model/transformer.hpp"

namespace smat {

struct Example {
  TokenIds ids;
  std::vector<std::string> tokens;
  double label = 0.0;  // class id or regression score
  std::optional<std::vector<std::uint8_t>> rationale;
};

struct Dataset {
  TaskKind task = TaskKind::classification;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  const Example& operator[](std::size_t i) const { return examples[i]; }
  bool has_rationales() const {
    return std::any_of(examples.begin(), examples.end(), [](const Example& e) { return e.rationale.has_value(); });
  }
};

/// Token strings <-> ids. Id 0 is padding and id 1 the unknown token.
class Vocabulary {
 public:
  Vocabulary() : words_{"<pad>", "<unk>"} { rebuild_index(); }
  explicit Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    if (words_.size() < 2 || words_[0] != "<pad>" || words_[1] != "<unk>") {
      throw FormatError("vocabulary must start with <pad>, <unk>");
    }
    rebuild_index();
  }

  std::int32_t id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnkId : it->second;
  }
  const std::string& word(std::int32_t id) const { return words_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  std::int32_t add(const std::string& word) {
    auto it = index_.find(word);
    if (it != index_.end()) return it->second;
    const auto id = static_cast<std::int32_t>(words_.size());
    words_.push_back(word);
    index_.emplace(word, id);
    return id;
  }

 private:
  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], static_cast<std::int32_t>(i));
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, std::int32_t> index_;
};

/// Lowercased whitespace tokenization.
inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) {
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.push_back(w);
  }
  return out;
}

inline TokenIds tokenize(const std::vector<std::string>& words, const Vocabulary& vocab) {
  TokenIds ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(vocab.id(w));
  return ids;
}

inline TokenIds tokenize(const std::string& text, const Vocabulary& vocab) {
  return tokenize(split_words(text), vocab);
}

/// Words with count >= min_freq, ordered by descending frequency then lexicographically.
inline Vocabulary build_vocab(const Dataset& data, std::size_t min_freq = 1) {
  std::map<std::string, std::size_t> counts;
  for (const auto& ex : data.examples)
    for (const auto& t : ex.tokens) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> entries(counts.begin(), counts.end());
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [w, c] : entries) {
    if (c >= min_freq && w != "<pad>" && w != "<unk>") v.add(w);
  }
  return v;
}

/// Re-assigns ids for every example from its token strings.
inline void apply_vocab(Dataset& data, const Vocabulary& vocab) {
  for (auto& ex : data.examples) ex.ids = tokenize(ex.tokens, vocab);
}

/// Rows: text<TAB>label-or-score[<TAB>space separated 0/1 rationale].
/// Ids are left empty until apply_vocab.
inline Dataset parse_tsv(std::istream& in, TaskKind task, const std::string& source = "<stream>") {
  Dataset data;
  data.task = task;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    auto fail = [&](const std::string& why) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": " + why);
    };
    if (cols.size() < 2 || cols.size() > 3) fail("expected 2 or 3 tab-separated columns");
    Example ex;
    ex.tokens = split_words(cols[0]);
    if (ex.tokens.empty()) fail("empty text");
    try {
      std::size_t used = 0;
      ex.label = std::stod(cols[1], &used);
      if (used != cols[1].size()) fail("bad label '" + cols[1] + "'");
    } catch (const std::logic_error&) {
      fail("bad label '" + cols[1] + "'");
    }
    if (task == TaskKind::classification && (ex.label < 0 || ex.label != std::floor(ex.label))) {
      fail("classification label must be a non-negative integer");
    }
    if (cols.size() == 3 && !cols[2].empty()) {
      std::vector<std::uint8_t> mask;
      std::istringstream ms(cols[2]);
      std::string m;
      while (ms >> m) {
        if (m != "0" && m != "1") fail("rationale entries must be 0 or 1");
        mask.push_back(m == "1" ? 1 : 0);
      }
      if (mask.size() != ex.tokens.size()) {
        fail("rationale has " + std::to_string(mask.size()) + " entries for " + std::to_string(ex.tokens.size()) +
             " tokens");
      }
      ex.rationale = std::move(mask);
    }
    data.examples.push_back(std::move(ex));
  }
  return data;
}

inline Dataset load_tsv(const std::string& path, TaskKind task = TaskKind::classification) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  return parse_tsv(in, task, path);
}

inline void write_tsv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  for (const auto& ex : data.examples) {
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) out << (i ? " " : "") << ex.tokens[i];
    out << '\t';
    if (data.task == TaskKind::classification) {
      out << static_cast<long long>(ex.label);
    } else {
      out << ex.label;
    }
    if (ex.rationale) {
      out << '\t';
      for (std::size_t i = 0; i < ex.rationale->size(); ++i) out << (i ? " " : "") << int((*ex.rationale)[i]);
    }
    out << '\n';
  }
}

struct SplitRatios {
  double train = 0.70;
  double dev = 0.15;
  double test = 0.15;
};

struct DataSplits {
  Dataset train;
  Dataset dev;
  Dataset test;
};

/// Seeded shuffle then contiguous cut; every example lands in exactly one split.
inline DataSplits split_dataset(const Dataset& data, std::uint64_t seed, SplitRatios r = {}) {
  if (r.train < 0 || r.dev < 0 || r.test < 0 || r.train + r.dev + r.test <= 0) {
    throw ConfigError("split ratios must be non-negative and not all zero");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const double total = r.train + r.dev + r.test;
  const auto n = data.size();
  const auto n_train = static_cast<std::size_t>(std::floor(n * r.train / total));
  const auto n_dev = static_cast<std::size_t>(std::floor(n * r.dev / total));
  DataSplits s;
  s.train.task = s.dev.task = s.test.task = data.task;
  for (std::size_t i = 0; i < n; ++i) {
    Dataset& dst = i < n_train ? s.train : (i < n_train + n_dev ? s.dev : s.test);
    dst.examples.push_back(data.examples[order[i]]);
  }
  return s;
}

/// First `n` examples (or all when n == 0 or n >= size).
inline Dataset take(const Dataset& data, std::size_t n) {
  Dataset out;
  out.task = data.task;
  const std::size_t k = (n == 0 || n >= data.size()) ? data.size() : n;
  out.examples.assign(data.examples.begin(), data.examples.begin() + static_cast<std::ptrdiff_t>(k));
  return out;
}

}  // namespace smat
