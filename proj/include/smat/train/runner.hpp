#pragma once

// Multi-seed student runs: seed i trains with base_seed + i and the runs share
// only the read-only teacher and data.

#include <algorithm>
#include <cstdio>
#include <future>
#include <string>
#include <vector>

#include "smat/eval/metrics.hpp"
#include "smat/train/smat.hpp"

namespace smat {

template <class T>
struct SeedRun {
  std::uint64_t seed = 0;
  double test_simulability = 0.0;
  TrainResult<T> result;
};

template <class T>
struct MultiSeedResult {
  std::string mode;
  std::vector<SeedRun<T>> runs;
  SimReport simulability;  // over test simulability of each seed
};

/// Runs `n` students in seed order; `jobs` > 1 trains that many at once.
template <class T>
MultiSeedResult<T> train_seeds(const TrainConfig& base, const ModelConfig& student_cfg,
                               const MiniTransformer<T>& teacher, const DataSplits& splits, std::size_t n,
                               std::size_t jobs = 1) {
  if (n == 0) throw ConfigError("need at least one seed");
  auto one = [&](std::size_t i) {
    TrainConfig cfg = base;
    cfg.seed = base.seed + i;
    SeedRun<T> run{cfg.seed, 0.0, train<T>(cfg, student_cfg, teacher, splits)};
    run.test_simulability = simulability(run.result.student, teacher, splits.test);
    return run;
  };
  MultiSeedResult<T> out;
  out.mode = mode_name(base);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) out.runs.push_back(one(i));
  } else {
    for (std::size_t start = 0; start < n; start += jobs) {
      std::vector<std::future<SeedRun<T>>> pending;
      for (std::size_t i = start; i < std::min(n, start + jobs); ++i) pending.push_back(std::async(std::launch::async, one, i));
      for (auto& f : pending) out.runs.push_back(f.get());
    }
  }
  std::vector<double> sims;
  for (const auto& r : out.runs) sims.push_back(r.test_simulability);
  out.simulability = aggregate_median_iqr(sims);
  return out;
}

/// "median [p25:p75]" with four decimals.
inline std::string format_median_iqr(const SimReport& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.4f [%.4f:%.4f]", r.median, r.iqr_low, r.iqr_high);
  return buf;
}

}  // namespace smat
