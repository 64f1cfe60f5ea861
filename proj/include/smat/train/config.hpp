#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "smat/core/hvp.hpp"
#include "smat/explain/explainers.hpp"

namespace smat {

enum class TrainMode { none, static_explainer, smat };
enum class KlDirection { teacher_to_student, student_to_teacher };
enum class SimLoss { cross_entropy, mse };

struct TrainConfig {
  std::optional<double> beta;  // unset: 5 for attention/learned, 0.2 for gradient explainers
  double lr_inner = 0.1;
  double lr_outer = 0.05;
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  std::size_t outer_batch_size = 32;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::smat;
  StaticExplainer static_explainer = StaticExplainer::attn_all;
  Normalize normalize = Normalize::sparsemax;
  SimLoss sim_loss = SimLoss::cross_entropy;
  KlDirection kl_direction = KlDirection::teacher_to_student;
  bool soft_targets = false;  // distill teacher probabilities instead of hard labels
  HvpMode hvp_mode = HvpMode::central_difference;
  HvpOptions hvp;
  std::size_t ig_steps = 10;
  std::size_t eval_every = 100;  // 0: only at the end

  double effective_beta() const {
    if (mode == TrainMode::none) return 0.0;
    if (beta) return *beta;
    if (mode == TrainMode::static_explainer && !is_attention_explainer(static_explainer)) return 0.2;
    return 5.0;
  }

  /// Scope of the student explainer: it mirrors a last-layer teacher explainer.
  HeadScope student_scope() const {
    return mode == TrainMode::static_explainer && static_explainer == StaticExplainer::attn_last
               ? HeadScope::last_layer
               : HeadScope::all_layers;
  }

  void validate() const {
    if (beta && *beta < 0) throw ConfigError("train.beta must be >= 0");
    if (!(lr_inner > 0)) throw ConfigError("train.lr_inner must be > 0");
    if (!(lr_outer >= 0)) throw ConfigError("train.lr_outer must be >= 0");
    if (batch_size == 0 || outer_batch_size == 0) throw ConfigError("batch sizes must be positive");
    if (ig_steps == 0) throw ConfigError("train.ig_steps must be >= 1");
  }
};

inline std::string mode_name(const TrainConfig& c) {
  switch (c.mode) {
    case TrainMode::none: return "none";
    case TrainMode::smat: return "smat";
    case TrainMode::static_explainer: return std::string("static:") + to_string(c.static_explainer);
  }
  return "?";
}

/// Parses "none", "smat" or "static:NAME" into the config.
inline void set_mode(TrainConfig& c, const std::string& s) {
  if (s == "none") {
    c.mode = TrainMode::none;
  } else if (s == "smat") {
    c.mode = TrainMode::smat;
  } else if (s.rfind("static:", 0) == 0) {
    c.mode = TrainMode::static_explainer;
    c.static_explainer = static_explainer_from_string(s.substr(7));
  } else {
    throw ConfigError("unknown mode '" + s + "' (expected none, static:NAME or smat)");
  }
}

inline KlDirection kl_direction_from_string(const std::string& s) {
  if (s == "teacher_to_student") return KlDirection::teacher_to_student;
  if (s == "student_to_teacher") return KlDirection::student_to_teacher;
  throw ConfigError("unknown kl_direction '" + s + "'");
}

inline const char* to_string(KlDirection k) {
  return k == KlDirection::teacher_to_student ? "teacher_to_student" : "student_to_teacher";
}

/// Teacher optimization at desk scale: SGD with momentum on gold labels.
struct TeacherTrainConfig {
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

}  // namespace smat
