#pragma once

#include <cstddef>
#include <string>

#include "smat/core/error.hpp"

namespace smat {

enum class TaskKind { classification, regression };

struct ModelConfig {
  std::size_t vocab_size = 64;
  std::size_t max_len = 32;
  std::size_t num_layers = 2;
  std::size_t heads_per_layer = 4;
  std::size_t model_dim = 32;
  std::size_t head_dim = 8;
  std::size_t ffn_dim = 64;
  TaskKind task = TaskKind::classification;
  std::size_t num_classes = 2;

  std::size_t total_heads() const { return num_layers * heads_per_layer; }
  std::size_t output_dim() const { return task == TaskKind::classification ? num_classes : 1; }

  void validate() const {
    if (vocab_size < 2) throw ConfigError("model.vocab_size must be >= 2 (pad and unk)");
    if (max_len == 0) throw ConfigError("model.max_len must be positive");
    if (num_layers == 0 || heads_per_layer == 0) throw ConfigError("model needs at least one head");
    if (model_dim != heads_per_layer * head_dim) {
      throw ConfigError("model.model_dim must equal heads_per_layer * head_dim");
    }
    if (ffn_dim == 0) throw ConfigError("model.ffn_dim must be positive");
    if (task == TaskKind::classification && num_classes < 2) {
      throw ConfigError("classification needs num_classes >= 2");
    }
  }
};

inline const char* to_string(TaskKind t) {
  return t == TaskKind::classification ? "classification" : "regression";
}

inline TaskKind task_from_string(const std::string& s) {
  if (s == "classification") return TaskKind::classification;
  if (s == "regression") return TaskKind::regression;
  throw ConfigError("unknown task '" + s + "'");
}

}  // namespace smat
