#pragma once

// JSON experiment configuration with sections model, student, train,
// teacher_train and data. Unknown keys are rejected so typos surface early.

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "smat/data/dataset.hpp"
#include "smat/data/synthetic.hpp"
#include "smat/model/config.hpp"
#include "smat/train/config.hpp"

namespace smat {

using Json = nlohmann::json;

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "tsv"
  SyntheticSpec synthetic = SyntheticSpec::symmetric(4, 40, 7);
  std::size_t size = 3000;  // synthetic examples before splitting
  SplitRatios ratios;
  std::uint64_t split_seed = 0;
  std::string train_path, dev_path, test_path;
  std::size_t min_freq = 1;
  std::size_t student_train_size = 200;  // 0: the whole train split
};

struct ExperimentConfig {
  ModelConfig model;    // teacher
  ModelConfig student;  // defaults to the teacher architecture
  TrainConfig train;
  TeacherTrainConfig teacher_train;
  DataConfig data;
};

namespace cfg_detail {

inline void check_keys(const Json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!ok.contains(it.key())) throw ConfigError("unknown key '" + section + "." + it.key() + "'");
  }
}

template <class V>
void read(const Json& j, const char* key, V& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const Json::exception&) {
    throw ConfigError("bad value for '" + section + "." + key + "'");
  }
}

}  // namespace cfg_detail

inline Json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"max_len", c.max_len},         {"num_layers", c.num_layers},
          {"heads_per_layer", c.heads_per_layer}, {"model_dim", c.model_dim}, {"head_dim", c.head_dim},
          {"ffn_dim", c.ffn_dim},       {"task", to_string(c.task)},   {"num_classes", c.num_classes}};
}

inline ModelConfig model_config_from_json(const Json& j, ModelConfig c = {}, const std::string& section = "model") {
  using namespace cfg_detail;
  check_keys(j, section,
             {"vocab_size", "max_len", "num_layers", "heads_per_layer", "model_dim", "head_dim", "ffn_dim", "task",
              "num_classes"});
  read(j, "vocab_size", c.vocab_size, section);
  read(j, "max_len", c.max_len, section);
  read(j, "num_layers", c.num_layers, section);
  read(j, "heads_per_layer", c.heads_per_layer, section);
  read(j, "model_dim", c.model_dim, section);
  read(j, "head_dim", c.head_dim, section);
  read(j, "ffn_dim", c.ffn_dim, section);
  read(j, "num_classes", c.num_classes, section);
  if (j.contains("task")) {
    std::string t;
    read(j, "task", t, section);
    c.task = task_from_string(t);
  }
  c.validate();
  return c;
}

inline Json to_json(const TrainConfig& c) {
  Json j = {{"lr_inner", c.lr_inner},
            {"lr_outer", c.lr_outer},
            {"steps", c.steps},
            {"batch_size", c.batch_size},
            {"outer_batch_size", c.outer_batch_size},
            {"seed", c.seed},
            {"mode", mode_name(c)},
            {"normalize", to_string(c.normalize)},
            {"sim_loss", c.sim_loss == SimLoss::mse ? "mse" : "cross_entropy"},
            {"kl_direction", to_string(c.kl_direction)},
            {"soft_targets", c.soft_targets},
            {"hvp_mode", c.hvp_mode == HvpMode::exact ? "exact" : "central_difference"},
            {"hvp_eps0", c.hvp.eps0},
            {"hvp_delta", c.hvp.delta},
            {"ig_steps", c.ig_steps},
            {"eval_every", c.eval_every}};
  j["beta"] = c.effective_beta();
  return j;
}

inline TrainConfig train_config_from_json(const Json& j, TrainConfig c = {}) {
  using namespace cfg_detail;
  const std::string s = "train";
  check_keys(j, s,
             {"beta", "lr_inner", "lr_outer", "steps", "batch_size", "outer_batch_size", "seed", "mode", "normalize",
              "sim_loss", "kl_direction", "soft_targets", "hvp_mode", "hvp_eps0", "hvp_delta", "ig_steps",
              "eval_every"});
  if (j.contains("beta")) {
    double b = 0;
    read(j, "beta", b, s);
    c.beta = b;
  }
  read(j, "lr_inner", c.lr_inner, s);
  read(j, "lr_outer", c.lr_outer, s);
  read(j, "steps", c.steps, s);
  read(j, "batch_size", c.batch_size, s);
  read(j, "outer_batch_size", c.outer_batch_size, s);
  read(j, "seed", c.seed, s);
  read(j, "soft_targets", c.soft_targets, s);
  read(j, "hvp_eps0", c.hvp.eps0, s);
  read(j, "hvp_delta", c.hvp.delta, s);
  read(j, "ig_steps", c.ig_steps, s);
  read(j, "eval_every", c.eval_every, s);
  std::string str;
  if (j.contains("mode")) {
    read(j, "mode", str, s);
    set_mode(c, str);
  }
  if (j.contains("normalize")) {
    read(j, "normalize", str, s);
    c.normalize = normalize_from_string(str);
  }
  if (j.contains("sim_loss")) {
    read(j, "sim_loss", str, s);
    if (str == "mse") {
      c.sim_loss = SimLoss::mse;
    } else if (str == "cross_entropy") {
      c.sim_loss = SimLoss::cross_entropy;
    } else {
      throw ConfigError("unknown train.sim_loss '" + str + "'");
    }
  }
  if (j.contains("kl_direction")) {
    read(j, "kl_direction", str, s);
    c.kl_direction = kl_direction_from_string(str);
  }
  if (j.contains("hvp_mode")) {
    read(j, "hvp_mode", str, s);
    if (str == "exact") {
      c.hvp_mode = HvpMode::exact;
    } else if (str == "central_difference") {
      c.hvp_mode = HvpMode::central_difference;
    } else {
      throw ConfigError("unknown train.hvp_mode '" + str + "'");
    }
  }
  c.validate();
  return c;
}

inline Json to_json(const TeacherTrainConfig& c) {
  return {{"lr", c.lr}, {"momentum", c.momentum}, {"epochs", c.epochs}, {"batch_size", c.batch_size}, {"seed", c.seed}};
}

inline TeacherTrainConfig teacher_train_config_from_json(const Json& j, TeacherTrainConfig c = {}) {
  using namespace cfg_detail;
  const std::string s = "teacher_train";
  check_keys(j, s, {"lr", "momentum", "epochs", "batch_size", "seed"});
  read(j, "lr", c.lr, s);
  read(j, "momentum", c.momentum, s);
  read(j, "epochs", c.epochs, s);
  read(j, "batch_size", c.batch_size, s);
  read(j, "seed", c.seed, s);
  if (!(c.lr > 0) || c.momentum < 0 || c.momentum >= 1 || c.batch_size == 0) {
    throw ConfigError("teacher_train needs lr > 0, momentum in [0, 1) and batch_size > 0");
  }
  return c;
}

inline Json to_json(const SyntheticSpec& s) {
  Json cues = Json::object();
  for (const auto& [w, p] : s.cues) cues[w] = p;
  return {{"vocab_size", s.vocab_size}, {"cues", cues},         {"min_len", s.min_len},
          {"max_len", s.max_len},       {"noise_ratio", s.noise_ratio}, {"seed", s.seed}};
}

/// `cues` is either a count of cues per polarity or an object word -> +1/-1.
inline SyntheticSpec synthetic_spec_from_json(const Json& j, SyntheticSpec s) {
  using namespace cfg_detail;
  const std::string sec = "data.synthetic";
  check_keys(j, sec, {"vocab_size", "cues", "min_len", "max_len", "noise_ratio", "seed"});
  read(j, "vocab_size", s.vocab_size, sec);
  read(j, "min_len", s.min_len, sec);
  read(j, "max_len", s.max_len, sec);
  read(j, "noise_ratio", s.noise_ratio, sec);
  read(j, "seed", s.seed, sec);
  if (j.contains("cues")) {
    const Json& c = j.at("cues");
    if (c.is_number_unsigned()) {
      const auto fresh = SyntheticSpec::symmetric(c.get<std::size_t>(), s.vocab_size, s.seed);
      s.cues = fresh.cues;
    } else if (c.is_object()) {
      s.cues.clear();
      for (auto it = c.begin(); it != c.end(); ++it) {
        if (!it.value().is_number_integer()) throw ConfigError("cue polarity must be an integer for '" + it.key() + "'");
        s.cues.emplace_back(it.key(), it.value().get<int>());
      }
    } else {
      throw ConfigError("data.synthetic.cues must be a count or an object");
    }
  }
  s.validate();
  return s;
}

inline Json to_json(const DataConfig& d) {
  Json j = {{"source", d.source},
            {"split_seed", d.split_seed},
            {"ratios", {d.ratios.train, d.ratios.dev, d.ratios.test}},
            {"student_train_size", d.student_train_size}};
  if (d.source == "synthetic") {
    j["synthetic"] = to_json(d.synthetic);
    j["size"] = d.size;
  } else {
    j["train"] = d.train_path;
    j["dev"] = d.dev_path;
    j["test"] = d.test_path;
    j["min_freq"] = d.min_freq;
  }
  return j;
}

inline DataConfig data_config_from_json(const Json& j, DataConfig d = {}) {
  using namespace cfg_detail;
  const std::string s = "data";
  check_keys(j, s,
             {"source", "synthetic", "size", "ratios", "split_seed", "train", "dev", "test", "min_freq",
              "student_train_size"});
  read(j, "source", d.source, s);
  if (d.source != "synthetic" && d.source != "tsv") throw ConfigError("data.source must be synthetic or tsv");
  if (j.contains("synthetic")) d.synthetic = synthetic_spec_from_json(j.at("synthetic"), d.synthetic);
  read(j, "size", d.size, s);
  read(j, "split_seed", d.split_seed, s);
  read(j, "train", d.train_path, s);
  read(j, "dev", d.dev_path, s);
  read(j, "test", d.test_path, s);
  read(j, "min_freq", d.min_freq, s);
  read(j, "student_train_size", d.student_train_size, s);
  if (j.contains("ratios")) {
    std::vector<double> r;
    read(j, "ratios", r, s);
    if (r.size() != 3) throw ConfigError("data.ratios must list train, dev and test fractions");
    d.ratios = {r[0], r[1], r[2]};
  }
  if (d.source == "tsv" && (d.train_path.empty() || d.dev_path.empty() || d.test_path.empty())) {
    throw ConfigError("tsv data needs data.train, data.dev and data.test paths");
  }
  return d;
}

inline Json to_json(const ExperimentConfig& c) {
  return {{"model", to_json(c.model)},
          {"student", to_json(c.student)},
          {"train", to_json(c.train)},
          {"teacher_train", to_json(c.teacher_train)},
          {"data", to_json(c.data)}};
}

inline ExperimentConfig experiment_config_from_json(const Json& j) {
  cfg_detail::check_keys(j, "<root>", {"model", "student", "train", "teacher_train", "data"});
  ExperimentConfig c;
  if (j.contains("data")) c.data = data_config_from_json(j.at("data"));
  if (c.data.source == "synthetic") c.model.vocab_size = c.data.synthetic.vocab_size;
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"), c.model);
  c.student = j.contains("student") ? model_config_from_json(j.at("student"), c.model, "student") : c.model;
  if (c.student.vocab_size != c.model.vocab_size || c.student.task != c.model.task ||
      c.student.output_dim() != c.model.output_dim()) {
    throw ConfigError("student and teacher must share vocabulary size and task head");
  }
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (c.model.task == TaskKind::regression && !(j.contains("train") && j.at("train").contains("sim_loss"))) {
    c.train.sim_loss = SimLoss::mse;
  }
  if (j.contains("teacher_train")) c.teacher_train = teacher_train_config_from_json(j.at("teacher_train"));
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

struct LoadedData {
  DataSplits splits;
  Vocabulary vocab;
};

/// Builds the train/dev/test splits and vocabulary described by `d`.
inline LoadedData load_data(const DataConfig& d, TaskKind task) {
  LoadedData out;
  if (d.source == "synthetic") {
    out.vocab = synthetic_vocabulary(d.synthetic);
    out.splits = split_dataset(generate_synthetic(d.synthetic, d.size), d.split_seed, d.ratios);
  } else {
    out.splits.train = load_tsv(d.train_path, task);
    out.splits.dev = load_tsv(d.dev_path, task);
    out.splits.test = load_tsv(d.test_path, task);
    out.vocab = build_vocab(out.splits.train, d.min_freq);
    apply_vocab(out.splits.train, out.vocab);
    apply_vocab(out.splits.dev, out.vocab);
    apply_vocab(out.splits.test, out.vocab);
  }
  return out;
}

/// Student training examples: a prefix of the train split.
inline Dataset student_train_split(const LoadedData& data, const DataConfig& d) {
  return take(data.splits.train, d.student_train_size);
}

}  // namespace smat
