// smat command-line interface.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "smat/smat.hpp"

namespace fs = std::filesystem;
using namespace smat;

namespace {

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

/// Test examples from a TSV file (tokenized with `vocab`) or the test split of an experiment config.
Dataset load_eval_data(const std::string& path, const Vocabulary& vocab, TaskKind task) {
  if (fs::path(path).extension() == ".json") {
    const auto cfg = load_experiment_config(path);
    return load_data(cfg.data, cfg.model.task).splits.test;
  }
  auto data = load_tsv(path, task);
  apply_vocab(data, vocab);
  return data;
}

// ---------------------------------------------------------------------------

int cmd_train_teacher(const std::string& config_path, const std::string& out) {
  const auto cfg = load_experiment_config(config_path);
  const auto data = load_data(cfg.data, cfg.model.task);
  ModelConfig mc = cfg.model;
  if (cfg.data.source == "tsv") mc.vocab_size = data.vocab.size();
  auto teacher = train_teacher<float>(mc, cfg.teacher_train, data.splits.train);
  Json meta = {{"kind", "teacher"}, {"config", to_json(cfg)}};
  save_model(teacher, out, data.vocab, meta);
  if (mc.task == TaskKind::regression) {
    std::vector<double> gold;
    for (const auto& ex : data.splits.test.examples) gold.push_back(ex.label);
    std::printf("teacher test pearson=%.4f\n", pearson(predictions(teacher, data.splits.test), gold));
  } else {
    std::printf("teacher test gold_accuracy=%.4f\n", gold_accuracy(teacher, data.splits.test));
  }
  return 0;
}

int cmd_train_student(const std::string& config_path, const std::string& teacher_path, const std::string& mode,
                      std::size_t seeds, const std::string& out_dir, std::size_t jobs) {
  auto cfg = load_experiment_config(config_path);
  set_mode(cfg.train, mode);
  if (cfg.train.mode == TrainMode::none && cfg.train.beta && *cfg.train.beta != 0.0) {
    std::fprintf(stderr, "warning: mode none ignores train.beta = %g (using 0)\n", *cfg.train.beta);
  }
  const auto loaded = load_model<float>(teacher_path);
  const auto& teacher = loaded.model;
  auto data = load_data(cfg.data, cfg.model.task);
  if (cfg.data.source == "tsv") {
    // Re-tokenize with the teacher's vocabulary so ids agree.
    apply_vocab(data.splits.train, loaded.vocab);
    apply_vocab(data.splits.dev, loaded.vocab);
    apply_vocab(data.splits.test, loaded.vocab);
  }
  ModelConfig sc = cfg.student;
  sc.vocab_size = teacher.config().vocab_size;
  DataSplits splits{student_train_split(data, cfg.data), data.splits.dev, data.splits.test};

  const auto result = train_seeds<float>(cfg.train, sc, teacher, splits, seeds, jobs);

  fs::create_directories(out_dir);
  Json manifest = {{"config_hash", fnv1a_hex(to_json(cfg).dump())},
                   {"config", to_json(cfg)},
                   {"teacher", teacher_path},
                   {"mode", result.mode}};
  Json runs = Json::array();
  std::vector<double> active;
  for (const auto& run : result.runs) {
    const std::string stem = "seed_" + std::to_string(run.seed);
    const fs::path ckpt = fs::path(out_dir) / (stem + ".smat");
    std::vector<NamedTensor> extra{{"phi_s", {run.result.phi_s.size()}, run.result.phi_s}};
    if (cfg.train.mode == TrainMode::smat) extra.push_back({"phi_t", {run.result.phi_t.size()}, run.result.phi_t});
    TrainConfig tc = cfg.train;
    tc.seed = run.seed;
    save_model(run.result.student, ckpt.string(), loaded.vocab, {{"kind", "student"}, {"train", to_json(tc)}},
               extra);
    Json entry = {{"seed", run.seed}, {"checkpoint", ckpt.string()}, {"test_simulability", run.test_simulability}};
    Json log = Json::array();
    for (const auto& m : run.result.log) {
      log.push_back({{"step", m.step},
                     {"train_loss", m.train_loss},
                     {"dev_simulability", m.dev_simulability},
                     {"active_heads", m.active_heads}});
    }
    entry["log"] = log;
    if (cfg.train.mode == TrainMode::smat) {
      const fs::path phi = fs::path(out_dir) / (stem + ".phi_t.json");
      std::size_t k = 0;
      for (double l : run.result.lambda_t) k += l > 0.0;
      active.push_back(static_cast<double>(k));
      Json pj = {{"phi", run.result.phi_t},
                 {"lambda", run.result.lambda_t},
                 {"normalize", to_string(cfg.train.normalize)},
                 {"scope", "all_layers"}};
      write_text(phi, pj.dump(2) + "\n");
      entry["phi_t"] = phi.string();
      entry["active_heads"] = k;
    }
    runs.push_back(entry);
    std::printf("seed %llu test simulability=%.4f\n", static_cast<unsigned long long>(run.seed),
                run.test_simulability);
  }
  manifest["runs"] = runs;
  manifest["seeds"] = Json::array();
  for (const auto& run : result.runs) manifest["seeds"].push_back(run.seed);
  manifest["simulability"] = {{"median", result.simulability.median},
                              {"p25", result.simulability.iqr_low},
                              {"p75", result.simulability.iqr_high},
                              {"values", result.simulability.values}};
  std::printf("mode %s simulability %s\n", result.mode.c_str(), format_median_iqr(result.simulability).c_str());
  if (!active.empty()) {
    const auto a = aggregate_median_iqr(active);
    manifest["active_heads"] = {{"median", a.median}, {"p25", a.iqr_low}, {"p75", a.iqr_high}, {"values", active}};
    std::printf("active heads |{lambda_h > 0}| median %.0f of %zu\n", a.median, teacher.config().total_heads());
  }
  write_text(fs::path(out_dir) / "summary.json", manifest.dump(2) + "\n");
  return 0;
}

struct StudentEntry {
  std::string checkpoint;
  std::uint64_t seed = 0;
  Normalize normalize = Normalize::sparsemax;
};

std::vector<StudentEntry> find_students(const std::string& dir) {
  const fs::path summary = fs::path(dir) / "summary.json";
  if (!fs::exists(summary)) throw FormatError("no summary.json in " + dir + " (run train-student first)");
  const Json manifest = read_json(summary.string());
  std::vector<StudentEntry> out;
  const Normalize norm = normalize_from_string(manifest.at("config").at("train").at("normalize").get<std::string>());
  for (const auto& r : manifest.at("runs")) {
    StudentEntry e;
    e.checkpoint = r.at("checkpoint").get<std::string>();
    e.seed = r.at("seed").get<std::uint64_t>();
    e.normalize = norm;
    if (!fs::exists(e.checkpoint)) throw FormatError("missing student checkpoint " + e.checkpoint);
    out.push_back(e);
  }
  if (out.empty()) throw FormatError(summary.string() + " lists no students");
  return out;
}

int cmd_evaluate(const std::string& students_dir, const std::string& teacher_path, const std::string& data_path,
                 const std::string& metric) {
  const auto teacher = load_model<float>(teacher_path);
  const auto data = load_eval_data(data_path, teacher.vocab, teacher.model.config().task);
  if (data.empty()) throw FormatError("evaluation data is empty");
  auto students = find_students(students_dir);
  std::vector<double> values;
  if (metric == "auc") {
    for (const auto& ex : data.examples) {
      if (!ex.rationale) throw ConfigError("--metric auc requires rationale masks in every example of " + data_path);
    }
  }
  for (auto& s : students) {
    const auto student = load_model<float>(s.checkpoint);
    double v = 0;
    if (metric == "sim") {
      v = simulability(student.model, teacher.model, data);
    } else {
      // Plausibility of the teacher explainer paired with this student: the
      // learned coefficients when present, all-layer attention otherwise.
      const std::size_t h = teacher.model.config().total_heads();
      std::vector<float> phi = initial_phi<float>(h, s.normalize);
      if (has_tensor(student.tensors, "phi_t")) phi = find_tensor(student.tensors, "phi_t").values;
      if (phi.size() != h) throw FormatError(s.checkpoint + ": phi_t size does not match teacher heads");
      std::vector<std::vector<double>> sal;
      std::vector<std::vector<std::uint8_t>> masks;
      for (const auto& ex : data.examples) {
        sal.push_back(explain_parameterized<float>(teacher.model, strip_padding(ex.ids), phi, s.normalize).scores);
        masks.push_back(*ex.rationale);
      }
      const auto rep = plausibility_auc(sal, masks);
      if (rep.evaluated == 0) throw Error("no example has both rationale and non-rationale tokens");
      v = rep.mean_auc;
    }
    values.push_back(v);
    std::printf("seed %llu %s=%.4f\n", static_cast<unsigned long long>(s.seed), metric.c_str(), v);
  }
  std::printf("%s %s\n", metric.c_str(), format_median_iqr(aggregate_median_iqr(values)).c_str());
  return 0;
}

int cmd_explain(const std::string& model_path, const std::string& phi_path, const std::string& explainer,
                const std::string& data_path, const std::string& format, std::string out,
                const std::string& teacher_path, std::size_t ig_steps, std::size_t limit) {
  const auto model = load_model<float>(model_path);
  auto data = load_eval_data(data_path, model.vocab, model.model.config().task);
  if (limit > 0) data = take(data, limit);
  std::optional<LoadedModel<float>> teacher;
  if (!teacher_path.empty()) teacher = load_model<float>(teacher_path);

  std::vector<float> phi;
  Normalize norm = Normalize::sparsemax;
  const bool learned = explainer == "smat";
  if (learned) {
    if (phi_path.empty()) throw ConfigError("--explainer smat needs --phi");
    const Json pj = read_json(phi_path);
    phi = pj.at("phi").get<std::vector<float>>();
    norm = normalize_from_string(pj.value("normalize", std::string("sparsemax")));
    if (phi.size() != model.model.config().total_heads()) {
      throw ConfigError("--phi has " + std::to_string(phi.size()) + " coefficients but the model has " +
                        std::to_string(model.model.config().total_heads()) + " heads");
    }
  }
  const StaticExplainer kind = learned ? StaticExplainer::attn_all : static_explainer_from_string(explainer);

  std::vector<ExplanationRecord> records;
  for (const auto& ex : data.examples) {
    const auto ids = strip_padding(ex.ids);
    ExplanationRecord r;
    r.tokens.assign(ex.tokens.begin(), ex.tokens.begin() + static_cast<std::ptrdiff_t>(ids.size()));
    r.scores = learned ? explain_parameterized<float>(model.model, ids, phi, norm).scores
                       : explain_static(model.model, ids, kind, ig_steps).scores;
    r.predicted_label = predict_label(model.model, ids);
    r.teacher_label = teacher ? predict_label(teacher->model, ids) : r.predicted_label;
    r.gold_label = ex.label;
    r.gold_mask = ex.rationale;
    records.push_back(std::move(r));
  }
  if (out.empty()) out = "explanations." + format;
  if (format == "jsonl") {
    export_explanations(records, out);
  } else {
    render_html_report(records, out, ColorScheme::single);
  }
  std::printf("wrote %zu explanations to %s\n", records.size(), out.c_str());
  return 0;
}

int cmd_trueskill(const std::string& rankings_path) {
  const auto ratings = rate_rankings(load_rankings(rankings_path));
  std::printf("%-24s %8s %8s  %s\n", "method", "mu", "1.96sd", "rank");
  for (const auto& m : rank_with_confidence(ratings)) {
    std::printf("%-24s %8.3f %8.3f  %s\n", m.name.c_str(), m.skill.mu, 1.96 * m.skill.sigma, m.label().c_str());
  }
  return 0;
}

int cmd_generate_data(const std::string& config_path, const std::string& out_dir) {
  const auto cfg = load_experiment_config(config_path);
  if (cfg.data.source != "synthetic") throw ConfigError("generate-data needs data.source = synthetic");
  const auto data = load_data(cfg.data, cfg.model.task);
  fs::create_directories(out_dir);
  write_tsv(data.splits.train, (fs::path(out_dir) / "train.tsv").string());
  write_tsv(data.splits.dev, (fs::path(out_dir) / "dev.tsv").string());
  write_tsv(data.splits.test, (fs::path(out_dir) / "test.tsv").string());
  std::printf("wrote %zu/%zu/%zu examples to %s\n", data.splits.train.size(), data.splits.dev.size(),
              data.splits.test.size(), out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Teacher explainer learning by student simulation"};
  app.require_subcommand(1);

  std::string config, out, teacher, mode = "smat", students, data, metric = "sim", model, phi, explainer = "attn_all",
                                    format = "jsonl", rankings;
  std::size_t seeds = 5, jobs = 1, ig_steps = 50, limit = 0;

  auto* tt = app.add_subcommand("train-teacher", "Train a teacher on gold labels");
  tt->add_option("--config", config, "Experiment config (JSON)")->required();
  tt->add_option("--out", out, "Checkpoint path")->required();

  auto* ts = app.add_subcommand("train-student", "Train seeded students against a frozen teacher");
  ts->add_option("--config", config, "Experiment config (JSON)")->required();
  ts->add_option("--teacher", teacher, "Teacher checkpoint")->required();
  ts->add_option("--mode", mode, "none | static:NAME | smat");
  ts->add_option("--seeds", seeds, "Number of seeds (base seed + i)")->check(CLI::PositiveNumber);
  ts->add_option("--out", out, "Output directory")->required();
  ts->add_option("--jobs", jobs, "Seeds trained concurrently")->check(CLI::PositiveNumber);

  auto* ev = app.add_subcommand("evaluate", "Per-seed simulability or plausibility");
  ev->add_option("--students", students, "train-student output directory")->required();
  ev->add_option("--teacher", teacher, "Teacher checkpoint")->required();
  ev->add_option("--data", data, "TSV file or experiment config (test split)")->required();
  ev->add_option("--metric", metric, "sim | auc")->check(CLI::IsMember({"sim", "auc"}));

  auto* ex = app.add_subcommand("explain", "Export saliency maps");
  ex->add_option("--model", model, "Model checkpoint")->required();
  ex->add_option("--phi", phi, "Learned coefficients (phi_t.json) for --explainer smat");
  ex->add_option("--explainer", explainer,
                 "grad_l2 | grad_x_input | integrated_gradients | attn_all | attn_last | smat");
  ex->add_option("--data", data, "TSV file or experiment config (test split)")->required();
  ex->add_option("--format", format, "jsonl | html")->check(CLI::IsMember({"jsonl", "html"}));
  ex->add_option("--out", out, "Output file");
  ex->add_option("--teacher", teacher, "Teacher checkpoint for the teacher_label field");
  ex->add_option("--ig-steps", ig_steps, "Integrated-gradient steps")->check(CLI::PositiveNumber);
  ex->add_option("--limit", limit, "Only the first N examples");

  auto* tk = app.add_subcommand("trueskill", "Rate methods from preference rankings");
  tk->add_option("--rankings", rankings, "One ranking per line, best first, comma separated, '=' for ties")
      ->required();

  auto* gd = app.add_subcommand("generate-data", "Write the synthetic splits as TSV");
  gd->add_option("--config", config, "Experiment config (JSON)")->required();
  gd->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*tt) return cmd_train_teacher(config, out);
    if (*ts) return cmd_train_student(config, teacher, mode, seeds, out, jobs);
    if (*ev) return cmd_evaluate(students, teacher, data, metric);
    if (*ex) return cmd_explain(model, phi, explainer, data, format, out, teacher, ig_steps, limit);
    if (*tk) return cmd_trueskill(rankings);
    if (*gd) return cmd_generate_data(config, out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
