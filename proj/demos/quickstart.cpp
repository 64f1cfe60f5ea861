// Trains a small teacher on the cue-token task, then one student with and one
// without a learned teacher explainer, and prints what the explainer learned.

#include <cstdio>

#include "smat/smat.hpp"

int main() {
  using namespace smat;
  auto spec = SyntheticSpec::symmetric(3, 28, 11);
  spec.min_len = 6;
  spec.max_len = 10;
  const auto splits = split_dataset(generate_synthetic(spec, 800), 0);

  ModelConfig mc;
  mc.vocab_size = spec.vocab_size;
  mc.max_len = 16;
  mc.heads_per_layer = 2;
  mc.model_dim = 16;
  mc.head_dim = 8;
  mc.ffn_dim = 32;
  TeacherTrainConfig tc;
  tc.epochs = 4;
  const auto teacher = train_teacher<float>(mc, tc, splits.train);
  std::printf("teacher gold accuracy %.3f\n", gold_accuracy(teacher, splits.test));

  DataSplits student_data{take(splits.train, 100), splits.dev, splits.test};
  for (const char* mode : {"none", "smat"}) {
    TrainConfig cfg;
    set_mode(cfg, mode);
    cfg.steps = 150;
    cfg.batch_size = 16;
    cfg.outer_batch_size = 16;
    cfg.eval_every = 50;
    const auto r = train<float>(cfg, mc, teacher, student_data);
    for (const auto& m : r.log) {
      std::printf("%-5s step %4zu  loss %.4f  dev sim %.3f\n", mode, m.step, m.train_loss, m.dev_simulability);
    }
    std::printf("%-5s test simulability %.3f\n", mode, simulability(r.student, teacher, splits.test));
    if (cfg.mode == TrainMode::smat) {
      std::printf("head coefficients:");
      for (double l : r.lambda_t) std::printf(" %.3f", l);
      std::printf("\n");
      const auto& ex = splits.test[0];
      const auto e = explain_parameterized<float>(teacher, ex.ids, r.phi_t, cfg.normalize);
      for (std::size_t i = 0; i < ex.tokens.size(); ++i) std::printf("%s:%.2f ", ex.tokens[i].c_str(), e[i]);
      std::printf("\n");
    }
  }
}
