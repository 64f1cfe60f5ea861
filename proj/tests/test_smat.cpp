#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace smat;

namespace {

std::vector<std::size_t> iota_batch(std::size_t n) {
  std::vector<std::size_t> b(n);
  std::iota(b.begin(), b.end(), std::size_t{0});
  return b;
}

struct TinySetup {
  ModelConfig mc = gradcheck::tiny_model_config();
  MiniTransformer<double> teacher = MiniTransformer<double>::initialize(mc, 77);
  Dataset data = gradcheck::tiny_dataset(8, 5);
  TrainConfig cfg;
  std::vector<TeacherView<double>> views;

  explicit TinySetup(TrainMode mode = TrainMode::smat) {
    cfg.mode = mode;
    cfg.batch_size = cfg.outer_batch_size = 8;
    views = prepare_teacher_views(teacher, data, cfg);
  }

  TrainState<double> state(std::uint64_t seed = 1) const {
    auto s = init_state<double>(cfg, mc, mc, data.size(), data.size());
    s.student = MiniTransformer<double>::initialize(mc, seed);
    std::mt19937_64 rng(seed);
    s.phi_s = oracle::random_vector(rng, mc.total_heads(), -0.5, 0.5);
    s.phi_t = oracle::random_vector(rng, mc.total_heads(), -0.5, 0.5);
    return s;
  }
};

DataSplits tiny_splits() {
  DataSplits s;
  s.train = gradcheck::tiny_dataset(24, 1);
  s.dev = gradcheck::tiny_dataset(12, 2);
  s.test = gradcheck::tiny_dataset(12, 3);
  return s;
}

}  // namespace

TEST(Surrogate, SgdArithmetic) {
  // L = theta^2 / 2 at theta = 1 with lr 0.1.
  auto theta = Tensor<double>::variable({1}, {1.0});
  const auto g = backward(scale(mul(theta, theta), 0.5), {theta});
  EXPECT_NEAR(1.0 - 0.1 * g.grads[0][0], 0.9, 1e-15);
}

TEST(Surrogate, HypergradientOfTwoStepMap) {
  // L_student = theta^2 / 2 + phi theta, L_out = theta_pilot^2 / 2. From
  // theta = 1, phi = 0 the committed step gives 0.9 and the pilot 0.81, so
  // dL_out/dphi = 0.81 * (-0.1).
  const double lr = 0.1;
  const double theta = 1.0 - lr * 1.0;
  const double pilot = theta - lr * theta;
  auto grad_phi = [&]<class S>(const std::vector<S>& th) {
    auto t = Tensor<S>::constant({1}, th);
    auto phi = Tensor<S>::variable({1}, {S(0)});
    auto loss = add(scale(mul(t, t), S(0.5)), mul(phi, t));
    return backward(loss, {phi}).grads[0];
  };
  const std::vector<double> at{theta}, v{pilot};
  auto composed = [&](double phi) {
    const double p = theta - lr * (theta + phi);
    return 0.5 * p * p;
  };
  const double brute = (composed(1e-6) - composed(-1e-6)) / 2e-6;
  for (auto mode : {HvpMode::central_difference, HvpMode::exact}) {
    const auto m = gradient_jvp<double>(grad_phi, std::span<const double>(at), std::span<const double>(v), mode);
    const double g = -lr * m[0];
    EXPECT_NEAR(g, -0.081, 1e-12);
    EXPECT_LT(std::abs(g - brute) / std::abs(brute), 1e-3);
  }
}

TEST(StudentLoss, BinaryCrossEntropyExample) {
  TinySetup t(TrainMode::none);
  auto student = MiniTransformer<double>::initialize(t.mc, 4);
  for (const char* name : {"head.w", "head.b"}) {
    const auto& s = student.layout().specs()[student.layout().index_of(name)];
    std::fill_n(student.parameters().begin() + static_cast<std::ptrdiff_t>(s.offset), s.size, 0.0);
  }
  auto views = t.views;
  for (auto& v : views) v.target = 1.0;
  const auto phi = Tensor<double>::constant({4}, std::vector<double>(4, 0.0));
  const auto b = iota_batch(8);
  const auto loss = student_loss(student, student.bind(false), phi, phi, views, b, t.cfg);
  EXPECT_NEAR(loss.total.item(), std::log(2.0), 1e-12);
}

TEST(StudentLoss, MatchingExplanationsHaveZeroKl) {
  TinySetup t;
  const auto b = iota_batch(8);
  const auto phi = Tensor<double>::constant({4}, std::vector<double>(4, 0.0));
  const auto loss = student_loss(t.teacher, t.teacher.bind(false), phi, phi, t.views, b, t.cfg);
  EXPECT_EQ(loss.expl.item(), 0.0);
  EXPECT_EQ(loss.total.item(), loss.sim.item());
}

TEST(StudentLoss, ZeroBetaIsSimulationOnly) {
  TinySetup t;
  t.cfg.beta = 0.0;
  const auto s = t.state();
  const auto b = iota_batch(8);
  const auto ps = Tensor<double>::constant({4}, s.phi_s);
  const auto pt = Tensor<double>::constant({4}, s.phi_t);
  const auto full = student_loss(s.student, s.student.bind(false), ps, pt, t.views, b, t.cfg);
  TrainConfig none = t.cfg;
  none.mode = TrainMode::none;
  const auto sim = student_loss(s.student, s.student.bind(false), ps, pt, t.views, b, none);
  EXPECT_EQ(full.total.item(), sim.total.item());
}

TEST(StudentLoss, MismatchedSimLossRejected) {
  TinySetup t;
  t.cfg.sim_loss = SimLoss::mse;
  const auto s = t.state();
  const auto phi = Tensor<double>::constant({4}, s.phi_s);
  const auto b = iota_batch(2);
  EXPECT_THROW(student_loss(s.student, s.student.bind(false), phi, phi, t.views, b, t.cfg), ConfigError);
}

TEST(InnerStep, ZeroBetaLeavesStudentExplainer) {
  TinySetup t;
  t.cfg.beta = 0.0;
  auto s = t.state();
  const auto before = s.phi_s;
  inner_step(s, iota_batch(8), t.views, t.cfg);
  EXPECT_EQ(s.phi_s, before);
}

TEST(InnerStep, Deterministic) {
  TinySetup t;
  auto a = t.state(), b = t.state();
  const auto batch = iota_batch(8);
  inner_step(a, batch, t.views, t.cfg);
  inner_step(b, batch, t.views, t.cfg);
  EXPECT_EQ(a.student.parameters(), b.student.parameters());
  EXPECT_EQ(a.phi_s, b.phi_s);
  EXPECT_EQ(a.phi_t, t.state().phi_t);
}

TEST(InnerStep, SmallStepDecreasesLoss) {
  TinySetup t;
  t.cfg.lr_inner = 1e-3;
  auto s = t.state();
  const auto batch = iota_batch(8);
  const double before = inner_step(s, batch, t.views, t.cfg);
  const auto after = detail::student_gradients<double>(s.student, s.phi_s, s.phi_t, t.views, batch, t.cfg).loss;
  EXPECT_LT(after, before);
}

TEST(OuterStep, ZeroBetaGivesZeroHypergradient) {
  TinySetup t;
  t.cfg.beta = 0.0;
  auto s = t.state();
  const auto batch = iota_batch(8);
  for (auto mode : {HvpMode::central_difference, HvpMode::exact}) {
    t.cfg.hvp_mode = mode;
    for (double g : hypergradient(s, batch, batch, t.views, t.views, t.cfg)) EXPECT_EQ(g, 0.0);
  }
}

TEST(OuterStep, ZeroOuterRateKeepsTeacherExplainer) {
  TinySetup t;
  t.cfg.lr_outer = 0.0;
  auto s = t.state();
  const auto before = s.phi_t;
  const auto student = s.student.parameters();
  const auto batch = iota_batch(8);
  outer_step(s, batch, batch, t.views, t.views, t.cfg);
  EXPECT_EQ(s.phi_t, before);
  EXPECT_EQ(s.student.parameters(), student);
}

TEST(OuterStep, MatchesBruteForce) {
  // Exact mode on every support-stable probe; central differences only
  // where no ReLU flips inside the step.
  std::size_t exact = 0, central = 0;
  for (std::uint64_t seed = 0; (exact < 10 || central < 2) && seed < 400; ++seed) {
    const auto p = gradcheck::probe_hypergradient(seed);
    if (!p.support_stable) continue;
    EXPECT_LT(oracle::rel_error(p.exact, p.brute), 5e-2) << "seed " << seed;
    ++exact;
    if (!p.relu_stable) continue;
    EXPECT_LT(oracle::rel_error(p.central, p.brute), 5e-2) << "seed " << seed;
    EXPECT_LT(oracle::rel_error(p.central, p.exact), 1e-2) << "seed " << seed;
    ++central;
  }
  EXPECT_GE(exact, 10u);
  EXPECT_GE(central, 2u);
}

TEST(Explainer, ZeroPhiStartsAtStaticAttention) {
  TinySetup t;
  const auto lam = head_coefficients(Tensor<double>::constant({4}, initial_phi<double>(4, Normalize::sparsemax)),
                                     Normalize::sparsemax);
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    const auto& v = t.views[i];
    const auto e = combine_heads(lam, Tensor<double>::constant({4, v.n}, v.head_logits));
    EXPECT_EQ(std::vector<double>(e.values().begin(), e.values().end()), explain_attention_mean(t.teacher, t.data[i].ids, HeadScope::all_layers).scores);
  }
}

TEST(Explainer, SingletonSupportArgmaxIsScaleInvariant) {
  const std::vector<double> phi{2.0, 0.0, 0.1, -1.0};
  for (double c : {0.5, 1.0, 3.0, 10.0}) {
    std::vector<double> scaled = phi;
    for (auto& x : scaled) x *= c;
    const auto lam = head_coefficient_values(std::span<const double>(scaled), Normalize::sparsemax);
    EXPECT_EQ(argmax(std::span<const double>(lam)), 0u);
  }
}

TEST(Train, ZeroStepsReturnsInitialStudent) {
  const auto splits = tiny_splits();
  const auto mc = gradcheck::tiny_model_config();
  const auto teacher = MiniTransformer<float>::initialize(mc, 9);
  TrainConfig cfg;
  cfg.mode = TrainMode::none;
  cfg.steps = 0;
  cfg.seed = 4;
  const auto r = train<float>(cfg, mc, teacher, splits);
  EXPECT_EQ(r.student.parameters(), MiniTransformer<float>::initialize(mc, 4).parameters());
  EXPECT_TRUE(r.log.empty());
}

TEST(Train, DeterministicAndTeacherUntouched) {
  const auto splits = tiny_splits();
  const auto mc = gradcheck::tiny_model_config();
  const auto teacher = MiniTransformer<float>::initialize(mc, 9);
  const auto before = teacher.parameters();
  for (const char* mode : {"none", "static:attn_all", "static:grad_x_input", "smat"}) {
    TrainConfig cfg;
    set_mode(cfg, mode);
    cfg.steps = 6;
    cfg.batch_size = cfg.outer_batch_size = 4;
    cfg.eval_every = 3;
    const auto a = train<float>(cfg, mc, teacher, splits);
    const auto b = train<float>(cfg, mc, teacher, splits);
    EXPECT_EQ(a.student.parameters(), b.student.parameters()) << mode;
    EXPECT_EQ(a.phi_t, b.phi_t) << mode;
    EXPECT_EQ(a.log.size(), 2u) << mode;
    EXPECT_EQ(teacher.parameters(), before) << mode;
    if (cfg.mode != TrainMode::smat) EXPECT_EQ(a.phi_t, initial_phi<float>(4, cfg.normalize)) << mode;
  }
}

TEST(Config, ModeContract) {
  TrainConfig cfg;
  cfg.beta = 3.0;
  set_mode(cfg, "none");
  EXPECT_EQ(cfg.effective_beta(), 0.0);
  cfg.beta.reset();
  set_mode(cfg, "static:integrated_gradients");
  EXPECT_EQ(cfg.effective_beta(), 0.2);
  set_mode(cfg, "static:attn_last");
  EXPECT_EQ(cfg.effective_beta(), 5.0);
  EXPECT_EQ(cfg.student_scope(), HeadScope::last_layer);
  set_mode(cfg, "smat");
  EXPECT_EQ(cfg.effective_beta(), 5.0);
  EXPECT_THROW(set_mode(cfg, "learned"), ConfigError);
  EXPECT_THROW(set_mode(cfg, "static:lime"), ConfigError);
  cfg.lr_inner = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Sampler, CoversEveryIndexPerEpoch) {
  BatchSampler s(10, 3);
  std::vector<int> seen(10, 0);
  for (int i = 0; i < 5; ++i)
    for (auto k : s.next(2)) ++seen[k];
  for (int c : seen) EXPECT_EQ(c, 1);
}
