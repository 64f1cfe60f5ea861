#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace smat;
using TD = Tensor<double>;

TEST(Backward, SquareAtThree) {
  auto x = TD::variable({}, {3.0});
  auto g = backward(mul(x, x), {x});
  EXPECT_DOUBLE_EQ(g[0][0], 6.0);
}

TEST(Backward, SoftmaxCrossEntropyIsPMinusY) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 10; ++k) {
    auto z = oracle::random_vector(rng, 4, -2, 2);
    auto leaf = TD::variable({4}, z);
    auto g = backward(cross_entropy(leaf, 1), {leaf});
    std::vector<double> expect(4);
    double m = *std::max_element(z.begin(), z.end()), s = 0;
    for (int i = 0; i < 4; ++i) s += std::exp(z[i] - m);
    for (int i = 0; i < 4; ++i) expect[i] = std::exp(z[i] - m) / s - (i == 1);
    EXPECT_LT(oracle::rel_error(g[0], expect), 1e-12);
    auto f = [](const std::vector<double>& v) { return cross_entropy(TD::constant({4}, v), 1).item(); };
    EXPECT_LT(oracle::rel_error(g[0], oracle::fd_gradient(f, z)), 1e-4);
  }
}

TEST(Backward, MeanOfMatVec) {
  // f(W) = mean(W x): dW_ij = x_j / rows.
  std::vector<double> w{1, 2, 3, 4, 5, 6}, x{0.5, -1.0, 2.0};
  auto W = TD::variable({2, 3}, w);
  auto g = backward(mean(matmul(W, TD::constant({3, 1}, x))), {W});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(g[0][i * 3 + j], x[j] / 2.0);
}

TEST(Backward, NonScalarLossRejected) {
  auto x = TD::variable({2}, {1, 2});
  EXPECT_THROW(backward(x, {x}), ShapeError);
}

TEST(Backward, UnreachableParameterFlagged) {
  auto x = TD::variable({}, {1.0});
  auto y = TD::variable({2}, {1.0, 2.0});
  auto g = backward(mul(x, x), {x, y});
  EXPECT_TRUE(g.reachable[0]);
  EXPECT_FALSE(g.reachable[1]);
  EXPECT_EQ(g[1], (std::vector<double>{0, 0}));
}

TEST(Backward, NanIsAnError) {
  auto x = TD::variable({}, {-1.0});
  EXPECT_THROW(log(x), NumericError);
}

TEST(Backward, GraphReusable) {
  auto x = TD::variable({}, {2.0});
  auto y = mul(mul(x, x), x);
  EXPECT_DOUBLE_EQ(backward(y, {x})[0][0], 12.0);
  EXPECT_DOUBLE_EQ(backward(y, {x})[0][0], 12.0);
}

TEST(GradCheck, EveryPrimitive) {
  for (const auto& pc : gradcheck::primitive_cases()) {
    const auto r = gradcheck::check_primitive(pc, 11);
    EXPECT_EQ(r.points, 10u) << pc.name;
    EXPECT_LT(r.max_rel_error, 1e-4) << pc.name;
  }
}

TEST(GradCheck, TinyModelLoss) {
  const auto r = gradcheck::check_end_to_end(3, 2);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(Sparsemax, ZeroIsUniform) {
  for (std::size_t h = 1; h <= 8; ++h) {
    auto p = sparsemax_values(std::vector<double>(h, 0.0));
    for (double v : p) EXPECT_DOUBLE_EQ(v, 1.0 / static_cast<double>(h));
  }
}

TEST(Sparsemax, Examples) {
  auto a = sparsemax_values(std::vector<double>{1, 0});
  EXPECT_DOUBLE_EQ(a[0], 1.0);
  EXPECT_DOUBLE_EQ(a[1], 0.0);
  auto b = sparsemax_values(std::vector<double>{0.3, 0.2, -0.1});
  EXPECT_NEAR(b[0], 0.5, 1e-12);
  EXPECT_NEAR(b[1], 0.4, 1e-12);
  EXPECT_NEAR(b[2], 0.1, 1e-12);
}

TEST(Sparsemax, MatchesGridOracle) {
  std::mt19937_64 rng(17);
  for (int k = 0; k < 20; ++k) {
    const std::size_t h = 2 + k % 2;
    auto z = oracle::random_vector(rng, h, -1.5, 1.5);
    auto p = sparsemax_values(z);
    auto q = oracle::sparsemax_grid(z);
    for (std::size_t i = 0; i < h; ++i) EXPECT_LE(std::abs(p[i] - q[i]), 2e-3);
  }
}

TEST(Sparsemax, SimplexAndIdempotent) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 50; ++k) {
    auto z = oracle::random_vector(rng, 6, -3, 3);
    auto p = sparsemax_values(z);
    double s = 0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
    auto again = sparsemax_values(p);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(again[i], p[i], 1e-12);
  }
}

TEST(Sparsemax, TiesBrokenByIndex) {
  auto p = sparsemax_values(std::vector<double>{0.5, 0.5, 0.5});
  EXPECT_EQ(p, sparsemax_values(std::vector<double>{0.5, 0.5, 0.5}));
  EXPECT_NEAR(p[0], 1.0 / 3, 1e-15);
}

TEST(SparsemaxBackward, Examples) {
  EXPECT_EQ(sparsemax_backward(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 1}),
            (std::vector<double>{0, 0}));
  EXPECT_EQ(sparsemax_backward(std::vector<double>{1, 0}, std::vector<double>{1, 0}), (std::vector<double>{0, 0}));
  auto g = sparsemax_backward(std::vector<double>{0.5, 0.4, 0.1}, std::vector<double>{3, 0, 0});
  EXPECT_DOUBLE_EQ(g[0], 2.0);
  EXPECT_DOUBLE_EQ(g[1], -1.0);
  EXPECT_DOUBLE_EQ(g[2], -1.0);
  EXPECT_THROW(sparsemax_backward(std::vector<double>{0, 0}, std::vector<double>{1, 1}), Error);
}

TEST(SparsemaxBackward, MatchesFiniteDifferenceJacobian) {
  std::vector<double> z{0.3, 0.2, -0.1};  // p = (0.5, 0.4, 0.1), full support
  const double h = 1e-6;
  for (std::size_t j = 0; j < 3; ++j) {
    std::vector<double> e(3, 0.0);
    e[j] = 1.0;
    auto analytic = sparsemax_backward(sparsemax_values(z), e);  // row j of J (J symmetric)
    std::vector<double> col(3);
    auto zp = z, zm = z;
    zp[j] += h;
    zm[j] -= h;
    auto pp = sparsemax_values(zp), pm = sparsemax_values(zm);
    for (std::size_t i = 0; i < 3; ++i) col[i] = (pp[i] - pm[i]) / (2 * h);
    EXPECT_LT(oracle::rel_error(analytic, col), 1e-6);
  }
}

TEST(Losses, Examples) {
  auto p = TD::constant({3}, {0.2, 0.3, 0.5});
  EXPECT_DOUBLE_EQ(kl_divergence(p, p).item(), 0.0);
  EXPECT_NEAR(kl_divergence(TD::constant({2}, {1, 0}), TD::constant({2}, {0.5, 0.5})).item(), std::log(2.0), 1e-12);
  auto s = softmax(TD::constant({2}, {1, 0}));
  EXPECT_NEAR(s[0], std::exp(1.0) / (std::exp(1.0) + 1), 1e-12);
  EXPECT_NEAR(s[0], 0.7311, 1e-4);
  EXPECT_NEAR(s[1], 0.2689, 1e-4);
  EXPECT_NEAR(cross_entropy(TD::constant({2}, {0, 0}), 1).item(), std::log(2.0), 1e-12);
  EXPECT_DOUBLE_EQ(mse(TD::constant({2}, {1, 3}), TD::constant({2}, {0, 1})).item(), 2.5);
  EXPECT_THROW(kl_divergence(p, TD::constant({2}, {0.5, 0.5})), ShapeError);
}

TEST(Losses, KlNonNegative) {
  std::mt19937_64 rng(9);
  for (int k = 0; k < 100; ++k) {
    auto a = softmax(TD::constant({5}, oracle::random_vector(rng, 5, -3, 3)));
    auto b = softmax(TD::constant({5}, oracle::random_vector(rng, 5, -3, 3)));
    EXPECT_GE(kl_divergence(a, b).item(), 0.0);
  }
}

TEST(Hvp, QuadraticIsExact) {
  auto loss = []<class S>(const Tensor<S>& t) {
    auto a = Tensor<S>::constant({2}, {S(2.0), S(4.0)});
    return scale(sum(mul(mul(t, t), a)), S(0.5));
  };
  std::vector<double> theta{0.3, -0.7}, v{1, 1};
  for (auto mode : {HvpMode::central_difference, HvpMode::exact}) {
    auto hv = hvp<double>(loss, theta, v, mode);
    EXPECT_NEAR(hv[0], 2.0, 1e-9);
    EXPECT_NEAR(hv[1], 4.0, 1e-9);
  }
}

TEST(Hvp, CubicModesAgree) {
  // loss = t0^2 t1 at (1, 1), v = (1, 0): Hv = (2 t1, 2 t0) = (2, 2).
  auto loss = []<class S>(const Tensor<S>& t) {
    auto a = index(t, 0), b = index(t, 1);
    return mul(mul(a, a), b);
  };
  std::vector<double> theta{1, 1}, v{1, 0};
  auto cd = hvp<double>(loss, theta, v, HvpMode::central_difference);
  auto ex = hvp<double>(loss, theta, v, HvpMode::exact);
  EXPECT_NEAR(ex[0], 2.0, 1e-12);
  EXPECT_NEAR(ex[1], 2.0, 1e-12);
  EXPECT_LT(oracle::rel_error(cd, ex), 1e-3);
}

TEST(Hvp, ZeroDirection) {
  auto loss = []<class S>(const Tensor<S>& t) { return sum(exp(t)); };
  std::vector<double> theta{0.1, 0.2, 0.3}, v(3, 0.0);
  for (auto mode : {HvpMode::central_difference, HvpMode::exact}) {
    for (double x : hvp<double>(loss, theta, v, mode)) EXPECT_EQ(x, 0.0);
  }
}

TEST(Hvp, ExactNeedsDualSupport) {
  auto grad_only_double = [](const std::vector<double>& p) { return p; };
  std::vector<double> theta{1.0}, v{1.0};
  EXPECT_THROW(gradient_jvp<double>(grad_only_double, std::span<const double>(theta), std::span<const double>(v),
                                    HvpMode::exact),
               Error);
  EXPECT_THROW(gradient_jvp<double>(grad_only_double, std::span<const double>(theta),
                                    std::span<const double>(std::vector<double>{1.0, 2.0}),
                                    HvpMode::central_difference),
               ShapeError);
}

TEST(Hvp, MiniTransformerModesAgree) {
  const auto mc = gradcheck::tiny_model_config();
  const auto model = MiniTransformer<double>::initialize(mc, 4);
  const auto data = gradcheck::tiny_dataset(4, 2);
  auto grad_at = [&]<class S>(const std::vector<S>& theta) {
    auto m = model.with_parameters<S>(theta);
    auto b = m.bind(true);
    std::vector<Tensor<S>> losses;
    for (const auto& ex : data.examples) losses.push_back(task_loss(m, m.forward(b, ex.ids, false).output, ex.label));
    return m.flatten(backward(add_all(losses), b));
  };
  // Central differences are only meaningful where the loss is smooth along
  // the probe, so directions whose step flips a ReLU are resampled.
  const HvpOptions opts;
  const auto& theta = model.parameters();
  std::mt19937_64 rng(1);
  std::size_t checked = 0, skipped = 0;
  while (checked < 3) {
    ASSERT_LT(skipped, 50u) << "no smooth probe direction found";
    const auto v = oracle::random_vector(rng, model.num_parameters());
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    const double eps = opts.eps0 / std::max(norm, opts.delta);
    if (!gradcheck::ffn_pattern_stable(model, theta, v, eps, gradcheck::token_lists(data))) {
      ++skipped;
      continue;
    }
    auto cd = gradient_jvp<double>(grad_at, std::span<const double>(theta), std::span<const double>(v),
                                   HvpMode::central_difference, opts);
    auto ex = gradient_jvp<double>(grad_at, std::span<const double>(theta), std::span<const double>(v),
                                   HvpMode::exact, opts);
    EXPECT_LT(oracle::rel_error(cd, ex), 1e-2);
    ++checked;
  }
  std::printf("[ smooth probes: %zu checked, %zu resampled ]\n", checked, skipped);
}
