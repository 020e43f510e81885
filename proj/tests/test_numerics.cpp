#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "rcqa/error.hpp"
#include "rcqa/numerics.hpp"

namespace rcqa {
namespace {

TEST(Softmax, UniformForEqualLogits) {
  const auto p = softmax(std::vector<double>{0, 0, 0});
  for (double x : p) EXPECT_DOUBLE_EQ(x, 1.0 / 3.0);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const auto p = softmax(std::vector<double>{1000, 0});
  EXPECT_TRUE(std::isfinite(p[0]) && std::isfinite(p[1]));
  EXPECT_NEAR(p[0], 1.0, 1e-15);
  EXPECT_NEAR(p[1], 0.0, 1e-15);
}

TEST(Softmax, LogTwo) {
  const auto p = softmax(std::vector<double>{std::log(2.0), 0});
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, EmptyThrows) {
  EXPECT_THROW(softmax(std::vector<double>{}), ShapeError);
}

TEST(Softmax, AlwaysAProbabilityVector) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 30.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> v(1 + trial % 17);
    for (auto& x : v) x = g(rng);
    const auto p = softmax(v);
    double sum = 0.0;
    for (double x : p) {
      EXPECT_GE(x, 0.0);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Softmax, CrossEntropyGradient) {
  // d/dz of -log softmax(z)[t] is softmax(z) - onehot(t).
  const std::vector<double> z{0.3, -1.0, 2.0};
  std::vector<double> g(3, 0.0);
  const double loss = softmax_cross_entropy(z, 1, g);
  const auto p = softmax(z);
  EXPECT_NEAR(loss, -std::log(p[1]), 1e-14);
  EXPECT_NEAR(g[0], p[0], 1e-15);
  EXPECT_NEAR(g[1], p[1] - 1.0, 1e-15);
  EXPECT_NEAR(g[2], p[2], 1e-15);
  EXPECT_THROW(softmax_cross_entropy(z, 3), ShapeError);
}

TEST(Matmul, SmallProducts) {
  const Dense2 a(2, 3, {1, 2, 3, 4, 5, 6});
  const Dense2 b(3, 2, {7, 8, 9, 10, 11, 12});
  EXPECT_EQ(matmul(a, b), Dense2(2, 2, {58, 64, 139, 154}));
  EXPECT_EQ(matmul_nt(a, transpose(b)), matmul(a, b));
  EXPECT_EQ(matmul_tn(transpose(a), b), matmul(a, b));
  EXPECT_THROW(matmul(a, a), ShapeError);
}

Conv2dShape shape(int out, int in, int kr, int kc, int pr = 0, int pc = 0) {
  return {out, in, kr, kc, pr, pc};
}

TEST(Conv2d, UnitKernelIsIdentity) {
  Dense3 x(1, 3, 4);
  std::iota(x.values().begin(), x.values().end(), 1.0);
  const std::vector<double> w{1.0}, b{0.0};
  EXPECT_EQ(conv2d(x, shape(1, 1, 1, 1), w, b), x);
}

TEST(Conv2d, ZeroInputGivesBias) {
  const Dense3 x(2, 3, 3);
  const std::vector<double> w(2 * 2 * 3 * 3, 0.7), b{0.25, -1.5};
  const Dense3 y = conv2d(x, shape(2, 2, 3, 3, 1, 1), w, b);
  ASSERT_EQ(y.rows(), 3);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      EXPECT_EQ(y(0, r, c), 0.25);
      EXPECT_EQ(y(1, r, c), -1.5);
    }
  }
}

TEST(Conv2d, HandComputed) {
  Dense3 x(1, 2, 2);
  x(0, 0, 0) = 1;
  x(0, 0, 1) = 2;
  x(0, 1, 0) = 3;
  x(0, 1, 1) = 4;
  const std::vector<double> w{1, 0, 0, 1}, b{0};
  const Dense3 y = conv2d(x, shape(1, 1, 2, 2), w, b);
  ASSERT_EQ(y.rows(), 1);
  ASSERT_EQ(y.cols(), 1);
  EXPECT_EQ(y(0, 0, 0), 5.0);
}

TEST(Conv2d, ExtentErrors) {
  const Dense3 x(1, 2, 2);
  const std::vector<double> w(9, 1.0), b{0};
  EXPECT_THROW(conv2d(x, shape(1, 1, 3, 3), w, b), ShapeError);
  EXPECT_THROW(conv2d(x, shape(1, 2, 1, 1), std::vector<double>(2), b), ShapeError);
  EXPECT_THROW(conv2d(x, shape(1, 1, 1, 1), std::vector<double>(1), std::vector<double>{}),
               ShapeError);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  const Conv2dShape s = shape(3, 2, 3, 2, 1, 1);
  Dense2 x(1, 2 * 4 * 5), w(1, static_cast<int>(s.weight_count())), b(1, 3);
  fill_normal(x, 1.0, rng);
  fill_normal(w, 0.5, rng);
  fill_normal(b, 0.5, rng);
  Dense2 gx(1, x.cols()), gw(1, w.cols()), gb(1, 3);
  Dense2 coef(1, 3 * 4 * 5);  // fixed random projection of the output
  fill_normal(coef, 1.0, rng);

  auto as3 = [](const Dense2& flat) {
    Dense3 t(2, 4, 5);
    std::copy(flat.values().begin(), flat.values().end(), t.values().begin());
    return t;
  };
  GradTape tape({{"x", &x}, {"w", &w}, {"b", &b}}, {{"x", &gx}, {"w", &gw}, {"b", &gb}});
  auto loss = [&] {
    const Dense3 in = as3(x);
    const Dense3 y = conv2d(in, s, w.values(), b.values());
    double l = 0.0;
    Dense3 gy(y.channels(), y.rows(), y.cols());
    for (std::size_t i = 0; i < y.size(); ++i) {
      l += coef.values()[i] * y.values()[i] * y.values()[i];
      gy.values()[i] = 2.0 * coef.values()[i] * y.values()[i];
    }
    Dense3 gin(2, 4, 5);
    conv2d_backward(in, s, w.values(), gy, gw.values(), gb.values(), &gin);
    std::copy(gin.values().begin(), gin.values().end(), gx.values().begin());
    return l;
  };
  const GradientCheck r = check_gradients(loss, tape);
  EXPECT_EQ(r.checked, x.size() + w.size() + b.size());
  EXPECT_LE(r.max_relative_error, 1e-6);
}

TEST(SortedTopk, LargestFirst) {
  const TopK t = sorted_topk(std::vector<double>{0.2, 0.9, 0.5, 0.1}, 2);
  EXPECT_EQ(t.values, (std::vector<double>{0.9, 0.5}));
  EXPECT_EQ(t.source, (std::vector<int>{1, 2}));
}

TEST(SortedTopk, ZeroPadsShortInput) {
  const TopK t = sorted_topk(std::vector<double>{0.3}, 3);
  EXPECT_EQ(t.values, (std::vector<double>{0.3, 0.0, 0.0}));
  EXPECT_EQ(t.source, (std::vector<int>{0, -1, -1}));
  std::vector<double> g(1, 0.0);
  sorted_topk_backward(t, std::vector<double>{1.0, 5.0, 7.0}, g);
  EXPECT_EQ(g[0], 1.0);
}

TEST(SortedTopk, TiesRouteToLowestIndex) {
  const TopK t = sorted_topk(std::vector<double>{0.5, 0.5}, 1);
  EXPECT_EQ(t.values, (std::vector<double>{0.5}));
  std::vector<double> g(2, 0.0);
  sorted_topk_backward(t, std::vector<double>{1.0}, g);
  EXPECT_EQ(g, (std::vector<double>{1.0, 0.0}));
}

TEST(SortedTopk, KZeroThrows) {
  EXPECT_THROW(sorted_topk(std::vector<double>{1.0}, 0), ShapeError);
}

TEST(SortedTopk, OutputIsSortedSubMultiset) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> d(0, 5);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> v(1 + trial % 12);
    for (auto& x : v) x = d(rng) * 0.5;
    const int k = 1 + trial % 7;
    const TopK t = sorted_topk(v, k);
    std::vector<bool> used(v.size(), false);
    for (int i = 0; i < k; ++i) {
      if (i > 0) EXPECT_LE(t.values[i], t.values[i - 1]);
      if (t.source[i] < 0) continue;
      EXPECT_FALSE(used[t.source[i]]);
      used[t.source[i]] = true;
      EXPECT_EQ(v[t.source[i]], t.values[i]);
    }
  }
}

TEST(GradientCheck, Quadratic) {
  Dense2 x(1, 2, {1.0, 2.0}), g(1, 2);
  GradTape tape({{"x", &x}}, {{"x", &g}});
  auto loss = [&] {
    g(0, 0) = x(0, 0);
    g(0, 1) = x(0, 1);
    return 0.5 * (x(0, 0) * x(0, 0) + x(0, 1) * x(0, 1));
  };
  const GradientCheck r = check_gradients(loss, tape);
  EXPECT_EQ(g, Dense2(1, 2, {1.0, 2.0}));
  EXPECT_LT(r.max_relative_error, 1e-9);
}

TEST(GradientCheck, ConstantLossHasZeroGradient) {
  Dense2 x(2, 2, 1.0), g(2, 2);
  GradTape tape({{"x", &x}}, {{"x", &g}});
  const GradientCheck r = check_gradients([] { return 4.0; }, tape);
  EXPECT_EQ(r.max_relative_error, 0.0);
  EXPECT_EQ(g, Dense2(2, 2, 0.0));
}

TEST(GradientCheck, SoftmaxCrossEntropyProbe) {
  // A 5x4 activation matrix scored by a 4-vector probe.
  std::mt19937_64 rng(17);
  Dense2 p(5, 4), v(4, 1), gv(4, 1);
  fill_normal(p, 1.0, rng);
  fill_normal(v, 1.0, rng);
  GradTape tape({{"v", &v}}, {{"v", &gv}});
  auto loss = [&] {
    const Dense2 logits = matmul(p, v);
    std::vector<double> gl(5, 0.0);
    const double l = softmax_cross_entropy(logits.values(), 2, gl);
    add_matmul_tn(p, Dense2(5, 1, gl), gv);
    return l;
  };
  EXPECT_LT(check_gradients(loss, tape).max_relative_error, 1e-4);
}

TEST(GradientCheck, ValueOnlyFunctionDrivesPerturbedPoints) {
  Dense2 x(1, 3, {1.0, -2.0, 0.5}), g(1, 3);
  GradTape tape({{"x", &x}}, {{"x", &g}});
  auto value = [&] {
    double s = 0.0;
    for (double v : x.values()) s += v * v * v;
    return s;
  };
  int value_calls = 0;
  auto counted = [&] {
    ++value_calls;
    return value();
  };
  auto right = [&] {
    for (int i = 0; i < 3; ++i) g(0, i) = 3.0 * x(0, i) * x(0, i);
    return value();
  };
  EXPECT_LT(check_gradients(right, tape, 1e-5, counted).max_relative_error, 1e-9);
  EXPECT_EQ(value_calls, 6);
  auto wrong = [&] {
    for (int i = 0; i < 3; ++i) g(0, i) = 2.0 * x(0, i) * x(0, i);
    return value();
  };
  const GradientCheck r = check_gradients(wrong, tape, 1e-5, value);
  EXPECT_GT(r.max_relative_error, 0.3);
  EXPECT_THROW(check_gradients(right, tape, 1e-5, [] { return INFINITY; }), Error);
}

TEST(GradientCheck, NonFiniteLossThrows) {
  Dense2 x(1, 1, 1.0), g(1, 1);
  GradTape tape({{"x", &x}}, {{"x", &g}});
  EXPECT_THROW(check_gradients([] { return std::nan(""); }, tape), Error);
}

TEST(Adam, MinimizesQuadratic) {
  Dense2 x(1, 3, {3.0, -2.0, 0.5}), g(1, 3);
  GradTape tape({{"x", &x}}, {{"x", &g}});
  Adam adam(tape, {.learning_rate = 0.05});
  for (int i = 0; i < 2000; ++i) {
    tape.zero_grad();
    for (int j = 0; j < 3; ++j) g(0, j) = 2.0 * x(0, j);
    adam.step(tape);
  }
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(x(0, j), 0.0, 1e-3);
}

TEST(Dense, ShapeChecks) {
  EXPECT_THROW(Dense2(2, 2, std::vector<double>{1.0}), ShapeError);
  Dense2 a(1, 1, 1.0);
  a(0, 0) = std::nan("");
  EXPECT_FALSE(a.all_finite());
}

}  // namespace
}  // namespace rcqa
