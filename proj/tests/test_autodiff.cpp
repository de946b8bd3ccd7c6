#include <gtest/gtest.h>

#include <cmath>

#include "himix/autodiff.hpp"
#include "himix/error.hpp"
#include "himix/grad_check.hpp"
#include "himix/rng.hpp"
#include "op_suite.hpp"
#include "oracles.hpp"

using namespace himix;
using namespace himix::ad;

namespace {

Tensor mat(std::size_t m, std::size_t n, std::initializer_list<double> v) {
  Tensor t({m, n});
  std::copy(v.begin(), v.end(), t.data.begin());
  return t;
}

}  // namespace

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_EQ(Tensor({2, 3}).size(), 6u);
}

TEST(MatMul, IdentityAndZero) {
  Graph g;
  const Tensor a = mat(3, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor eye = mat(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(matmul(g.constant(a), g.constant(eye)).value().data, a.data);
  const Tensor zero({3, 3}, 0.0);
  for (double v : matmul(g.constant(zero), g.constant(a)).value().data) EXPECT_EQ(v, 0.0);
}

TEST(MatMul, MatchesTripleLoopOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 1 + rng.below(8), k = 1 + rng.below(8), n = 1 + rng.below(8);
    Tensor a({m, k}), b({k, n});
    for (double& v : a.data) v = rng.normal();
    for (double& v : b.data) v = rng.normal();
    oracle::Matrix oa(m, std::vector<double>(k)), ob(k, std::vector<double>(n));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) oa[i][j] = a.at(i, j);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < n; ++j) ob[i][j] = b.at(i, j);
    const auto want = oracle::matmul(oa, ob);
    Graph g;
    const Tensor got = matmul(g.constant(a), g.constant(b)).value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(got.at(i, j), want[i][j], 1e-12);
  }
}

TEST(MatMul, ShapeErrorNamesBothShapes) {
  Graph g;
  try {
    matmul(g.constant(Tensor({2, 3})), g.constant(Tensor({4, 5})));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(Softmax, SymmetryShiftAndClosedForm) {
  Graph g;
  for (double v : softmax(g.constant(Tensor({5}, 0.3)), 0).value().data) EXPECT_DOUBLE_EQ(v, 0.2);

  Tensor x({4}, std::vector<double>{0.1, -2.0, 3.0, 0.5});
  Tensor shifted = x;
  for (double& v : shifted.data) v += 7.25;
  const auto a = softmax(g.constant(x), 0).value().data;
  const auto b = softmax(g.constant(shifted), 0).value().data;
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a[i], b[i], 1e-15);

  const auto c = softmax(g.constant(Tensor({2}, std::vector<double>{0.0, std::log(3.0)})), 0).value().data;
  const auto want = oracle::softmax({0.0, std::log(3.0)});
  EXPECT_NEAR(c[0], want[0], 1e-15);
  EXPECT_NEAR(c[1], want[1], 1e-15);
  EXPECT_NEAR(c[0], 0.25, 1e-15);
}

TEST(Softmax, SumsToOneForLargeInputs) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor x({4, 6});
    for (double& v : x.data) v = rng.uniform(-50.0, 50.0);
    Graph g;
    for (std::size_t axis : {0u, 1u}) {
      const Tensor s = softmax(g.constant(x), axis).value();
      const std::size_t outer = axis == 0 ? 6 : 4, inner = axis == 0 ? 4 : 6;
      for (std::size_t o = 0; o < outer; ++o) {
        double total = 0.0;
        for (std::size_t i = 0; i < inner; ++i) {
          const double v = axis == 0 ? s.at(i, o) : s.at(o, i);
          EXPECT_GE(v, 0.0);
          total += v;
        }
        EXPECT_NEAR(total, 1.0, 1e-9);
      }
    }
  }
}

TEST(Softmax, RejectsBadAxis) {
  Graph g;
  EXPECT_THROW(softmax(g.constant(Tensor({3})), 1), ShapeError);
}

TEST(Activation, Definitions) {
  Graph g;
  EXPECT_DOUBLE_EQ(sigmoid(g.constant(Tensor({1}, 0.0))).value().data[0], 0.5);
  EXPECT_EQ(relu(g.constant(Tensor({1}, -2.5))).value().data[0], 0.0);
  EXPECT_EQ(relu(g.constant(Tensor({1}, 2.5))).value().data[0], 2.5);
  // Exact GELU: x * Phi(x), Phi(1) = 0.841344746068543.
  EXPECT_NEAR(gelu(g.constant(Tensor({1}, 1.0))).value().data[0], 0.841344746068543, 1e-14);
}

TEST(Activation, GeluGradientMatchesFiniteDifferences) {
  Rng rng(5);
  Tensor x({50});
  for (double& v : x.data) v = rng.uniform(-4.0, 4.0);
  const auto r = grad_check([](Graph&, std::span<const Var> p) { return sum_all(gelu(p[0])); }, {x});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Reduce, TrivialCases) {
  Graph g;
  for (double v : reduce(Reduction::kMean, g.constant(Tensor({3, 4}, 2.5)), 0).value().data) EXPECT_EQ(v, 2.5);
  Tensor hot({5}, 0.0);
  hot.data[3] = 7.0;
  EXPECT_EQ(reduce(Reduction::kMax, g.constant(hot), 0).value().data[0], 7.0);

  Graph h;
  Var x = h.leaf(Tensor({2, 3}, 1.5));
  h.backward(sum_all(reduce(Reduction::kSum, x, 1)));
  for (double v : h.grad(x)->data) EXPECT_EQ(v, 1.0);
}

TEST(Reduce, MaxTieRoutesToFirstIndex) {
  Graph g;
  Var x = g.leaf(Tensor({4}, std::vector<double>{1.0, 3.0, 3.0, 0.0}));
  g.backward(sum_all(reduce(Reduction::kMax, x, 0)));
  EXPECT_EQ(g.grad(x)->data, (std::vector<double>{0, 1, 0, 0}));
}

TEST(Reduce, EmptyAxisRejected) {
  Graph g;
  EXPECT_THROW(reduce(Reduction::kSum, g.constant(Tensor({3})), 1), ShapeError);
}

TEST(Backward, SumAndProductRules) {
  Graph g;
  Var x = g.leaf(Tensor({3}, std::vector<double>{1, 2, 3}));
  Var y = g.leaf(Tensor({3}, std::vector<double>{4, -5, 6}));
  g.backward(sum_all(mul(x, y)));
  EXPECT_EQ(g.grad(x)->data, y.value().data);
  EXPECT_EQ(g.grad(y)->data, x.value().data);

  Graph h;
  Var z = h.leaf(Tensor({2, 2}, 3.0));
  h.backward(sum_all(z));
  for (double v : h.grad(z)->data) EXPECT_EQ(v, 1.0);
}

TEST(Backward, RejectsMisuse) {
  Graph g, other;
  Var x = g.leaf(Tensor({3}, 1.0));
  EXPECT_THROW(g.backward(x), ShapeError);
  Var foreign = other.leaf(Tensor({1}, 1.0));
  EXPECT_THROW(g.backward(foreign), Error);
  Var loss = sum_all(x);
  g.backward(loss);
  EXPECT_THROW(g.backward(loss), Error);
}

TEST(Backward, VisitsEachNodeOnce) {
  Graph g;
  Var x = g.leaf(Tensor({2, 2}, std::vector<double>{1, 2, 3, 4}));
  Var a = matmul(x, x);
  Var b = add(a, x);
  Var loss = sum_all(mul(b, a));
  g.backward(loss);
  EXPECT_EQ(g.last_backward_visits(), g.size());
  for (Var v : {a, b, loss}) {
    for (int p : g.parents(v)) EXPECT_LT(p, v.id());
  }
}

TEST(Backward, FrozenLeavesGetNoGradient) {
  Graph g;
  Var w = g.leaf(Tensor({2}, 1.0), false);
  Var x = g.leaf(Tensor({2}, 2.0));
  g.backward(sum_all(mul(w, x)));
  EXPECT_EQ(g.grad(w), nullptr);
  ASSERT_NE(g.grad(x), nullptr);
}

TEST(GradCheck, QuadraticIsExact) {
  Tensor w({6}, std::vector<double>{0.5, -1.0, 2.0, 3.5, -0.25, 1.0});
  const auto r = grad_check([](Graph&, std::span<const Var> p) { return sum_all(mul(p[0], p[0])); }, {w});
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_EQ(r.coords_checked, 6u);
}

TEST(GradCheck, CompositeMlp) {
  Rng rng(9);
  auto r = [&](Shape s) { return opsuite::random_tensor(rng, std::move(s)); };
  const std::vector<Tensor> params{r({4, 5}), r({5}), r({5, 3}), r({3})};
  const Tensor x = r({2, 4});
  const auto res = grad_check(
      [&](Graph& g, std::span<const Var> p) {
        Var h = gelu(add_row(matmul(g.constant(x), p[0]), p[1]));
        Var z = softmax(add_row(matmul(h, p[2]), p[3]), 1);
        return sum_all(mul(z, z));
      },
      params);
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(GradCheck, NonFiniteRejected) {
  Tensor w({1}, std::vector<double>{1.0});
  EXPECT_THROW(
      grad_check([](Graph& g, std::span<const Var> p) { return sum_all(mul(p[0], g.constant(Tensor({1}, INFINITY)))); },
                 {w}),
      NumericError);
}

class OpGradient : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(OpGradient, EveryPrimitivePasses) {
  for (const auto& c : opsuite::cases(GetParam())) {
    EXPECT_LT(opsuite::check(c, GetParam()), 1e-4) << c.name << " seed " << GetParam();
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradient, ::testing::Range<std::uint64_t>(1, 21));

TEST(Bce, ClosedFormAndClamp) {
  Graph g;
  const double labels[] = {1, 0, 1};
  EXPECT_NEAR(bce(g.constant(Tensor({3}, 0.5)), labels).value().data[0], std::log(2.0), 1e-15);
  Tensor perfect({3}, std::vector<double>{1.0, 0.0, 1.0});
  EXPECT_LE(bce(g.constant(perfect), labels).value().data[0], 1e-6 * -std::log(1e-7));
  EXPECT_THROW(bce(g.constant(Tensor({2}, 0.5)), labels), ShapeError);
}

TEST(Bce, LogitGradientIsResidualOverBatch) {
  Tensor z({4}, std::vector<double>{-1.5, 0.2, 2.0, 0.7});
  const double labels[] = {0, 1, 1, 0};
  Graph g;
  Var zl = g.leaf(z);
  g.backward(bce(sigmoid(zl), labels));
  for (std::size_t i = 0; i < 4; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-z.data[i]));
    EXPECT_NEAR(g.grad(zl)->data[i], (p - labels[i]) / 4.0, 1e-12);
  }
  const auto r = grad_check([&](Graph&, std::span<const Var> p) { return bce(sigmoid(p[0]), labels); }, {z});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(NonFinite, ReluAndMaxPropagateNaN) {
  Graph g;
  const double nan = std::nan("");
  const Var x = g.constant(Tensor({2, 2}, std::vector<double>{1.0, nan, -2.0, 3.0}));
  const Tensor r = relu(x).value();
  EXPECT_TRUE(std::isnan(r[1]));
  EXPECT_EQ(r[2], 0.0);
  const Tensor m = reduce(Reduction::kMax, x, 0).value();
  EXPECT_EQ(m[0], 1.0);
  EXPECT_TRUE(std::isnan(m[1]));
  const Var y = g.constant(Tensor({3}, std::vector<double>{nan, 5.0, 1.0}));
  EXPECT_TRUE(std::isnan(reduce(Reduction::kMax, y, 0).value()[0]));
}
