#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "clamp/gradcheck.hpp"
#include "clamp/ops.hpp"
#include "clamp/params.hpp"
#include "clamp/rng.hpp"
#include "oracles.hpp"

using namespace clamp;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, bool grad = true) {
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor({r, c}, v, grad);
}

}  // namespace

TEST(Tensor, RejectsBadShapesAndValues) {
  EXPECT_THROW(Tensor({2, 0}, {}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor({1}, {std::nan("")}), NumericError);
  EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), DimensionError);
}

TEST(Tensor, BackwardNeedsScalar) {
  Tensor a = Tensor::matrix({{1, 2}}, true);
  EXPECT_THROW(scale(a, 2.0).backward(), DimensionError);
}

TEST(Ops, MatmulKnownValues) {
  Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  Tensor b = Tensor::matrix({{5, 6}, {7, 8}});
  Tensor c = matmul(a, b);
  EXPECT_EQ(std::vector<double>(c.values().begin(), c.values().end()), (std::vector<double>{19, 22, 43, 50}));
  Tensor d = matmul_nt(a, b);
  EXPECT_EQ(std::vector<double>(d.values().begin(), d.values().end()), (std::vector<double>{17, 23, 39, 53}));
  EXPECT_THROW(matmul(a, Tensor::matrix({{1, 2, 3}})), DimensionError);
}

TEST(Ops, SoftmaxRowsSumToOneAndAreShiftInvariant) {
  Rng rng(1);
  Tensor x = random_matrix(5, 7, rng, false);
  Tensor p = softmax_rows(scale(x, 40.0));
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) s += p.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  Tensor shifted = softmax_rows(add_scalar(scale(x, 40.0), 1000.0));
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], shifted[i], 1e-12);
}

TEST(Ops, LayerNormExamples) {
  const Tensor ones = Tensor::vector({1, 1, 1}), zeros = Tensor::vector({0, 0, 0});
  Tensor flat = layer_norm(Tensor::matrix({{5, 5, 5}}), ones, zeros);
  for (double v : flat.values()) EXPECT_EQ(v, 0.0);
  // (x - mu) / sqrt(var + eps) with mu = 2, var = 2/3
  Tensor y = layer_norm(Tensor::matrix({{1, 2, 3}}), ones, zeros, 1e-5);
  const double expect = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
  EXPECT_NEAR(y[0], -expect, 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
  EXPECT_NEAR(y[2], expect, 1e-12);
  EXPECT_NEAR(y[2], 1.2247, 1e-3);
  Tensor collapsed = layer_norm(Tensor::matrix({{1, 7, -3}}), Tensor::vector({0, 0, 0}), Tensor::vector({4, 5, 6}));
  EXPECT_EQ(collapsed[0], 4.0);
  EXPECT_EQ(collapsed[1], 5.0);
  EXPECT_EQ(collapsed[2], 6.0);
}

TEST(Ops, GeluMatchesErfForm) {
  const std::vector<double> xs = {-3.0, -0.5, 0.0, 0.7, 2.5};
  Tensor y = gelu(Tensor::vector(xs));
  for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_NEAR(y[i], oracle::gelu(xs[i]), 1e-15);
}

TEST(Ops, SigmoidStaysInsideUnitInterval) {
  Tensor y = sigmoid(Tensor::vector({-1000.0, 0.0, 1000.0}));
  EXPECT_GT(y[0], 0.0);
  EXPECT_EQ(y[1], 0.5);
  EXPECT_LT(y[2], 1.0);
}

TEST(Ops, L2NormalizeKeepsZeroRows) {
  Tensor y = l2_normalize_rows(Tensor::matrix({{3, 4}, {0, 0}}));
  EXPECT_NEAR(y.at(0, 0), 0.6, 1e-12);
  EXPECT_NEAR(y.at(0, 1), 0.8, 1e-12);
  EXPECT_EQ(y.at(1, 0), 0.0);
  EXPECT_EQ(y.at(1, 1), 0.0);
}

TEST(Ops, DropoutModes) {
  Rng rng(3);
  Tensor x = Tensor::full({4, 50}, 2.0, true);
  EXPECT_EQ(dropout(x, 0.5, false, rng).node(), x.node());
  EXPECT_EQ(dropout(x, 0.0, true, rng).node(), x.node());
  EXPECT_THROW(dropout(x, 1.0, true, rng), ParameterError);
  EXPECT_THROW(dropout(x, -0.1, true, rng), ParameterError);
  Tensor y = dropout(x, 0.25, true, rng);
  std::size_t kept = 0;
  for (double v : y.values()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 2.0 / 0.75) < 1e-12);
    kept += v != 0.0;
  }
  EXPECT_GT(kept, 100u);
  EXPECT_LT(kept, 200u);
}

TEST(Ops, GatherRowsChecksRange) {
  Tensor table = Tensor::matrix({{1, 2}, {3, 4}});
  const std::vector<std::size_t> bad = {0, 2};
  EXPECT_THROW(gather_rows(table, bad), DataError);
}

TEST(Ops, NonFiniteOutputIsReported) {
  EXPECT_THROW(log(Tensor::vector({0.0})), NumericError);
  EXPECT_THROW(exp(Tensor::vector({1000.0})), NumericError);
}

TEST(Autodiff, AccumulatesThroughSharedInputs) {
  // f = sum(x * x) + sum(x); df/dx = 2x + 1
  Tensor x = Tensor::vector({1.5, -2.0, 0.25}, true);
  Tensor f = add(sum(mul(x, x)), sum(x));
  f.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -3.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 1.5);
}

TEST(Autodiff, NoGradGuardBuildsNoGraph) {
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  NoGradGuard guard;
  Tensor y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autodiff, DetachStopsGradient) {
  Tensor x = Tensor::vector({3.0}, true);
  Tensor f = add(mul(x, x.detach()), x);
  f.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
}

TEST(GradCheck, PassesOnRandomCompositions) {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a = random_matrix(3, 4, rng), b = random_matrix(4, 5, rng), g = random_matrix(1, 5, rng);
    auto f = [&] { return sum(mul(softmax_rows(matmul(a, b)), gelu(add_rowvec(matmul(a, b), reshape(g, {5}))))); };
    const auto report = grad_check(f, {{"a", a}, {"b", b}, {"g", g}}, rng);
    EXPECT_TRUE(report.ok()) << "trial " << trial << " max error " << report.max_error;
    EXPECT_EQ(report.covered.size(), 3u);
  }
}

TEST(GradCheck, DetectsAWrongBackwardRule) {
  // y = x^2 with a deliberately wrong derivative of x instead of 2x.
  Tensor x = Tensor::vector({0.3, -0.8, 1.7}, true);
  auto wrong_square = [](const Tensor& in) {
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * in[i];
    const std::vector<double> saved(in.values().begin(), in.values().end());
    return detail::make_result("wrong_square", in.shape(), std::move(out), {&in}, [saved](detail::Node& self) {
      if (double* g = detail::parent_grad(self, 0))
        for (std::size_t i = 0; i < saved.size(); ++i) g[i] += self.grad[i] * saved[i];
    });
  };
  Rng rng(0);
  const auto report = grad_check([&] { return sum(wrong_square(x)); }, {{"x", x}}, rng);
  EXPECT_FALSE(report.ok());
  EXPECT_EQ(report.failures.size(), 3u);
}

TEST(Rng, DeterministicAndForkable) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(c.below(5), 5u);
  }
  std::vector<int> v = {1, 2, 3, 4, 5, 6};
  Rng d(9), e(9);
  auto w = v;
  d.shuffle(v);
  e.shuffle(w);
  EXPECT_EQ(v, w);
}

TEST(Params, InitialisationAndDecayFlags) {
  ParamSet ps;
  Rng rng(5);
  Tensor w = ps.weight("w", 16, 8, rng);
  Tensor b = ps.constant("b", {8}, 0.0);
  Tensor e = ps.embedding("e", 10, 4, rng);
  const double bound = 1.0 / std::sqrt(16.0);
  for (double v : w.values()) EXPECT_LE(std::abs(v), bound);
  EXPECT_TRUE(ps.find("w")->decay);
  EXPECT_FALSE(ps.find("b")->decay);
  EXPECT_TRUE(ps.find("e")->decay);
  EXPECT_EQ(ps.scalar_count(), 16u * 8u + 8u + 40u);
  EXPECT_THROW(ps.constant("b", {1}, 0.0), Error);
}
