// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"

namespace ldar {
namespace {

using testing::finite_difference;
using testing::random_tensor;

TEST(Matmul, IdentityTimesMatrix) {
  Tape t;
  Var c = matmul(t.constant({{1, 0}, {0, 1}}), t.constant({{3, 4}, {5, 6}}));
  EXPECT_EQ(c.value(), (Tensor{{3, 4}, {5, 6}}));
}

TEST(Matmul, OneByOne) {
  Tape t;
  EXPECT_EQ(matmul(t.constant({{2}}), t.constant({{7}})).item(), 14.0);
}

TEST(Matmul, ShapeMismatchIsDimensionError) {
  Tape t;
  EXPECT_THROW(matmul(t.constant(Tensor(2, 3)), t.constant(Tensor(2, 3))), DimensionError);
  EXPECT_THROW(add(t.constant(Tensor(2, 3)), t.constant(Tensor(3, 2))), DimensionError);
}

TEST(Matmul, BlockedKernelMatchesNaiveSum) {
  Rng rng(5);
  for (std::size_t m : {1u, 3u, 4u, 7u, 9u}) {
    Tensor a = random_tensor(rng, m, 6), b = random_tensor(rng, 6, 5);
    Tape t;
    const Tensor c = matmul(t.constant(a), t.constant(b)).value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 6; ++k) s += a(i, k) * b(k, j);
        EXPECT_EQ(c(i, j), s);
      }
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  std::map<std::string, Tensor> x{{"a", random_tensor(rng, 3, 4)}, {"b", random_tensor(rng, 4, 2)}};
  const Tensor r = random_tensor(rng, 3, 2);
  auto loss = [&](Tape& t) {
    return sum(mul(matmul(t.variable(x["a"], "a"), t.variable(x["b"], "b")), t.constant(r)));
  };
  Tape t;
  const GradMap g = t.backward(loss(t));
  const auto fd = finite_difference(x, g, [&] {
    Tape u;
    return loss(u).item();
  });
  EXPECT_LT(fd.max_rel, 1e-6) << fd.worst;
}

// Every differentiable op, random inputs and random linear read-out, 100 seeds.
struct OpCase {
  const char* name;
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  double lo, hi;  // input domain
  std::function<Var(Tape&, const std::vector<Var>&)> build;
};

std::vector<OpCase> op_cases() {
  return {
      {"matmul", {{3, 4}, {4, 2}}, -1, 1, [](Tape&, const auto& v) { return matmul(v[0], v[1]); }},
      {"matmul_nt", {{3, 4}, {5, 4}}, -1, 1, [](Tape&, const auto& v) { return matmul_nt(v[0], v[1]); }},
      {"transpose", {{3, 4}}, -1, 1, [](Tape&, const auto& v) { return transpose(v[0]); }},
      {"add", {{2, 3}, {2, 3}}, -1, 1, [](Tape&, const auto& v) { return v[0] + v[1]; }},
      {"sub", {{2, 3}, {2, 3}}, -1, 1, [](Tape&, const auto& v) { return v[0] - v[1]; }},
      {"mul", {{2, 3}, {2, 3}}, -1, 1, [](Tape&, const auto& v) { return v[0] * v[1]; }},
      {"add_row", {{4, 3}, {1, 3}}, -1, 1, [](Tape&, const auto& v) { return add_row(v[0], v[1]); }},
      {"scale", {{2, 3}}, -1, 1, [](Tape&, const auto& v) { return 2.5 * v[0]; }},
      {"add_scalar", {{2, 3}}, -1, 1, [](Tape&, const auto& v) { return add_scalar(v[0], -0.7); }},
      {"sin", {{2, 3}}, -3, 3, [](Tape&, const auto& v) { return sin(v[0]); }},
      {"cos", {{2, 3}}, -3, 3, [](Tape&, const auto& v) { return cos(v[0]); }},
      {"softplus", {{2, 3}}, -5, 5, [](Tape&, const auto& v) { return softplus(v[0]); }},
      {"sigmoid", {{2, 3}}, -5, 5, [](Tape&, const auto& v) { return sigmoid(v[0]); }},
      {"gelu", {{2, 3}}, -3, 3, [](Tape&, const auto& v) { return gelu(v[0]); }},
      {"log", {{2, 3}}, 0.2, 3, [](Tape&, const auto& v) { return log(v[0]); }},
      {"lgamma", {{2, 3}}, 0.1, 8, [](Tape&, const auto& v) { return lgamma(v[0]); }},
      {"sum", {{3, 3}}, -1, 1, [](Tape&, const auto& v) { return sum(v[0]); }},
      {"softmax_rows", {{3, 5}}, -2, 2, [](Tape&, const auto& v) { return softmax_rows(v[0]); }},
      {"layer_norm_rows", {{3, 5}, {1, 5}, {1, 5}}, -2, 2,
       [](Tape&, const auto& v) { return layer_norm_rows(v[0], v[1], v[2], 1e-5); }},
      {"slice_cols", {{3, 6}}, -1, 1, [](Tape&, const auto& v) { return slice_cols(v[0], 2, 3); }},
      {"concat_cols", {{3, 2}, {3, 4}}, -1, 1, [](Tape&, const auto& v) { return concat_cols({v[0], v[1]}); }},
  };
}

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesCentralDifferencesOver100Seeds) {
  const OpCase& c = GetParam();
  double worst = 0.0;
  std::string where;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(mix_seed(seed, 77));
    std::map<std::string, Tensor> x;
    for (std::size_t i = 0; i < c.shapes.size(); ++i)
      x["x" + std::to_string(i)] = random_tensor(rng, c.shapes[i].first, c.shapes[i].second, c.lo, c.hi);
    Tensor readout;
    auto loss = [&](Tape& t) {
      std::vector<Var> in;
      for (auto& [name, v] : x) in.push_back(t.variable(v, name));
      Var out = c.build(t, in);
      if (readout.empty()) readout = random_tensor(rng, out.rows(), out.cols());
      return sum(mul(out, t.constant(readout)));
    };
    Tape t;
    const GradMap g = t.backward(loss(t));
    const auto fd = finite_difference(x, g, [&] {
      Tape u;
      return loss(u).item();
    });
    if (fd.max_rel > worst) {
      worst = fd.max_rel;
      where = "seed " + std::to_string(seed) + " " + fd.worst;
    }
  }
  EXPECT_LT(worst, 1e-4) << c.name << ": " << where;
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::ValuesIn(op_cases()),
                         [](const auto& info) { return std::string(info.param.name); });

TEST(Softmax, ConstantRowIsUniform) {
  Tape t;
  const Tensor s = softmax_rows(t.constant({{0.3, 0.3, 0.3}})).value();
  for (double v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ClosedFormTwoEntries) {
  Tape t;
  const Tensor s = softmax_rows(t.constant({{0.0, std::log(2.0)}})).value();
  EXPECT_NEAR(s[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(s[1], 2.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariantAndStable) {
  Tape t;
  const Tensor a = softmax_rows(t.constant({{0.2, -1.3}})).value();
  const Tensor b = softmax_rows(t.constant({{1000.2, 998.7}})).value();
  EXPECT_NEAR(a[0], b[0], 1e-12);
  EXPECT_NEAR(a[1], b[1], 1e-12);
  EXPECT_TRUE(b.all_finite());
}

TEST(Softmax, RowsSumToOneWithEntriesInOpenInterval) {
  Rng rng(3);
  Tape t;
  const Tensor s = softmax_rows(t.constant(random_tensor(rng, 6, 9, -20, 20))).value();
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < s.cols(); ++j) {
      EXPECT_GT(s(i, j), 0.0);
      EXPECT_LT(s(i, j), 1.0);
      total += s(i, j);
    }
    EXPECT_NEAR(total, 1.0, 1e-14);
  }
}

TEST(LayerNorm, ConstantInputMapsToBias) {
  Tape t;
  const Tensor y = layer_norm_rows(t.constant({{5, 5}}), t.constant({{1, 1}}), t.constant({{0, 0}}), 1e-5).value();
  EXPECT_NEAR(y[0], 0.0, 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
}

TEST(LayerNorm, UnitVarianceInput) {
  Tape t;
  const Tensor y = layer_norm_rows(t.constant({{-1, 1}}), t.constant({{1, 1}}), t.constant({{0, 0}}), 1e-12).value();
  EXPECT_NEAR(y[0], -1.0, 1e-9);
  EXPECT_NEAR(y[1], 1.0, 1e-9);
}

TEST(LayerNorm, GainAndBiasApplied) {
  Tape t;
  const Tensor y = layer_norm_rows(t.constant({{-1, 1}}), t.constant({{2, 3}}), t.constant({{0.5, -0.5}}), 1e-12).value();
  EXPECT_NEAR(y[0], -1.5, 1e-9);
  EXPECT_NEAR(y[1], 2.5, 1e-9);
}

TEST(LayerNorm, GradientWithinTolerance) {
  Rng rng(21);
  std::map<std::string, Tensor> x{{"x", random_tensor(rng, 1, 7, -3, 3)},
                                  {"g", random_tensor(rng, 1, 7, 0.5, 1.5)},
                                  {"b", random_tensor(rng, 1, 7)}};
  const Tensor r = random_tensor(rng, 1, 7);
  auto loss = [&](Tape& t) {
    return sum(mul(layer_norm_rows(t.variable(x["x"], "x"), t.variable(x["g"], "g"), t.variable(x["b"], "b"), 1e-5),
                   t.constant(r)));
  };
  Tape t;
  const auto fd = finite_difference(x, t.backward(loss(t)), [&] {
    Tape u;
    return loss(u).item();
  });
  EXPECT_LT(fd.max_rel, 1e-5) << fd.worst;
}

TEST(Backward, SumGivesOnes) {
  Tape t;
  Var w = t.variable(Tensor(2, 3, 0.4), "w");
  const GradMap g = t.backward(sum(w));
  for (double v : g.at("w").data()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, DetachedParameterHasZeroGradient) {
  Tape t;
  Var w = t.variable(Tensor(2, 2, 1.0), "w");
  Var v = t.variable(Tensor(2, 2, 3.0), "v");
  const GradMap g = t.backward(sum(v));
  (void)w;
  for (double x : g.at("w").data()) EXPECT_EQ(x, 0.0);
  for (double x : g.at("v").data()) EXPECT_EQ(x, 1.0);
}

TEST(Backward, NonScalarLossIsUsageError) {
  Tape t;
  Var w = t.variable(Tensor(2, 2, 1.0), "w");
  EXPECT_THROW(t.backward(w), UsageError);
}

TEST(Backward, SecondPassIsIdempotent) {
  Tape t;
  Var w = t.variable({{0.3, -0.2}}, "w");
  Var loss = sum(mul(sin(w), w));
  const GradMap g1 = t.backward(loss);
  const GradMap g2 = t.backward(loss);
  EXPECT_EQ(g1.at("w"), g2.at("w"));
}

TEST(Backward, SharedParameterAccumulates) {
  Tensor storage{{2.0}};
  Tape t;
  Var a = t.parameter("p", storage);
  Var b = t.parameter("p", storage);
  EXPECT_EQ(a.id, b.id);
  const GradMap g = t.backward(mul(a, b));  // p^2
  EXPECT_EQ(g.at("p")[0], 4.0);
}

TEST(Backward, TapeIsTopologicallyOrdered) {
  Tape t;
  Var x = t.variable({{1.0, 2.0}}, "x");
  Var y = add(sin(x), cos(x));
  for (int id = 0; id < static_cast<int>(t.size()); ++id)
    if (id > x.id && t.requires_grad(id)) {
      EXPECT_LT(t.input(id, 0), id);
    }
  EXPECT_EQ(y.id, static_cast<int>(t.size()) - 1);
}

TEST(Forward, BitIdenticalOnRepeat) {
  Rng rng(1);
  const Tensor a = random_tensor(rng, 5, 8), b = random_tensor(rng, 8, 3);
  auto run = [&] {
    Tape t;
    return softmax_rows(gelu(matmul(t.constant(a), t.constant(b)))).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Specials, SoftplusValues) {
  EXPECT_NEAR(special::softplus(0.0), std::numbers::ln2, 1e-15);
  EXPECT_EQ(special::softplus(50.0), 50.0);
  EXPECT_GT(special::softplus(-50.0), 0.0);
  EXPECT_NEAR(special::softplus(special::softplus_inverse(1.0)), 1.0, 1e-14);
  EXPECT_NEAR(special::softplus_inverse(1.0), 0.541324854612918, 1e-12);
}

TEST(Specials, LgammaExactPointsAndHalf) {
  EXPECT_EQ(special::lgamma(1.0), 0.0);
  EXPECT_EQ(special::lgamma(2.0), 0.0);
  EXPECT_NEAR(special::lgamma(0.5), 0.5723649429247001, 1e-12);
}

TEST(Specials, LgammaAgreesWithLibraryOnWideRange) {
  double worst = 0.0;
  for (double x = 1e-3; x < 1e6; x *= 1.07) {
    const double ref = std::lgamma(x);
    worst = std::max(worst, std::abs(special::lgamma(x) - ref) / std::max(1.0, std::abs(ref)));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Specials, DomainErrors) {
  EXPECT_THROW(special::lgamma(0.0), DomainError);
  EXPECT_THROW(special::lgamma(-1.5), DomainError);
  EXPECT_THROW(special::checked_log(0.0), DomainError);
  Tape t;
  EXPECT_THROW(log(t.constant({{-1.0}})), DomainError);
}

TEST(Specials, DigammaMatchesDerivativeOfLgamma) {
  for (double x : {0.05, 0.3, 1.0, 2.5, 5.9, 6.0, 17.0, 300.0}) {
    const double h = 1e-5 * std::max(1.0, x);
    const double fd = (std::lgamma(x + h) - std::lgamma(x - h)) / (2 * h);
    EXPECT_NEAR(special::digamma(x), fd, 1e-6 * std::max(1.0, std::abs(fd))) << x;
  }
  EXPECT_NEAR(special::digamma(1.0), -0.5772156649015329, 1e-13);
}

TEST(Specials, SigmoidAndGelu) {
  EXPECT_EQ(special::sigmoid(0.0), 0.5);
  EXPECT_NEAR(special::sigmoid(-800.0), 0.0, 1e-300);
  EXPECT_EQ(special::gelu(0.0), 0.0);
  EXPECT_NEAR(special::gelu(1.0), 0.8413447460685429, 1e-14);
}

}  // namespace
}  // namespace ldar
