// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "support.hpp"

namespace ldar {
namespace {

PolicyParams scalar_params(double value, double grad_shape_rows = 1) {
  PolicyParams p(testing::tiny_config(), PolicyKind::band);
  p.tensors()["w"] = Tensor(static_cast<std::size_t>(grad_shape_rows), 1, value);
  return p;
}

TEST(TrainerConfig, DefaultsAndValidation) {
  TrainerConfig c;
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_DOUBLE_EQ(c.learning_rate, 3e-4);
  EXPECT_DOUBLE_EQ(c.ema_coeff, 0.5);
  EXPECT_DOUBLE_EQ(c.grad_clip_norm, 5.0);
  c.total_steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainerConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainerConfig{};
  c.ema_coeff = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainerConfig{};
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  PolicyParams p = scalar_params(0.7);
  TrainerState s = TrainerState::zeros_like(p);
  adam_step(p, {{"w", Tensor(1, 1, 0.0)}}, s, TrainerConfig{});
  EXPECT_EQ(p.at("w")[0], 0.7);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, FirstStepIsSignTimesRate) {
  const TrainerConfig cfg;
  for (double g : {3.0, -0.02, 1e-3}) {
    PolicyParams p = scalar_params(0.0);
    TrainerState s = TrainerState::zeros_like(p);
    adam_step(p, {{"w", Tensor(1, 1, g)}}, s, cfg);
    const double delta = p.at("w")[0];
    EXPECT_NEAR(delta, -cfg.learning_rate * g / (std::abs(g) + cfg.adam_eps), 1e-18);
    EXPECT_NEAR(delta, -cfg.learning_rate * (g > 0 ? 1.0 : -1.0), cfg.learning_rate * 1e-5);
  }
}

TEST(Adam, TwoStepsMatchHandRecurrence) {
  TrainerConfig cfg;
  cfg.learning_rate = 0.01;
  const double g = 0.37;
  PolicyParams p = scalar_params(1.0);
  TrainerState s = TrainerState::zeros_like(p);
  double theta = 1.0, m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    adam_step(p, {{"w", Tensor(1, 1, g)}}, s, cfg);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    theta -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.adam_eps);
    EXPECT_NEAR(s.first_moment.at("w")[0], m, 1e-12);
    EXPECT_NEAR(s.second_moment.at("w")[0], v, 1e-12);
    EXPECT_NEAR(s.first_moment.at("w")[0] / (1 - std::pow(0.9, t)), mh, 1e-12);
    EXPECT_NEAR(s.second_moment.at("w")[0] / (1 - std::pow(0.999, t)), vh, 1e-12);
    EXPECT_NEAR(p.at("w")[0], theta, 1e-12);
    EXPECT_GE(s.second_moment.at("w")[0], 0.0);
  }
}

TEST(Clip, PreservesDirection) {
  GradMap g{{"a", Tensor{{3.0, -4.0}}}, {"b", Tensor{{12.0}}}};
  const GradMap before = g;
  const double norm = clip_global_norm(g, 5.0);
  EXPECT_NEAR(norm, 13.0, 1e-12);
  EXPECT_NEAR(global_norm(g), 5.0, 1e-12);
  double dot = 0, na = 0, nb = 0;
  for (const auto& [k, t] : g)
    for (std::size_t i = 0; i < t.size(); ++i) {
      dot += t[i] * before.at(k)[i];
      na += t[i] * t[i];
      nb += before.at(k)[i] * before.at(k)[i];
    }
  EXPECT_NEAR(dot / std::sqrt(na * nb), 1.0, 1e-15);
}

TEST(Clip, SmallOrUnboundedNormsUntouched) {
  GradMap g{{"a", Tensor{{0.3, 0.4}}}};
  clip_global_norm(g, 5.0);
  EXPECT_EQ(g.at("a"), (Tensor{{0.3, 0.4}}));
  GradMap big{{"a", Tensor{{300.0, 400.0}}}};
  clip_global_norm(big, std::numeric_limits<double>::infinity());
  EXPECT_EQ(big.at("a"), (Tensor{{300.0, 400.0}}));
}

// Every instance rewards any selection, so r = 1 always.
std::vector<Instance> always_right(std::size_t n, Rng& rng) {
  std::vector<Instance> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(testing::make_instance(instance_id("a", i), testing::random_scores(rng, 8), {}));
  return out;
}

std::vector<const Instance*> pointers(const std::vector<Instance>& v) {
  std::vector<const Instance*> p;
  for (const auto& x : v) p.push_back(&x);
  return p;
}

TEST(ReinforceStep, ZeroAdvantageLeavesParameters) {
  Rng rng(1);
  const auto data = always_right(4, rng);
  PolicyParams p = testing::tiny_policy(2);
  const PolicyParams before = p;
  TrainerState s = TrainerState::zeros_like(p);
  s.baseline = 1.0;
  const StepMetrics m = reinforce_step(p, s, pointers(data), TrainerConfig{}, 77);
  EXPECT_EQ(m.mean_reward, 1.0);
  for (const auto& [name, t] : p.tensors()) EXPECT_EQ(t, before.at(name)) << name;
}

TEST(ReinforceStep, BaselineEmaUpdate) {
  Rng rng(3);
  const auto data = always_right(4, rng);
  PolicyParams p = testing::tiny_policy(4);
  TrainerState s = TrainerState::zeros_like(p);
  TrainerConfig cfg;
  reinforce_step(p, s, pointers(data), cfg, 1);
  EXPECT_EQ(s.baseline, 0.5);
  cfg.ema_coeff = 1.0;
  s.baseline = 0.25;
  reinforce_step(p, s, pointers(data), cfg, 2);
  EXPECT_EQ(s.baseline, 0.25);
  cfg.ema_coeff = 0.0;
  reinforce_step(p, s, pointers(data), cfg, 3);
  EXPECT_EQ(s.baseline, 1.0);
}

TEST(ReinforceStep, MovesAlongAdvantageTimesScore) {
  // Batch of one with reward 1 and baseline 0.3: the first Adam step moves
  // each parameter by -lr * sign of the loss gradient, i.e. along
  // sign(A * dlogpi/dtheta).
  Rng rng(5);
  const auto data = always_right(1, rng);
  PolicyParams p = testing::tiny_policy(6);
  const PolicyParams before = p;
  TrainerState s = TrainerState::zeros_like(p);
  s.baseline = 0.3;
  TrainerConfig cfg;
  cfg.grad_clip_norm = std::numeric_limits<double>::infinity();
  const std::uint64_t step_seed = 99;
  reinforce_step(p, s, pointers(data), cfg, step_seed);
  Rng replay(mix_seed(step_seed, 0));
  Tape t;
  const Rollout ro = run_policy(t, before, data[0], replay);
  const GradMap score = t.backward(ro.log_prob);
  const double advantage = 1.0 - 0.3;
  int checked = 0;
  for (const char* name : {"head.alpha_lower.bias", "head.beta_lower.bias", "head.alpha_width.bias", "head.beta_width.bias"}) {
    const double d = score.at(name)[0];
    if (std::abs(d) < 1e-9) continue;
    const double moved = p.at(name)[0] - before.at(name)[0];
    EXPECT_EQ(moved > 0, advantage * d > 0) << name;
    ++checked;
  }
  EXPECT_GT(checked, 0);
}

TEST(ReinforceStep, EmptyBatchIsUsageError) {
  PolicyParams p = testing::tiny_policy(7);
  TrainerState s = TrainerState::zeros_like(p);
  EXPECT_THROW(reinforce_step(p, s, std::vector<const Instance*>{}, TrainerConfig{}, 0), UsageError);
}

TEST(ReinforceStep, NonFiniteLossNamesInstance) {
  Rng rng(8);
  auto data = always_right(1, rng);
  data[0].id = "poison";
  PolicyParams p = testing::tiny_policy(9);
  p.at("head.alpha_lower.bias")[0] = std::numeric_limits<double>::quiet_NaN();
  TrainerState s = TrainerState::zeros_like(p);
  s.baseline = 0.5;
  try {
    reinforce_step(p, s, pointers(data), TrainerConfig{}, 0);
    FAIL() << "expected a numeric error";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("poison"), std::string::npos) << e.what();
  }
}

// log Beta(q; a, b) score, d/da = log q - psi(a) + psi(a + b).
TEST(Estimator, UnbiasedOnTwoArmBandit) {
  // Arm 1 pays when q > 0.5. J(a, b) = P(q > 0.5) under Beta(a, b).
  const double a = 2.0, b = 3.0;
  auto pdf = [&](double x) { return std::exp(beta_log_pdf(x, a, b)); };
  const int m = 20000;
  double ga = 0.0, gb = 0.0;
  const double da0 = -special::digamma(a) + special::digamma(a + b);
  const double db0 = -special::digamma(b) + special::digamma(a + b);
  for (int i = 0; i <= m; ++i) {  // Simpson on [0.5, 1)
    const double x = 0.5 + 0.5 * i / m * (1 - 1e-12);
    const double w = (i == 0 || i == m) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    ga += w * pdf(x) * (std::log(x) + da0);
    gb += w * pdf(x) * (std::log1p(-x) + db0);
  }
  const double h = 0.5 / m;
  ga *= h / 3;
  gb *= h / 3;

  Rng rng(10);
  const int n = 10000;
  double sa = 0, sb = 0, sa2 = 0, sb2 = 0;
  for (int i = 0; i < n; ++i) {
    const double q = rng.beta(a, b);
    const double r = q > 0.5 ? 1.0 : 0.0;
    Tape t;
    Var va = t.variable(Tensor::scalar(a), "a");
    Var vb = t.variable(Tensor::scalar(b), "b");
    const GradMap g = t.backward(detail::beta_log_pdf_on_tape(va, vb, q));
    const double ea = r * g.at("a")[0], eb = r * g.at("b")[0];
    sa += ea;
    sb += eb;
    sa2 += ea * ea;
    sb2 += eb * eb;
  }
  const double ma = sa / n, mb = sb / n;
  const double sea = std::sqrt((sa2 / n - ma * ma) / n), seb = std::sqrt((sb2 / n - mb * mb) / n);
  EXPECT_LT(std::abs(ma - ga), 3 * sea) << ma << " vs " << ga;
  EXPECT_LT(std::abs(mb - gb), 3 * seb) << mb << " vs " << gb;
}

TEST(EpochSampler, EachEpochIsAPermutation) {
  EpochSampler s(7, 3);
  for (std::size_t epoch = 0; epoch < 3; ++epoch) {
    std::vector<int> seen(7, 0);
    for (std::size_t k = 0; k < 7; ++k) ++seen[s.at(epoch * 7 + k)];
    for (int c : seen) EXPECT_EQ(c, 1);
  }
}

TEST(Training, SplitHoldout) {
  Rng rng(11);
  const auto data = always_right(10, rng);
  const auto split = split_holdout(data, 0.2);
  EXPECT_EQ(split.train.size(), 8u);
  EXPECT_EQ(split.heldout.size(), 2u);
  EXPECT_EQ(split.heldout[0].id, data[8].id);
  EXPECT_EQ(split_holdout(data, 0.0).heldout.size(), 0u);
}

TEST(Training, MetricsFileIsReproducible) {
  testing::TempDir dir;
  GeneratorConfig g;
  g.n_instances = 40;
  g.seed = 4;
  const auto data = generate(g);
  TrainerConfig tc;
  tc.total_steps = 6;
  tc.batch_size = 4;
  tc.seed = 12;
  tc.eval_every = 3;
  auto run = [&](const std::string& tag) {
    TrainOptions o;
    o.metrics_path = dir.file(tag + ".csv");
    o.checkpoint_path = dir.file(tag + ".ckpt");
    return train(testing::tiny_config(), PolicyKind::band, tc, data, {data.begin(), data.begin() + 8}, o);
  };
  const TrainResult a = run("a");
  const TrainResult b = run("b");
  const std::string ma = testing::read_file(dir.file("a.csv"));
  EXPECT_EQ(ma, testing::read_file(dir.file("b.csv")));
  EXPECT_EQ(ma.substr(0, ma.find('\n')), "step,mean_reward,baseline,loss,mean_qL,mean_qU,passage_ratio,token_ratio");
  EXPECT_EQ(std::count(ma.begin(), ma.end(), '\n'), 7);
  EXPECT_EQ(a.evals.size(), 2u);
  EXPECT_EQ(a.evals.back().report, b.evals.back().report);
  EXPECT_EQ(testing::read_file(dir.file("a.ckpt")), testing::read_file(dir.file("b.ckpt")));
}

TEST(Training, ZeroStepsIsConfigError) {
  TrainerConfig tc;
  tc.total_steps = 0;
  Rng rng(13);
  const auto data = always_right(3, rng);
  EXPECT_THROW(train(testing::tiny_config(), PolicyKind::band, tc, data, {}), ConfigError);
}

TEST(Training, RunsWithoutOutputFiles) {
  TrainerConfig tc;
  tc.total_steps = 3;
  tc.batch_size = 2;
  Rng rng(15);
  const auto data = always_right(4, rng);
  const TrainResult r = train(testing::tiny_config(), PolicyKind::band, tc, data, data);
  EXPECT_EQ(r.metrics.size(), 3u);
  EXPECT_EQ(r.evals.size(), 1u);
}

TEST(Training, UnwritableMetricsPathNamesFile) {
  TrainerConfig tc;
  tc.total_steps = 1;
  Rng rng(14);
  const auto data = always_right(3, rng);
  TrainOptions o;
  o.metrics_path = "/nonexistent-dir/m.csv";
  try {
    train(testing::tiny_config(), PolicyKind::band, tc, data, {}, o);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent-dir/m.csv"), std::string::npos);
  }
}

TEST(Training, ResumedTrainerContinuesIdentically) {
  GeneratorConfig g;
  g.n_instances = 30;
  g.seed = 15;
  const auto data = generate(g);
  TrainerConfig tc;
  tc.batch_size = 4;
  tc.seed = 16;
  Trainer straight(testing::tiny_config(), PolicyKind::band, tc);
  for (int i = 0; i < 4; ++i) straight.step(data);
  Trainer first(testing::tiny_config(), PolicyKind::band, tc);
  for (int i = 0; i < 2; ++i) first.step(data);
  Trainer resumed(deserialize_checkpoint(serialize_checkpoint(first.checkpoint())));
  for (int i = 0; i < 2; ++i) resumed.step(data);
  for (const auto& [name, t] : straight.params().tensors()) EXPECT_EQ(t, resumed.params().at(name)) << name;
  EXPECT_EQ(straight.state().baseline, resumed.state().baseline);
}

}  // namespace
}  // namespace ldar
