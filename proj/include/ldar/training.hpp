// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "ldar/checkpoint.hpp"
#include "ldar/environ.hpp"
#include "ldar/evaluation.hpp"
#include "ldar/oracle.hpp"
#include "ldar/policy.hpp"
#include "ldar/random.hpp"
#include "ldar/trainer.hpp"

namespace ldar {

struct DatasetSplit {
  std::vector<Instance> train;
  std::vector<Instance> heldout;
};

// The last ceil(fraction * M) instances are held out; at least one instance
// always stays in the training part.
inline DatasetSplit split_holdout(const std::vector<Instance>& data, double fraction) {
  if (data.empty()) throw DataError("dataset is empty");
  std::size_t n_hold = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(data.size())));
  n_hold = std::min(n_hold, data.size() - 1);
  DatasetSplit s;
  s.train.assign(data.begin(), data.end() - static_cast<std::ptrdiff_t>(n_hold));
  s.heldout.assign(data.end() - static_cast<std::ptrdiff_t>(n_hold), data.end());
  return s;
}

// Owns parameters, optimizer state and the rollout stream of one run.
class Trainer {
 public:
  Trainer(const PolicyConfig& pc, PolicyKind kind, const TrainerConfig& tc, OracleClient* oracle = nullptr)
      : cfg_(tc), rng_(mix_seed(tc.seed, 2)), oracle_(oracle) {
    cfg_.validate();
    Rng init(mix_seed(tc.seed, 1));
    params_ = PolicyParams::initialize(pc, kind, init);
    state_ = TrainerState::zeros_like(params_);
  }

  explicit Trainer(const Checkpoint& ck, OracleClient* oracle = nullptr)
      : cfg_(ck.trainer), params_(ck.params), state_(ck.state), oracle_(oracle) {
    rng_.set_state(ck.rng_state);
  }

  // One update on the next batch of the epoch stream over `train_set`.
  StepMetrics step(const std::vector<Instance>& train_set) {
    EpochSampler sampler(train_set.size(), cfg_.seed);
    std::vector<const Instance*> batch;
    batch.reserve(cfg_.batch_size);
    const std::size_t first = state_.step * cfg_.batch_size;
    for (std::size_t i = 0; i < cfg_.batch_size; ++i) batch.push_back(&train_set[sampler.at(first + i)]);
    const std::uint64_t step_seed = rng_.next_u64();
    return reinforce_step(params_, state_, batch, cfg_, step_seed, oracle_);
  }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    ck.params = params_;
    ck.trainer = cfg_;
    ck.state = state_;
    ck.rng_state = rng_.state();
    return ck;
  }

  const PolicyParams& params() const { return params_; }
  const TrainerState& state() const { return state_; }
  const TrainerConfig& config() const { return cfg_; }

 private:
  TrainerConfig cfg_;
  PolicyParams params_;
  TrainerState state_;
  Rng rng_;
  OracleClient* oracle_ = nullptr;
};

struct TrainOptions {
  std::string metrics_path;     // empty: no metrics file
  std::string checkpoint_path;  // empty: no checkpoint file
  std::uint64_t eval_seed = 0;
  std::ostream* log = nullptr;  // progress lines, one per evaluation
};

struct EvalPoint {
  std::size_t step = 0;
  EvalReport report;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepMetrics> metrics;
  std::vector<EvalPoint> evals;
};

// Full run: total_steps updates, evaluation and checkpointing every
// eval_every steps and at the end, one metrics row per step.
inline TrainResult train(const PolicyConfig& pc, PolicyKind kind, const TrainerConfig& tc,
                         const std::vector<Instance>& train_set, const std::vector<Instance>& heldout,
                         const TrainOptions& opts = {}, OracleClient* oracle = nullptr) {
  tc.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  Trainer trainer(pc, kind, tc, oracle);
  TrainResult result;
  std::ofstream metrics;
  if (!opts.metrics_path.empty()) {
    metrics.open(opts.metrics_path, std::ios::trunc);
    if (!metrics) throw DataError("cannot open metrics file '" + opts.metrics_path + "'");
    metrics << kMetricsHeader << '\n';
  }
  auto evaluate_now = [&](std::size_t step) {
    if (!heldout.empty()) {
      EvalPoint pt{step, evaluate_policy(to_string(kind), trainer.params(), heldout, opts.eval_seed, false, oracle)};
      if (opts.log)
        *opts.log << "step " << step << " heldout score " << pt.report.mean_score << " token_ratio "
                  << pt.report.mean_token_ratio << '\n';
      result.evals.push_back(std::move(pt));
    }
    if (!opts.checkpoint_path.empty()) save_checkpoint(trainer.checkpoint(), opts.checkpoint_path);
  };
  for (std::size_t s = 0; s < tc.total_steps; ++s) {
    StepMetrics m = trainer.step(train_set);
    if (metrics.is_open()) {
      metrics << metrics_row(m) << '\n';
      if (!metrics) throw DataError("failed writing metrics file '" + opts.metrics_path + "'");
    }
    result.metrics.push_back(m);
    if (tc.eval_every > 0 && m.step % tc.eval_every == 0 && m.step != tc.total_steps) evaluate_now(m.step);
  }
  evaluate_now(tc.total_steps);
  result.checkpoint = trainer.checkpoint();
  return result;
}

}  // namespace ldar
