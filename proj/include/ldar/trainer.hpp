// SPDX-License-Identifier: Apache-2.0
//
// Score-function (REINFORCE) training of band and Bernoulli policies with an
// exponential-moving-average reward baseline and Adam.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ldar/diffcore.hpp"
#include "ldar/environ.hpp"
#include "ldar/errors.hpp"
#include "ldar/oracle.hpp"
#include "ldar/policy.hpp"
#include "ldar/random.hpp"
#include "ldar/rollout.hpp"

namespace ldar {

struct TrainerConfig {
  std::size_t batch_size = 32;
  double learning_rate = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double ema_coeff = 0.5;
  std::size_t total_steps = 2000;
  double grad_clip_norm = 5.0;  // +inf disables clipping
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;  // 0: evaluate and checkpoint only at the end
  double holdout_fraction = 0.2;

  void validate() const {
    if (batch_size < 1) throw ConfigError("trainer: batch_size must be at least 1");
    if (!(learning_rate > 0.0)) throw ConfigError("trainer: learning_rate must be positive");
    if (!(ema_coeff >= 0.0 && ema_coeff <= 1.0)) throw ConfigError("trainer: ema_coeff must lie in [0, 1]");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      throw ConfigError("trainer: Adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("trainer: adam_eps must be positive");
    if (!(grad_clip_norm > 0.0)) throw ConfigError("trainer: grad_clip_norm must be positive");
    if (total_steps < 1) throw ConfigError("trainer: total_steps must be at least 1");
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0))
      throw ConfigError("trainer: holdout_fraction must lie in [0, 1)");
  }

  bool operator==(const TrainerConfig&) const = default;
};

struct TrainerState {
  std::size_t step = 0;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
  double baseline = 0.0;

  static TrainerState zeros_like(const PolicyParams& p) {
    TrainerState s;
    for (const auto& [name, t] : p.tensors()) {
      s.first_moment[name] = Tensor(t.rows(), t.cols());
      s.second_moment[name] = Tensor(t.rows(), t.cols());
    }
    return s;
  }
};

struct StepMetrics {
  std::size_t step = 0;
  double mean_reward = 0.0;
  double baseline = 0.0;  // after this step's update
  double loss = 0.0;
  double mean_q_lower = 0.0;
  double mean_q_upper = 0.0;
  double passage_ratio = 0.0;
  double token_ratio = 0.0;
};

inline double global_norm(const GradMap& grads) {
  double s = 0.0;
  for (const auto& [_, g] : grads)
    for (double v : g.data()) s += v * v;
  return std::sqrt(s);
}

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_global_norm(GradMap& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (std::isfinite(max_norm) && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& [_, g] : grads)
      for (double& v : g.data()) v *= f;
  }
  return norm;
}

// Bias-corrected Adam: theta -= lr * m_hat / (sqrt(v_hat) + eps).
inline void adam_step(PolicyParams& params, const GradMap& grads, TrainerState& state, const TrainerConfig& cfg) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
  for (auto& [name, theta] : params.tensors()) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    if (!g.same_shape(theta)) throw DimensionError("adam: gradient shape mismatch for '" + name + "'");
    Tensor& m = state.first_moment.at(name);
    Tensor& v = state.second_moment.at(name);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
      v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

inline void accumulate(GradMap& into, const GradMap& g) {
  for (const auto& [name, t] : g) {
    auto it = into.find(name);
    if (it == into.end()) {
      into.emplace(name, t);
      continue;
    }
    for (std::size_t i = 0; i < t.size(); ++i) it->second[i] += t[i];
  }
}

// Batch gradient of -(1/B) sum_i (r_i - b) log pi(a_i | s_i), together with
// the rollout statistics. Parameters are not modified.
struct BatchGradient {
  GradMap grads;
  std::vector<int> rewards;
  StepMetrics metrics;
};

inline BatchGradient policy_gradient(const PolicyParams& params, std::span<const Instance* const> batch, double baseline,
                                     std::uint64_t step_seed, OracleClient* oracle = nullptr) {
  if (batch.empty()) throw UsageError("reinforce_step: empty batch");
  BatchGradient out;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Instance& inst = *batch[i];
    Rng rng(mix_seed(step_seed, i));
    Tape tape;
    Rollout ro = [&] {
      try {
        return run_policy(tape, params, inst, rng);
      } catch (const NumericError& e) {
        throw NumericError("instance '" + inst.id + "': " + e.what());
      }
    }();
    const int r = reward(inst, ro.selection, rng, oracle);
    const double advantage = static_cast<double>(r) - baseline;
    Var term = scale(ro.log_prob, -advantage * inv_b);
    if (!std::isfinite(term.item()))
      throw NumericError("non-finite loss on instance '" + inst.id + "' (log_prob " +
                         std::to_string(ro.log_prob.item()) + ")");
    loss += term.item();
    accumulate(out.grads, tape.backward(term));
    out.rewards.push_back(r);
    out.metrics.mean_reward += r * inv_b;
    out.metrics.mean_q_lower += ro.action.q_lower * inv_b;
    out.metrics.mean_q_upper += ro.action.q_upper * inv_b;
    out.metrics.passage_ratio += passage_ratio(inst, ro.selection) * inv_b;
    out.metrics.token_ratio += token_ratio(inst, ro.selection) * inv_b;
  }
  out.metrics.loss = loss;
  for (const auto& [name, g] : out.grads)
    if (!g.all_finite()) throw NumericError("non-finite gradient for parameter '" + name + "'");
  return out;
}

// One REINFORCE update. The advantage uses the baseline from before this
// batch; afterwards b <- c b + (1 - c) mean(r).
inline StepMetrics reinforce_step(PolicyParams& params, TrainerState& state, std::span<const Instance* const> batch,
                                  const TrainerConfig& cfg, std::uint64_t step_seed, OracleClient* oracle = nullptr) {
  BatchGradient bg = policy_gradient(params, batch, state.baseline, step_seed, oracle);
  clip_global_norm(bg.grads, cfg.grad_clip_norm);
  adam_step(params, bg.grads, state, cfg);
  state.baseline = cfg.ema_coeff * state.baseline + (1.0 - cfg.ema_coeff) * bg.metrics.mean_reward;
  bg.metrics.step = state.step;
  bg.metrics.baseline = state.baseline;
  return bg.metrics;
}

inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* kMetricsHeader = "step,mean_reward,baseline,loss,mean_qL,mean_qU,passage_ratio,token_ratio";

inline std::string metrics_row(const StepMetrics& m) {
  return std::to_string(m.step) + "," + format_real(m.mean_reward) + "," + format_real(m.baseline) + "," +
         format_real(m.loss) + "," + format_real(m.mean_q_lower) + "," + format_real(m.mean_q_upper) + "," +
         format_real(m.passage_ratio) + "," + format_real(m.token_ratio);
}

// Position `k` of the endless stream of per-epoch shuffles of 0..m-1.
class EpochSampler {
 public:
  EpochSampler(std::size_t m, std::uint64_t seed) : m_(m), seed_(seed) {
    if (m == 0) throw UsageError("training set is empty");
  }

  std::size_t at(std::size_t k) {
    const std::size_t epoch = k / m_;
    if (epoch != epoch_ || order_.empty()) shuffle(epoch);
    return order_[k % m_];
  }

 private:
  void shuffle(std::size_t epoch) {
    epoch_ = epoch;
    order_.resize(m_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng(mix_seed(seed_, 0x5eedULL + epoch));
    for (std::size_t i = m_ - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
      std::swap(order_[i], order_[j]);
    }
  }

  std::size_t m_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::vector<std::size_t> order_;
};

}  // namespace ldar
