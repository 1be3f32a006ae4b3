// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ldar/diffcore.hpp"
#include "ldar/environ.hpp"
#include "ldar/oracle.hpp"
#include "ldar/policy.hpp"
#include "ldar/strategies.hpp"

namespace ldar {

// One policy decision on one instance, with its differentiable log-prob
// still attached to `tape`.
struct Rollout {
  std::vector<std::size_t> selection;
  Var log_prob;
  BandParams params;  // band policies only
  BandAction action;  // band policies; for Bernoulli, rank span of the mask
  IndexBand band;     // one-based sorted positions covered (hull for Bernoulli)
};

// Sampled action unless `greedy`, in which case the band policy uses the
// Beta means and the Bernoulli policy its mode.
inline Rollout run_policy(Tape& tape, const PolicyParams& params, const Instance& inst, Rng& rng, bool greedy = false) {
  Rollout out;
  const std::size_t n = inst.size();
  if (params.kind() == PolicyKind::band) {
    const auto sorted = sorted_ascending(inst.scores);
    const BandHeads heads = band_forward(tape, params, sorted);
    out.params = heads.values();
    const double clamp = params.config().sample_clamp;
    out.action = greedy ? mean_band(out.params, clamp) : sample_band(out.params, rng, clamp);
    out.log_prob = band_log_prob(heads, out.action);
    out.band = quantiles_to_indices(n, out.action.q_lower, out.action.q_upper);
    out.selection = select_band(inst.scores, out.band);
    return out;
  }
  std::vector<char> mask;
  if (greedy) {
    out.selection = bernoulli_mode(params, inst.scores);
    const auto order = ascending_order(inst.scores);
    mask.assign(n, 0);
    std::vector<std::size_t> rank(n);
    for (std::size_t r = 0; r < n; ++r) rank[order[r]] = r;
    for (std::size_t i : out.selection) mask[rank[i]] = 1;
    const auto sorted = sorted_ascending(inst.scores);
    out.log_prob = bernoulli_log_prob(tape, bernoulli_logits(tape, params, sorted), mask);
  } else {
    BernoulliRollout b = bernoulli_forward(tape, params, inst.scores, rng);
    out.selection = std::move(b.selection);
    out.log_prob = b.log_prob;
    mask = std::move(b.mask);
  }
  std::size_t lo = n, hi = 0;
  for (std::size_t r = 0; r < n; ++r)
    if (mask[r]) {
      lo = std::min(lo, r);
      hi = r;
    }
  out.band = {lo + 1, hi + 1};
  out.action.q_lower = static_cast<double>(lo) / static_cast<double>(n);
  out.action.q_upper = static_cast<double>(hi + 1) / static_cast<double>(n);
  out.action.log_prob = out.log_prob.item();
  return out;
}

}  // namespace ldar
