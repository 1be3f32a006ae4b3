// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ldar/diffcore.hpp"
#include "ldar/errors.hpp"
#include "ldar/policy.hpp"
#include "ldar/random.hpp"

namespace ldar {

// Indices sorted by descending score; ties keep the lower index first.
inline std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

inline std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  if (k < 1) throw UsageError("top_k: k must be at least 1");
  auto order = descending_order(scores);
  order.resize(std::min(k, order.size()));
  return order;
}

inline std::vector<std::size_t> long_context(std::span<const double> scores) {
  if (scores.empty()) throw UsageError("long_context: no passages");
  std::vector<std::size_t> all(scores.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

// Keeps everything above the largest drop between consecutive descending
// scores; the first maximal gap wins ties.
inline std::vector<std::size_t> adaptive_k(std::span<const double> scores) {
  if (scores.empty()) throw UsageError("adaptive_k: no passages");
  auto order = descending_order(scores);
  if (order.size() == 1) return order;
  std::size_t cut = 0;
  double best = scores[order[0]] - scores[order[1]];
  for (std::size_t i = 1; i + 1 < order.size(); ++i) {
    const double gap = scores[order[i]] - scores[order[i + 1]];
    if (gap > best) {
      best = gap;
      cut = i;
    }
  }
  order.resize(cut + 1);
  return order;
}

// Per-token logits, N x 1, for scores sorted ascending.
inline Var bernoulli_logits(Tape& tape, const PolicyParams& p, std::span<const double> sorted_scores) {
  if (p.kind() != PolicyKind::bernoulli) throw UsageError("bernoulli_logits: policy is not a Bernoulli policy");
  Var h = encode(tape, p, periodic_embed(tape, p, sorted_scores));
  return nn::linear(tape, p, "token_head", h);
}

// sum_i [m_i log p_i + (1 - m_i) log(1 - p_i)] with p = sigmoid(logit),
// written as -softplus(-l) and -softplus(l) to stay finite.
inline Var bernoulli_log_prob(Tape& tape, Var logits, const std::vector<char>& mask) {
  if (mask.size() != logits.rows() || logits.cols() != 1)
    throw DimensionError("bernoulli_log_prob: mask length does not match logits");
  Tensor on(mask.size(), 1), off(mask.size(), 1);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    on[i] = mask[i] ? -1.0 : 0.0;
    off[i] = mask[i] ? 0.0 : -1.0;
  }
  Var picked = mul(tape.constant(std::move(on)), softplus(scale(logits, -1.0)));
  Var skipped = mul(tape.constant(std::move(off)), softplus(logits));
  return sum(add(picked, skipped));
}

struct BernoulliRollout {
  std::vector<std::size_t> selection;  // original indices, ascending rank order
  std::vector<char> mask;              // over ascending sorted positions
  std::vector<double> probs;           // over ascending sorted positions
  Var log_prob;
  bool forced_top1 = false;
};

// Samples each passage independently. An empty draw is resampled once; if it
// is empty again the single highest-scoring passage is used. log_prob is the
// product-Bernoulli log-probability of the mask actually used.
inline BernoulliRollout bernoulli_forward(Tape& tape, const PolicyParams& p, std::span<const double> scores, Rng& rng) {
  if (scores.empty()) throw UsageError("bernoulli_forward: no passages");
  const auto order = ascending_order(scores);
  std::vector<double> sorted(scores.size());
  for (std::size_t r = 0; r < order.size(); ++r) sorted[r] = scores[order[r]];
  Var logits = bernoulli_logits(tape, p, sorted);
  BernoulliRollout out;
  out.probs.resize(sorted.size());
  for (std::size_t r = 0; r < sorted.size(); ++r) out.probs[r] = special::sigmoid(logits.value()[r]);
  out.mask.assign(sorted.size(), 0);
  for (int attempt = 0; attempt < 2; ++attempt) {
    bool any = false;
    for (std::size_t r = 0; r < sorted.size(); ++r) {
      out.mask[r] = rng.bernoulli(out.probs[r]) ? 1 : 0;
      any = any || out.mask[r];
    }
    if (any) break;
  }
  if (std::none_of(out.mask.begin(), out.mask.end(), [](char c) { return c != 0; })) {
    out.mask.back() = 1;
    out.forced_top1 = true;
  }
  for (std::size_t r = 0; r < sorted.size(); ++r)
    if (out.mask[r]) out.selection.push_back(order[r]);
  out.log_prob = bernoulli_log_prob(tape, logits, out.mask);
  return out;
}

// Mode of the product distribution: every passage with p > 0.5 (top-1 if none).
inline std::vector<std::size_t> bernoulli_mode(const PolicyParams& p, std::span<const double> scores) {
  const auto order = ascending_order(scores);
  std::vector<double> sorted(scores.size());
  for (std::size_t r = 0; r < order.size(); ++r) sorted[r] = scores[order[r]];
  Tape tape;
  Var logits = bernoulli_logits(tape, p, sorted);
  std::vector<std::size_t> sel;
  for (std::size_t r = 0; r < sorted.size(); ++r)
    if (special::sigmoid(logits.value()[r]) > 0.5) sel.push_back(order[r]);
  if (sel.empty()) sel.push_back(order.back());
  return sel;
}

}  // namespace ldar
