// SPDX-License-Identifier: Apache-2.0
//
// Retrieval instances and the simulated answering model. A passage set is
// answered correctly when it contains every gold passage and the summed
// distraction weight of what was retrieved stays within the model's
// capacity.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ldar/errors.hpp"
#include "ldar/random.hpp"

namespace ldar {

enum class RewardKind { capacity, capacity_overload, external };

inline std::string to_string(RewardKind k) {
  switch (k) {
    case RewardKind::capacity: return "capacity";
    case RewardKind::capacity_overload: return "capacity_overload";
    case RewardKind::external: return "external";
  }
  return "capacity";
}

inline RewardKind reward_kind_from_string(const std::string& s) {
  if (s == "capacity") return RewardKind::capacity;
  if (s == "capacity_overload") return RewardKind::capacity_overload;
  if (s == "external") return RewardKind::external;
  throw DataError("unknown reward kind '" + s + "'");
}

struct RewardModel {
  RewardKind kind = RewardKind::capacity;
  double capacity = 0.0;
  std::size_t overload_limit = 0;  // only read for capacity_overload
  double flip_prob = 0.0;

  void validate() const {
    if (!(capacity >= 0.0) || !std::isfinite(capacity)) throw DataError("reward: capacity must be non-negative");
    if (!(flip_prob >= 0.0 && flip_prob < 0.5)) throw DataError("reward: flip_prob must lie in [0, 0.5)");
    if (kind == RewardKind::capacity_overload && overload_limit == 0)
      throw DataError("reward: capacity_overload needs a positive overload_limit");
  }

  bool operator==(const RewardModel&) const = default;
};

struct Instance {
  std::string id;
  std::vector<double> scores;
  std::vector<long> token_counts;
  std::vector<std::size_t> gold;
  std::vector<double> distractor_weights;
  RewardModel reward_model;

  std::size_t size() const { return scores.size(); }

  void validate() const {
    const std::size_t n = scores.size();
    if (n == 0) throw DataError("instance '" + id + "': no passages");
    if (token_counts.size() != n) throw DataError("instance '" + id + "': tokens length differs from scores");
    if (distractor_weights.size() != n) throw DataError("instance '" + id + "': weights length differs from scores");
    for (double s : scores)
      if (!(s >= -1.0 && s <= 1.0)) throw DataError("instance '" + id + "': score outside [-1, 1]");
    for (long t : token_counts)
      if (t <= 0) throw DataError("instance '" + id + "': token counts must be positive");
    for (double w : distractor_weights)
      if (!(w >= 0.0) || !std::isfinite(w)) throw DataError("instance '" + id + "': weights must be non-negative");
    for (std::size_t g : gold)
      if (g >= n) throw DataError("instance '" + id + "': gold index " + std::to_string(g) + " out of range");
    reward_model.validate();
  }

  bool operator==(const Instance&) const = default;
};

// s_i = <q, p_i> / (|q| |p_i|).
inline std::vector<double> cosine_scores(std::span<const double> query, const std::vector<std::vector<double>>& passages) {
  auto norm = [](std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  const double qn = norm(query);
  if (query.empty() || !(qn > 0.0)) throw DomainError("cosine_scores: query vector has zero norm");
  std::vector<double> out;
  out.reserve(passages.size());
  for (const auto& p : passages) {
    if (p.size() != query.size()) throw DimensionError("cosine_scores: passage dimension differs from query");
    const double pn = norm(p);
    if (!(pn > 0.0)) throw DomainError("cosine_scores: passage vector has zero norm");
    double dot = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) dot += query[i] * p[i];
    out.push_back(std::clamp(dot / (qn * pn), -1.0, 1.0));
  }
  return out;
}

inline void check_selection(const Instance& inst, std::span<const std::size_t> selection) {
  for (std::size_t i : selection)
    if (i >= inst.size())
      throw UsageError("selection index " + std::to_string(i) + " out of range for instance '" + inst.id + "'");
}

// Deterministic part of the simulated judge: gold coverage, distraction
// budget and (for capacity_overload) a cap on the number of passages.
inline bool rule_satisfied(const Instance& inst, std::span<const std::size_t> selection) {
  check_selection(inst, selection);
  std::vector<char> chosen(inst.size(), 0);
  for (std::size_t i : selection) chosen[i] = 1;
  for (std::size_t g : inst.gold)
    if (!chosen[g]) return false;
  double load = 0.0;
  for (std::size_t i = 0; i < inst.size(); ++i)
    if (chosen[i]) load += inst.distractor_weights[i];
  if (load > inst.reward_model.capacity) return false;
  if (inst.reward_model.kind == RewardKind::capacity_overload) {
    std::size_t distinct = 0;
    for (char c : chosen) distinct += c ? 1 : 0;
    if (distinct > inst.reward_model.overload_limit) return false;
  }
  return true;
}

// Fraction of the full context's tokens that the selection supplies.
inline double token_ratio(const Instance& inst, std::span<const std::size_t> selection) {
  check_selection(inst, selection);
  long total = 0;
  for (long t : inst.token_counts) total += t;
  std::vector<char> chosen(inst.size(), 0);
  long used = 0;
  for (std::size_t i : selection) {
    if (chosen[i]) continue;
    chosen[i] = 1;
    used += inst.token_counts[i];
  }
  return static_cast<double>(used) / static_cast<double>(total);
}

inline double passage_ratio(const Instance& inst, std::span<const std::size_t> selection) {
  check_selection(inst, selection);
  std::set<std::size_t> distinct(selection.begin(), selection.end());
  return static_cast<double>(distinct.size()) / static_cast<double>(inst.size());
}

template <class T>
struct Range {
  T lo{};
  T hi{};
  bool operator==(const Range&) const = default;
};

struct GeneratorConfig {
  std::size_t n_instances = 1000;
  std::size_t n_passages = 52;
  Range<long> gold_count{1, 3};
  Range<long> distractor_count{4, 10};
  Range<double> gold_band{0.60, 0.90};
  Range<double> distractor_band{0.55, 0.85};
  Range<double> background_band{0.00, 0.50};
  Range<double> weight_range{0.5, 1.5};
  Range<long> token_range{400, 800};
  Range<double> capacity_range{3.0, 6.0};
  RewardKind reward_kind = RewardKind::capacity;
  std::size_t overload_limit = 0;
  double flip_prob = 0.0;
  std::uint64_t seed = 0;
  std::string id_prefix = "q";

  // Distractors share the gold similarity band; a mid-sized top-k is best.
  static GeneratorConfig default_capacity() { return {}; }

  // The number of high-similarity passages varies from 3 to 30 per instance
  // and gold hides among them, while the low-similarity tail carries small
  // distraction weights. The right band therefore depends on the instance.
  static GeneratorConfig heterogeneous() {
    GeneratorConfig c;
    c.gold_count = {1, 3};
    c.distractor_count = {22, 49};
    c.gold_band = {0.60, 0.95};
    c.distractor_band = {0.00, 0.50};
    c.background_band = {0.60, 0.95};
    c.weight_range = {0.05, 0.15};
    c.capacity_range = {0.3, 0.6};
    return c;
  }

  void validate() const {
    auto ordered = [](const auto& r, const char* what) {
      if (!(r.lo <= r.hi)) throw ConfigError(std::string("generator: ") + what + " range is empty");
    };
    if (n_passages == 0) throw ConfigError("generator: n_passages must be positive");
    ordered(gold_count, "gold_count");
    ordered(distractor_count, "distractor_count");
    ordered(gold_band, "gold_band");
    ordered(distractor_band, "distractor_band");
    ordered(background_band, "background_band");
    ordered(weight_range, "weight_range");
    ordered(token_range, "token_range");
    ordered(capacity_range, "capacity_range");
    if (gold_count.lo < 1) throw ConfigError("generator: gold_count must be at least 1");
    if (distractor_count.lo < 0) throw ConfigError("generator: distractor_count must be non-negative");
    if (static_cast<std::size_t>(gold_count.hi + distractor_count.hi) > n_passages)
      throw ConfigError("generator: gold plus distractor counts exceed n_passages");
    for (const auto* band : {&gold_band, &distractor_band, &background_band})
      if (band->lo < -1.0 || band->hi > 1.0) throw ConfigError("generator: similarity bands must lie in [-1, 1]");
    if (weight_range.lo <= 0.0) throw ConfigError("generator: distractor weights must be positive");
    if (token_range.lo < 1) throw ConfigError("generator: token counts must be positive");
    if (capacity_range.lo < 0.0) throw ConfigError("generator: capacity must be non-negative");
    if (!(flip_prob >= 0.0 && flip_prob < 0.5)) throw ConfigError("generator: flip_prob must lie in [0, 0.5)");
    if (reward_kind == RewardKind::capacity_overload && overload_limit == 0)
      throw ConfigError("generator: capacity_overload needs overload_limit");
  }
};

inline std::string instance_id(const std::string& prefix, std::size_t i) {
  std::string num = std::to_string(i);
  if (num.size() < 6) num.insert(0, 6 - num.size(), '0');
  return prefix + num;
}

inline std::vector<Instance> generate(const GeneratorConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t n = cfg.n_passages;
  std::vector<Instance> out;
  out.reserve(cfg.n_instances);
  for (std::size_t m = 0; m < cfg.n_instances; ++m) {
    Instance inst;
    inst.id = instance_id(cfg.id_prefix, m);
    const auto n_gold = static_cast<std::size_t>(rng.uniform_int(cfg.gold_count.lo, cfg.gold_count.hi));
    const auto n_dist = static_cast<std::size_t>(rng.uniform_int(cfg.distractor_count.lo, cfg.distractor_count.hi));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
      std::swap(perm[i], perm[j]);
    }
    inst.scores.assign(n, 0.0);
    inst.distractor_weights.assign(n, 0.0);
    inst.token_counts.assign(n, 0);
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t i = perm[r];
      if (r < n_gold) {
        inst.scores[i] = rng.uniform(cfg.gold_band.lo, cfg.gold_band.hi);
        inst.gold.push_back(i);
      } else if (r < n_gold + n_dist) {
        inst.scores[i] = rng.uniform(cfg.distractor_band.lo, cfg.distractor_band.hi);
        inst.distractor_weights[i] = rng.uniform(cfg.weight_range.lo, cfg.weight_range.hi);
      } else {
        inst.scores[i] = rng.uniform(cfg.background_band.lo, cfg.background_band.hi);
      }
    }
    std::sort(inst.gold.begin(), inst.gold.end());
    for (long& t : inst.token_counts) t = static_cast<long>(rng.uniform_int(cfg.token_range.lo, cfg.token_range.hi));
    inst.reward_model.kind = cfg.reward_kind;
    inst.reward_model.capacity = rng.uniform(cfg.capacity_range.lo, cfg.capacity_range.hi);
    inst.reward_model.overload_limit = cfg.overload_limit;
    inst.reward_model.flip_prob = cfg.flip_prob;
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace ldar
