// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ldar/environ.hpp"
#include "ldar/oracle.hpp"
#include "ldar/policy.hpp"
#include "ldar/random.hpp"
#include "ldar/rollout.hpp"

namespace ldar {

struct EvalRow {
  std::string id;
  int reward = 0;
  double token_ratio = 0.0;
  double passage_ratio = 0.0;
  IndexBand band;  // one-based sorted positions; hull of the selection
  double band_width = 0.0;  // q_upper - q_lower for band policies, 0 otherwise
};

struct EvalReport {
  std::string label;
  std::size_t n_instances = 0;
  double mean_score = 0.0;
  double mean_token_ratio = 0.0;
  double mean_passage_ratio = 0.0;
  double mean_band_width = 0.0;
  std::vector<EvalRow> rows;

  bool operator==(const EvalReport& o) const {
    if (label != o.label || n_instances != o.n_instances || mean_score != o.mean_score ||
        mean_token_ratio != o.mean_token_ratio || mean_passage_ratio != o.mean_passage_ratio ||
        mean_band_width != o.mean_band_width || rows.size() != o.rows.size())
      return false;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const EvalRow& a = rows[i];
      const EvalRow& b = o.rows[i];
      if (a.id != b.id || a.reward != b.reward || a.token_ratio != b.token_ratio ||
          a.passage_ratio != b.passage_ratio || !(a.band == b.band) || a.band_width != b.band_width)
        return false;
    }
    return true;
  }
};

struct Selection {
  std::vector<std::size_t> indices;
  double band_width = 0.0;
};

// Chooses passages for one instance; receives that instance's RNG stream.
using Selector = std::function<Selection(const Instance&, Rng&)>;

// Rank hull of a selection, as one-based ascending positions.
inline IndexBand rank_hull(const Instance& inst, const std::vector<std::size_t>& selection) {
  const auto order = ascending_order(inst.scores);
  std::vector<std::size_t> rank(inst.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;
  IndexBand b{inst.size(), 1};
  for (std::size_t i : selection) {
    b.lower = std::min(b.lower, rank[i]);
    b.upper = std::max(b.upper, rank[i]);
  }
  if (selection.empty()) b = {1, 1};
  return b;
}

// One pass over the dataset. Instance m uses the stream mix_seed(seed, m),
// so the report does not depend on evaluation order.
inline EvalReport evaluate_selector(const std::string& label, const std::vector<Instance>& dataset,
                                    const Selector& select, std::uint64_t seed, OracleClient* oracle = nullptr) {
  EvalReport rep;
  rep.label = label;
  rep.n_instances = dataset.size();
  rep.rows.reserve(dataset.size());
  for (std::size_t m = 0; m < dataset.size(); ++m) {
    const Instance& inst = dataset[m];
    Rng rng(mix_seed(seed, m));
    Selection sel = select(inst, rng);
    EvalRow row;
    row.id = inst.id;
    row.reward = reward(inst, sel.indices, rng, oracle);
    row.token_ratio = token_ratio(inst, sel.indices);
    row.passage_ratio = passage_ratio(inst, sel.indices);
    row.band = rank_hull(inst, sel.indices);
    row.band_width = sel.band_width;
    rep.rows.push_back(std::move(row));
  }
  if (!rep.rows.empty()) {
    const double inv = 1.0 / static_cast<double>(rep.rows.size());
    for (const EvalRow& r : rep.rows) {
      rep.mean_score += r.reward;
      rep.mean_token_ratio += r.token_ratio;
      rep.mean_passage_ratio += r.passage_ratio;
      rep.mean_band_width += r.band_width;
    }
    rep.mean_score *= inv;
    rep.mean_token_ratio *= inv;
    rep.mean_passage_ratio *= inv;
    rep.mean_band_width *= inv;
  }
  return rep;
}

inline Selector policy_selector(const PolicyParams& params, bool greedy = false) {
  return [&params, greedy](const Instance& inst, Rng& rng) {
    Tape tape;
    Rollout ro = run_policy(tape, params, inst, rng, greedy);
    Selection s;
    s.indices = std::move(ro.selection);
    if (params.kind() == PolicyKind::band) s.band_width = ro.action.q_upper - ro.action.q_lower;
    return s;
  };
}

inline EvalReport evaluate_policy(const std::string& label, const PolicyParams& params,
                                  const std::vector<Instance>& dataset, std::uint64_t seed, bool greedy = false,
                                  OracleClient* oracle = nullptr) {
  return evaluate_selector(label, dataset, policy_selector(params, greedy), seed, oracle);
}

}  // namespace ldar
