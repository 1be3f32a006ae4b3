// SPDX-License-Identifier: Apache-2.0
//
// Dataset files, strategy resolution, evaluation reports and comparison
// tables.
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldar/checkpoint.hpp"
#include "ldar/environ.hpp"
#include "ldar/errors.hpp"
#include "ldar/evaluation.hpp"
#include "ldar/oracle.hpp"
#include "ldar/strategies.hpp"
#include "ldar/trainer.hpp"

namespace ldar {

// ---------------------------------------------------------------- datasets

inline nlohmann::json instance_to_json(const Instance& inst) {
  nlohmann::json rm = {{"kind", to_string(inst.reward_model.kind)},
                       {"capacity", inst.reward_model.capacity},
                       {"overload_limit", inst.reward_model.overload_limit},
                       {"flip_prob", inst.reward_model.flip_prob}};
  return {{"id", inst.id},
          {"scores", inst.scores},
          {"tokens", inst.token_counts},
          {"gold", inst.gold},
          {"weights", inst.distractor_weights},
          {"reward", rm}};
}

namespace detail {

template <class T>
T field(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw DataError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw DataError(where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace detail

// Parses one dataset record. `where` prefixes error messages.
inline Instance instance_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw DataError(where + ": record is not an object");
  Instance inst;
  inst.id = detail::field<std::string>(j, "id", where);
  if (j.contains("scores")) {
    inst.scores = detail::field<std::vector<double>>(j, "scores", where);
  } else if (j.contains("query_vec") || j.contains("passage_vecs")) {
    const auto q = detail::field<std::vector<double>>(j, "query_vec", where);
    const auto p = detail::field<std::vector<std::vector<double>>>(j, "passage_vecs", where);
    try {
      inst.scores = cosine_scores(q, p);
    } catch (const NumericError& e) {
      throw DataError(where + ": " + e.what());
    }
  } else {
    throw DataError(where + ": missing field 'scores' (or 'query_vec'/'passage_vecs')");
  }
  inst.token_counts = detail::field<std::vector<long>>(j, "tokens", where);
  inst.gold = detail::field<std::vector<std::size_t>>(j, "gold", where);
  if (j.contains("weights"))
    inst.distractor_weights = detail::field<std::vector<double>>(j, "weights", where);
  else
    inst.distractor_weights.assign(inst.scores.size(), 0.0);
  const auto rm = detail::field<nlohmann::json>(j, "reward", where);
  if (!rm.is_object()) throw DataError(where + ": field 'reward' must be an object");
  inst.reward_model.kind = reward_kind_from_string(detail::field<std::string>(rm, "kind", where + " reward"));
  if (inst.reward_model.kind != RewardKind::external)
    inst.reward_model.capacity = detail::field<double>(rm, "capacity", where + " reward");
  if (rm.contains("overload_limit"))
    inst.reward_model.overload_limit = detail::field<std::size_t>(rm, "overload_limit", where + " reward");
  if (rm.contains("flip_prob")) inst.reward_model.flip_prob = detail::field<double>(rm, "flip_prob", where + " reward");
  try {
    inst.validate();
  } catch (const DataError& e) {
    throw DataError(where + ": " + e.what());
  }
  return inst;
}

inline std::vector<Instance> parse_dataset(std::istream& in, const std::string& name) {
  std::vector<Instance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = name + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw DataError(where + ": malformed record");
    }
    out.push_back(instance_from_json(j, where));
  }
  return out;
}

inline std::vector<Instance> load_dataset(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open dataset '" + path + "'");
  auto data = parse_dataset(f, path);
  if (data.empty()) throw DataError("dataset '" + path + "' has no records");
  return data;
}

inline void write_dataset(const std::vector<Instance>& data, std::ostream& out) {
  for (const Instance& inst : data) out << instance_to_json(inst).dump() << '\n';
}

inline void save_dataset(const std::vector<Instance>& data, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  write_dataset(data, f);
  if (!f) throw DataError("failed writing dataset '" + path + "'");
}

// -------------------------------------------------------------- strategies

enum class StrategyKind { top_k, long_context, adaptive_k, ldar_checkpoint, bernoulli_checkpoint };

struct StrategySpec {
  StrategyKind kind = StrategyKind::top_k;
  std::size_t k = 1;
  std::string checkpoint;

  std::string label() const {
    switch (kind) {
      case StrategyKind::top_k: return "top_" + std::to_string(k);
      case StrategyKind::long_context: return "long_context";
      case StrategyKind::adaptive_k: return "adaptive_k";
      case StrategyKind::ldar_checkpoint: return "ldar";
      case StrategyKind::bernoulli_checkpoint: return "bernoulli";
    }
    return "?";
  }
};

// Accepts top_<k> / top-<k> / top<k>, lc / long_context, adaptive_k,
// ldar:<checkpoint>, bernoulli:<checkpoint>.
inline StrategySpec parse_strategy(const std::string& text) {
  StrategySpec s;
  if (text == "lc" || text == "long_context" || text == "LC") {
    s.kind = StrategyKind::long_context;
    return s;
  }
  if (text == "adaptive_k" || text == "adaptive-k") {
    s.kind = StrategyKind::adaptive_k;
    return s;
  }
  for (auto [prefix, kind] : {std::pair{"ldar:", StrategyKind::ldar_checkpoint},
                              std::pair{"bernoulli:", StrategyKind::bernoulli_checkpoint}}) {
    const std::string p(prefix);
    if (text.rfind(p, 0) == 0) {
      s.kind = kind;
      s.checkpoint = text.substr(p.size());
      if (s.checkpoint.empty()) throw UsageError("strategy '" + text + "' needs a checkpoint path");
      return s;
    }
  }
  if (text.rfind("top", 0) == 0) {
    std::string num = text.substr(3);
    if (!num.empty() && (num[0] == '_' || num[0] == '-')) num = num.substr(1);
    if (!num.empty() && std::all_of(num.begin(), num.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      s.kind = StrategyKind::top_k;
      s.k = std::stoul(num);
      if (s.k < 1) throw UsageError("strategy '" + text + "': k must be at least 1");
      return s;
    }
  }
  throw UsageError("unknown strategy '" + text + "'");
}

struct ResolvedStrategy {
  std::string label;
  std::optional<PolicyParams> policy;
  Selector selector;
};

inline ResolvedStrategy resolve(const StrategySpec& spec) {
  ResolvedStrategy r;
  r.label = spec.label();
  switch (spec.kind) {
    case StrategyKind::top_k: {
      if (spec.k < 1) throw UsageError("top_k: k must be at least 1");
      const std::size_t k = spec.k;
      r.selector = [k](const Instance& inst, Rng&) { return Selection{top_k(inst.scores, k), 0.0}; };
      return r;
    }
    case StrategyKind::long_context:
      r.selector = [](const Instance& inst, Rng&) { return Selection{long_context(inst.scores), 0.0}; };
      return r;
    case StrategyKind::adaptive_k:
      r.selector = [](const Instance& inst, Rng&) { return Selection{adaptive_k(inst.scores), 0.0}; };
      return r;
    case StrategyKind::ldar_checkpoint:
    case StrategyKind::bernoulli_checkpoint: {
      if (!std::filesystem::exists(spec.checkpoint))
        throw UsageError("checkpoint '" + spec.checkpoint + "' does not exist");
      r.policy = load_checkpoint(spec.checkpoint).params;
      const PolicyKind want =
          spec.kind == StrategyKind::ldar_checkpoint ? PolicyKind::band : PolicyKind::bernoulli;
      if (r.policy->kind() != want)
        throw UsageError("checkpoint '" + spec.checkpoint + "' holds a " + to_string(r.policy->kind()) + " policy");
      return r;
    }
  }
  throw UsageError("unresolvable strategy");
}

// Learned strategies are sampled with per-instance streams derived from
// `seed`; `greedy` switches them to Beta means / Bernoulli mode.
inline EvalReport evaluate(const StrategySpec& spec, const std::vector<Instance>& dataset, std::uint64_t seed,
                           bool greedy = false, OracleClient* oracle = nullptr) {
  ResolvedStrategy r = resolve(spec);
  if (r.policy) return evaluate_policy(r.label, *r.policy, dataset, seed, greedy, oracle);
  return evaluate_selector(r.label, dataset, r.selector, seed, oracle);
}

// ------------------------------------------------------------------ tables

inline constexpr const char* kCompareHeader = "strategy,score,token_ratio,passage_ratio";
inline constexpr const char* kSweepHeader = "k,score,token_ratio,passage_ratio";

inline std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline std::string comparison_csv(const std::vector<EvalReport>& reports) {
  std::string out = std::string(kCompareHeader) + "\n";
  for (const EvalReport& r : reports)
    out += r.label + "," + format_real(r.mean_score) + "," + format_real(r.mean_token_ratio) + "," +
           format_real(r.mean_passage_ratio) + "\n";
  return out;
}

// Score with the token ratio in parentheses, one strategy per row.
inline std::string comparison_text(const std::vector<EvalReport>& reports) {
  std::size_t w = std::string("strategy").size();
  for (const EvalReport& r : reports) w = std::max(w, r.label.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w)) << "strategy" << "  " << std::right << std::setw(18)
     << "score (tokens)" << "  " << std::setw(13) << "passage_ratio" << '\n';
  for (const EvalReport& r : reports) {
    const std::string cell = fixed(100.0 * r.mean_score, 2) + " (" + fixed(r.mean_token_ratio, 3) + ")";
    os << std::left << std::setw(static_cast<int>(w)) << r.label << "  " << std::right << std::setw(18) << cell
       << "  " << std::setw(13) << fixed(r.mean_passage_ratio, 3) << '\n';
  }
  return os.str();
}

inline std::vector<std::size_t> default_sweep(std::size_t n_max) {
  std::vector<std::size_t> ks;
  for (std::size_t k : {1, 2, 3, 5, 8, 10, 15, 20, 25, 30, 40, 50})
    if (k < n_max) ks.push_back(k);
  ks.push_back(n_max);
  return ks;
}

struct SweepPoint {
  std::size_t k = 0;
  EvalReport report;
};

inline std::vector<SweepPoint> top_k_sweep(const std::vector<Instance>& dataset, const std::vector<std::size_t>& ks,
                                           std::uint64_t seed, OracleClient* oracle = nullptr) {
  std::vector<SweepPoint> out;
  for (std::size_t k : ks) out.push_back({k, evaluate(StrategySpec{StrategyKind::top_k, k, {}}, dataset, seed, false, oracle)});
  return out;
}

inline std::string sweep_csv(const std::vector<SweepPoint>& pts) {
  std::string out = std::string(kSweepHeader) + "\n";
  for (const SweepPoint& p : pts)
    out += std::to_string(p.k) + "," + format_real(p.report.mean_score) + "," + format_real(p.report.mean_token_ratio) +
           "," + format_real(p.report.mean_passage_ratio) + "\n";
  return out;
}

struct Comparison {
  std::vector<EvalReport> reports;
  std::vector<SweepPoint> sweep;
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw DataError("failed writing '" + path + "'");
}

// Evaluates each strategy and, when `out_path` is set, writes
//   out_path            comma-separated table
//   out_path.txt        aligned rendering
//   out_path.sweep.csv  fixed-k sweep for accuracy-vs-usage curves
inline Comparison compare(const std::vector<StrategySpec>& strategies, const std::vector<Instance>& dataset,
                          std::uint64_t seed, const std::string& out_path = "", bool greedy = false,
                          OracleClient* oracle = nullptr) {
  if (strategies.empty()) throw UsageError("compare: no strategies given");
  if (dataset.empty()) throw UsageError("compare: dataset is empty");
  Comparison c;
  for (const StrategySpec& s : strategies) {
    try {
      c.reports.push_back(evaluate(s, dataset, seed, greedy, oracle));
    } catch (const UsageError& e) {
      throw UsageError(s.label() + ": " + e.what());
    } catch (const OracleError& e) {
      throw OracleError(s.label() + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(s.label() + ": " + e.what());
    }
  }
  std::size_t n_max = 0;
  for (const Instance& inst : dataset) n_max = std::max(n_max, inst.size());
  c.sweep = top_k_sweep(dataset, default_sweep(n_max), seed, oracle);
  if (!out_path.empty()) {
    write_text(out_path, comparison_csv(c.reports));
    write_text(out_path + ".txt", comparison_text(c.reports));
    write_text(out_path + ".sweep.csv", sweep_csv(c.sweep));
  }
  return c;
}

inline std::string report_rows_csv(const EvalReport& r) {
  std::string out = "id,reward,token_ratio,passage_ratio,band_lower,band_upper,band_width\n";
  for (const EvalRow& row : r.rows)
    out += row.id + "," + std::to_string(row.reward) + "," + format_real(row.token_ratio) + "," +
           format_real(row.passage_ratio) + "," + std::to_string(row.band.lower) + "," +
           std::to_string(row.band.upper) + "," + format_real(row.band_width) + "\n";
  return out;
}

}  // namespace ldar
