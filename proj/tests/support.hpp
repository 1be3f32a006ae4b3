// SPDX-License-Identifier: Apache-2.0
//
// Helpers shared by the unit and acceptance suites.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "ldar/ldar.hpp"

namespace ldar::testing {

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true value is
// zero from turning round-off into a large relative error.
inline double rel_err(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct FdResult {
  double max_rel = 0.0;
  std::string worst;  // tensor name and flat index
  std::size_t checked = 0;
};

// Compares analytic gradients of a scalar function of named tensors with
// central differences of step h. `f` builds the loss on a fresh tape from
// the current tensor values; `analytic` holds backward's result.
inline FdResult finite_difference(std::map<std::string, Tensor>& tensors, const GradMap& analytic,
                                  const std::function<double()>& f, double h = 1e-6, double floor = 1e-6) {
  FdResult r;
  for (auto& [name, t] : tensors) {
    const auto it = analytic.find(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double keep = t[i];
      t[i] = keep + h;
      const double up = f();
      t[i] = keep - h;
      const double down = f();
      t[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double a = it == analytic.end() ? 0.0 : it->second[i];
      const double e = rel_err(a, numeric, floor);
      ++r.checked;
      if (e > r.max_rel) {
        r.max_rel = e;
        r.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

inline Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
  Tensor t(rows, cols);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline std::vector<double> random_scores(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> s(n);
  for (double& v : s) v = rng.uniform(lo, hi);
  return s;
}

// Reduced network used where only wiring matters.
inline PolicyConfig tiny_config() {
  PolicyConfig c;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.ffn_dim = 64;
  c.n_frequencies = 8;
  return c;
}

inline PolicyParams tiny_policy(std::uint64_t seed, PolicyKind kind = PolicyKind::band, PolicyConfig c = tiny_config()) {
  Rng rng(seed);
  return PolicyParams::initialize(c, kind, rng);
}

// Instance with zero distractor weights, unit-capacity reward and 100-token
// passages unless overridden.
inline Instance make_instance(std::string id, std::vector<double> scores, std::vector<std::size_t> gold,
                              std::vector<double> weights = {}, double capacity = 1.0) {
  Instance inst;
  inst.id = std::move(id);
  inst.token_counts.assign(scores.size(), 100);
  inst.distractor_weights = weights.empty() ? std::vector<double>(scores.size(), 0.0) : std::move(weights);
  inst.scores = std::move(scores);
  inst.gold = std::move(gold);
  inst.reward_model.kind = RewardKind::capacity;
  inst.reward_model.capacity = capacity;
  return inst;
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ldar_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Independent Beta log-density: log of x^(a-1) (1-x)^(b-1) Gamma(a+b) / (Gamma(a) Gamma(b)),
// using the C library's lgamma.
inline double reference_beta_log_pdf(double x, double a, double b) {
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log(1.0 - x) + std::lgamma(a + b) - std::lgamma(a) -
         std::lgamma(b);
}

// Brute-force quantile mapping written directly from the index rule:
// smallest/largest integers by scanning candidates.
inline IndexBand reference_indices(std::size_t n, double q_lower, double q_upper) {
  auto round_away = [](double x) {
    const double f = std::floor(x);
    return (x - f >= 0.5) ? static_cast<long>(f) + 1 : static_cast<long>(f);  // x >= 0
  };
  long l = 1;
  for (long c = 1; c <= static_cast<long>(n); ++c)
    if (c <= round_away(static_cast<double>(n) * q_lower)) l = c;
  long u = l;
  for (long c = l; c <= static_cast<long>(n); ++c)
    if (c <= round_away(static_cast<double>(n) * q_upper)) u = c;
  return {static_cast<std::size_t>(l), static_cast<std::size_t>(u)};
}

// Max-gap cut by trying every cut point: the chosen prefix length is the
// smallest c whose gap s[c-1] - s[c] is maximal.
inline std::vector<std::size_t> reference_adaptive_k(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  // selection-sort style ordering, descending with lower index first on ties
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = i + 1; j < idx.size(); ++j) {
      const auto a = idx[i], b = idx[j];
      if (scores[b] > scores[a] || (scores[b] == scores[a] && b < a)) std::swap(idx[i], idx[j]);
    }
  if (idx.size() == 1) return idx;
  std::size_t best_cut = 1;
  double best_gap = -1.0;
  for (std::size_t c = 1; c < idx.size(); ++c) {
    double gap = scores[idx[c - 1]] - scores[idx[c]];
    bool is_max = true;
    for (std::size_t d = 1; d < idx.size(); ++d)
      if (scores[idx[d - 1]] - scores[idx[d]] > gap) is_max = false;
    if (is_max && gap > best_gap) {
      best_gap = gap;
      best_cut = c;
    }
  }
  idx.resize(best_cut);
  return idx;
}

}  // namespace ldar::testing
