// SPDX-License-Identifier: Apache-2.0
//
// Adaptive band retriever: a set encoder over similarity scores that emits
// two Beta distributions, one for the lower quantile of the band and one for
// its relative width. Also hosts the per-token Bernoulli variant used for the
// ablation, which shares the embedding and encoder stack.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ldar/diffcore.hpp"
#include "ldar/errors.hpp"
#include "ldar/random.hpp"
#include "ldar/specials.hpp"

namespace ldar {

struct PolicyConfig {
  std::size_t d_model = 256;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ffn_dim = 1024;
  std::size_t n_frequencies = 48;
  double param_floor = 1e-4;
  double sample_clamp = 1e-6;
  double layer_norm_eps = 1e-5;

  // Reduced configuration used by the acceptance runs.
  static PolicyConfig desk() {
    PolicyConfig c;
    c.d_model = 64;
    c.ffn_dim = 256;
    c.n_frequencies = 16;
    return c;
  }

  void validate() const {
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || ffn_dim == 0 || n_frequencies == 0)
      throw ConfigError("policy config: extents must be positive");
    if (d_model % n_heads != 0) throw ConfigError("policy config: d_model must be divisible by n_heads");
    if (!(param_floor > 0.0)) throw ConfigError("policy config: param_floor must be positive");
    if (!(sample_clamp > 0.0 && sample_clamp < 0.5)) throw ConfigError("policy config: sample_clamp must be in (0, 0.5)");
    if (!(layer_norm_eps > 0.0)) throw ConfigError("policy config: layer_norm_eps must be positive");
  }

  bool operator==(const PolicyConfig&) const = default;
};

enum class PolicyKind { band, bernoulli };

inline std::string to_string(PolicyKind k) { return k == PolicyKind::band ? "band" : "bernoulli"; }

inline PolicyKind policy_kind_from_string(const std::string& s) {
  if (s == "band") return PolicyKind::band;
  if (s == "bernoulli") return PolicyKind::bernoulli;
  throw UsageError("unknown policy kind '" + s + "'");
}

// Named learnable tensors of one policy network.
class PolicyParams {
 public:
  PolicyParams() = default;
  PolicyParams(PolicyConfig config, PolicyKind kind) : config_(config), kind_(kind) { config_.validate(); }

  // Fresh network: uniform(+-1/sqrt(fan_in)) linears, unit layer norms,
  // standard normal frequencies. Band heads start near Beta(1, 1).
  static PolicyParams initialize(const PolicyConfig& config, PolicyKind kind, Rng& rng) {
    PolicyParams p(config, kind);
    const std::size_t d = config.d_model;
    Tensor freq(1, config.n_frequencies);
    for (double& v : freq.data()) v = rng.normal();
    p.tensors_["periodic.freq"] = std::move(freq);
    p.add_linear("periodic.linear", 2 * config.n_frequencies, d, rng);
    p.add_norm("periodic.norm", d);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
      const std::string pre = "encoder." + std::to_string(l) + ".";
      p.add_norm(pre + "norm1", d);
      p.add_linear(pre + "attn.q", d, d, rng);
      p.add_linear(pre + "attn.k", d, d, rng);
      p.add_linear(pre + "attn.v", d, d, rng);
      p.add_linear(pre + "attn.o", d, d, rng);
      p.add_norm(pre + "norm2", d);
      p.add_linear(pre + "ffn.in", d, config.ffn_dim, rng);
      p.add_linear(pre + "ffn.out", config.ffn_dim, d, rng);
    }
    if (kind == PolicyKind::band) {
      p.add_linear("pool.scorer", d, 1, rng);
      p.add_linear("pool.mlp", d, d, rng);
      const double unit = special::softplus_inverse(1.0);
      for (const char* head : {"head.alpha_lower", "head.beta_lower", "head.alpha_width", "head.beta_width"}) {
        p.add_linear(head, d, 1, rng);
        p.tensors_[std::string(head) + ".bias"].fill(unit);
      }
    } else {
      p.add_linear("token_head", d, 1, rng);
      p.tensors_["token_head.bias"].fill(0.0);
    }
    return p;
  }

  const PolicyConfig& config() const { return config_; }
  PolicyKind kind() const { return kind_; }
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  std::map<std::string, Tensor>& tensors() { return tensors_; }

  const Tensor& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw UsageError("policy has no parameter '" + name + "'");
    return it->second;
  }
  Tensor& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw UsageError("policy has no parameter '" + name + "'");
    return it->second;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }

  // Same names and shapes as a freshly initialized network of this config.
  void check_layout() const {
    Rng scratch(0);
    const PolicyParams ref = initialize(config_, kind_, scratch);
    if (ref.tensors_.size() != tensors_.size()) throw DimensionError("policy parameter set does not match config");
    for (const auto& [name, t] : ref.tensors_) {
      auto it = tensors_.find(name);
      if (it == tensors_.end()) throw DimensionError("policy parameter '" + name + "' missing");
      if (!it->second.same_shape(t))
        throw DimensionError("policy parameter '" + name + "' has shape " + shape_string(it->second) + ", expected " +
                             shape_string(t));
    }
  }

 private:
  void add_linear(const std::string& name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor w(fan_in, fan_out);
    for (double& v : w.data()) v = rng.uniform(-bound, bound);
    Tensor b(1, fan_out);
    for (double& v : b.data()) v = rng.uniform(-bound, bound);
    tensors_[name + ".weight"] = std::move(w);
    tensors_[name + ".bias"] = std::move(b);
  }

  void add_norm(const std::string& name, std::size_t d) {
    tensors_[name + ".gain"] = Tensor(1, d, 1.0);
    tensors_[name + ".bias"] = Tensor(1, d, 0.0);
  }

  PolicyConfig config_;
  PolicyKind kind_ = PolicyKind::band;
  std::map<std::string, Tensor> tensors_;
};

struct BandParams {
  double alpha_lower = 1.0;
  double beta_lower = 1.0;
  double alpha_width = 1.0;
  double beta_width = 1.0;
};

struct BandAction {
  double q_lower = 0.0;
  double q_width = 0.0;
  double q_upper = 0.0;
  double log_prob = 0.0;
};

// Tape handles for the four Beta parameters (each 1 x 1).
struct BandHeads {
  Var alpha_lower, beta_lower, alpha_width, beta_width;

  BandParams values() const {
    return {alpha_lower.item(), beta_lower.item(), alpha_width.item(), beta_width.item()};
  }
};

namespace nn {

inline Var param(Tape& tape, const PolicyParams& p, const std::string& name) {
  return tape.parameter(name, p.at(name));
}

inline Var linear(Tape& tape, const PolicyParams& p, const std::string& name, Var x) {
  return add_row(matmul(x, param(tape, p, name + ".weight")), param(tape, p, name + ".bias"));
}

inline Var norm(Tape& tape, const PolicyParams& p, const std::string& name, Var x) {
  return layer_norm_rows(x, param(tape, p, name + ".gain"), param(tape, p, name + ".bias"), p.config().layer_norm_eps);
}

}  // namespace nn

// Raw sin/cos features of each score, N x 2F, before the learned projection.
inline Var periodic_features(Tape& tape, const PolicyParams& p, std::span<const double> scores) {
  if (scores.empty()) throw UsageError("periodic_embed: empty score vector");
  Var x = tape.constant(Tensor::column(scores));
  Var phase = scale(matmul(x, nn::param(tape, p, "periodic.freq")), 2.0 * std::numbers::pi);
  return concat_cols({sin(phase), cos(phase)});
}

// One token per score: periodic features -> linear -> layer norm.
inline Var periodic_embed(Tape& tape, const PolicyParams& p, std::span<const double> scores) {
  Var feats = periodic_features(tape, p, scores);
  return nn::norm(tape, p, "periodic.norm", nn::linear(tape, p, "periodic.linear", feats));
}

// Pre-norm bidirectional self-attention blocks without positional encoding,
// so the map is permutation-equivariant over rows. When `attention` is given
// it receives every head's N x N weight matrix, layer-major.
inline Var encode(Tape& tape, const PolicyParams& p, Var tokens, std::vector<Tensor>* attention = nullptr) {
  const PolicyConfig& cfg = p.config();
  const std::size_t head_dim = cfg.d_model / cfg.n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Var h = tokens;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "encoder." + std::to_string(l) + ".";
    Var a = nn::norm(tape, p, pre + "norm1", h);
    Var q = nn::linear(tape, p, pre + "attn.q", a);
    Var k = nn::linear(tape, p, pre + "attn.k", a);
    Var v = nn::linear(tape, p, pre + "attn.v", a);
    std::vector<Var> heads;
    heads.reserve(cfg.n_heads);
    for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
      const std::size_t off = hd * head_dim;
      Var w = softmax_rows(scale(matmul_nt(slice_cols(q, off, head_dim), slice_cols(k, off, head_dim)), inv_sqrt));
      if (attention) attention->push_back(w.value());
      heads.push_back(matmul(w, slice_cols(v, off, head_dim)));
    }
    Var mixed = cfg.n_heads == 1 ? heads.front() : concat_cols(heads);
    h = add(h, nn::linear(tape, p, pre + "attn.o", mixed));
    Var f = nn::norm(tape, p, pre + "norm2", h);
    f = nn::linear(tape, p, pre + "ffn.out", gelu(nn::linear(tape, p, pre + "ffn.in", f)));
    h = add(h, f);
  }
  return h;
}

// Softmax-weighted sum over tokens followed by the pooled MLP. `weights`,
// when given, receives the 1 x N pooling weights.
inline Var attn_pool(Tape& tape, const PolicyParams& p, Var hidden, Tensor* weights = nullptr) {
  Var logits = transpose(nn::linear(tape, p, "pool.scorer", hidden));
  Var w = softmax_rows(logits);
  if (weights) *weights = w.value();
  Var z = matmul(w, hidden);
  return gelu(nn::linear(tape, p, "pool.mlp", z));
}

// Each Beta parameter is softplus(raw) + param_floor.
inline BandHeads beta_heads(Tape& tape, const PolicyParams& p, Var pooled) {
  const double floor = p.config().param_floor;
  auto head = [&](const char* name) { return add_scalar(softplus(nn::linear(tape, p, name, pooled)), floor); };
  return {head("head.alpha_lower"), head("head.beta_lower"), head("head.alpha_width"), head("head.beta_width")};
}

// Full band network on scores already sorted ascending.
inline BandHeads band_forward(Tape& tape, const PolicyParams& p, std::span<const double> sorted_scores) {
  if (p.kind() != PolicyKind::band) throw UsageError("band_forward: policy is not a band policy");
  Var h = encode(tape, p, periodic_embed(tape, p, sorted_scores));
  return beta_heads(tape, p, attn_pool(tape, p, h));
}

inline double beta_log_pdf(double x, double a, double b) {
  if (!(x > 0.0 && x < 1.0)) throw DomainError("beta log-density: argument must lie in (0, 1)");
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) -
         (special::lgamma(a) + special::lgamma(b) - special::lgamma(a + b));
}

inline double band_log_prob(const BandParams& p, const BandAction& a) {
  return beta_log_pdf(a.q_lower, p.alpha_lower, p.beta_lower) + beta_log_pdf(a.q_width, p.alpha_width, p.beta_width);
}

namespace detail {

inline Var beta_log_pdf_on_tape(Var a, Var b, double x) {
  if (!(x > 0.0 && x < 1.0)) throw DomainError("beta log-density: argument must lie in (0, 1)");
  Var log_norm = sub(add(lgamma(a), lgamma(b)), lgamma(add(a, b)));
  Var kernel = add(scale(add_scalar(a, -1.0), std::log(x)), scale(add_scalar(b, -1.0), std::log1p(-x)));
  return sub(kernel, log_norm);
}

}  // namespace detail

// Differentiable log pi(action | scores) through the head outputs.
inline Var band_log_prob(const BandHeads& heads, const BandAction& a) {
  return add(detail::beta_log_pdf_on_tape(heads.alpha_lower, heads.beta_lower, a.q_lower),
             detail::beta_log_pdf_on_tape(heads.alpha_width, heads.beta_width, a.q_width));
}

// Upper quantile from the lower one and the relative width. Stays in
// [q_lower, 1] without clipping.
inline double compose_upper(double q_lower, double q_width) { return q_lower + (1.0 - q_lower) * q_width; }

inline BandAction sample_band(const BandParams& p, Rng& rng, double sample_clamp = 1e-6) {
  BandAction a;
  a.q_lower = std::clamp(rng.beta(p.alpha_lower, p.beta_lower), sample_clamp, 1.0 - sample_clamp);
  a.q_width = std::clamp(rng.beta(p.alpha_width, p.beta_width), sample_clamp, 1.0 - sample_clamp);
  a.q_upper = compose_upper(a.q_lower, a.q_width);
  a.log_prob = band_log_prob(p, a);
  return a;
}

// Beta means, for greedy diagnostics.
inline BandAction mean_band(const BandParams& p, double sample_clamp = 1e-6) {
  BandAction a;
  a.q_lower = std::clamp(p.alpha_lower / (p.alpha_lower + p.beta_lower), sample_clamp, 1.0 - sample_clamp);
  a.q_width = std::clamp(p.alpha_width / (p.alpha_width + p.beta_width), sample_clamp, 1.0 - sample_clamp);
  a.q_upper = compose_upper(a.q_lower, a.q_width);
  a.log_prob = band_log_prob(p, a);
  return a;
}

inline long round_half_away(double x) { return std::lround(x); }

struct IndexBand {
  std::size_t lower = 1;  // one-based, inclusive
  std::size_t upper = 1;  // one-based, inclusive
  bool operator==(const IndexBand&) const = default;
};

// Quantile interval to one-based sorted positions:
// l = max(1, round(N qL)), u = min(N, max(l, round(N qU))).
inline IndexBand quantiles_to_indices(std::size_t n, double q_lower, double q_upper) {
  if (n == 0) throw UsageError("quantiles_to_indices: N must be positive");
  if (!(q_lower >= 0.0 && q_upper <= 1.0)) throw UsageError("quantiles_to_indices: quantiles must lie in [0, 1]");
  if (q_upper < q_lower) throw UsageError("quantiles_to_indices: upper quantile below lower quantile");
  const long nn = static_cast<long>(n);
  const long l = std::max(1L, round_half_away(static_cast<double>(n) * q_lower));
  const long u = std::min(nn, std::max(l, round_half_away(static_cast<double>(n) * q_upper)));
  return {static_cast<std::size_t>(std::min(l, nn)), static_cast<std::size_t>(u)};
}

// Indices that sort the scores ascending; ties keep the lower index first.
inline std::vector<std::size_t> ascending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return order;
}

inline std::vector<double> sorted_ascending(std::span<const double> scores) {
  std::vector<double> s(scores.begin(), scores.end());
  std::stable_sort(s.begin(), s.end());
  return s;
}

// Original indices at sorted positions lower..upper, in rank order.
inline std::vector<std::size_t> select_band(std::span<const double> scores, IndexBand band) {
  const std::size_t n = scores.size();
  if (band.lower < 1 || band.lower > band.upper || band.upper > n)
    throw UsageError("select: band [" + std::to_string(band.lower) + ", " + std::to_string(band.upper) +
                     "] outside 1.." + std::to_string(n));
  const auto order = ascending_order(scores);
  return {order.begin() + static_cast<std::ptrdiff_t>(band.lower - 1),
          order.begin() + static_cast<std::ptrdiff_t>(band.upper)};
}

}  // namespace ldar
