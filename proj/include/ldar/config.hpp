// SPDX-License-Identifier: Apache-2.0
//
// Flat JSON run configuration. Keys are the field names of GeneratorConfig,
// PolicyConfig and TrainerConfig; ranges are two-element arrays. "seed" sets
// both the generator and trainer seeds.
//
//   {"preset": "heterogeneous", "policy_preset": "desk", "policy_kind": "band",
//    "n_instances": 2000, "capacity_range": [0.3, 0.6], "total_steps": 500}
#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include <json.hpp>

#include "ldar/environ.hpp"
#include "ldar/errors.hpp"
#include "ldar/policy.hpp"
#include "ldar/trainer.hpp"

namespace ldar {

struct RunConfig {
  GeneratorConfig generator;
  PolicyConfig policy;
  PolicyKind policy_kind = PolicyKind::band;
  TrainerConfig trainer;
};

namespace detail {

template <class T>
T config_value(const nlohmann::json& v, const std::string& key) {
  try {
    if constexpr (std::is_unsigned_v<T>) {
      if (v.is_number_integer() && v.get<long long>() < 0) throw ConfigError("config: '" + key + "' must be non-negative");
      if (!v.is_number_integer()) throw ConfigError("config: '" + key + "' must be an integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("config: '" + key + "' must be an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("config: '" + key + "' must be a number");
    } else {
      if (!v.is_string()) throw ConfigError("config: '" + key + "' must be a string");
    }
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: bad value for '" + key + "'");
  }
}

template <class T>
Range<T> config_range(const nlohmann::json& v, const std::string& key) {
  if (!v.is_array() || v.size() != 2) throw ConfigError("config: '" + key + "' must be a [lo, hi] pair");
  return {config_value<T>(v[0], key), config_value<T>(v[1], key)};
}

}  // namespace detail

// Applies `j` on top of `rc`. Unknown keys are rejected.
inline void apply_config(RunConfig& rc, const nlohmann::json& j) {
  using detail::config_range;
  using detail::config_value;
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  if (j.contains("preset")) {
    const auto p = config_value<std::string>(j["preset"], "preset");
    if (p == "default") rc.generator = GeneratorConfig::default_capacity();
    else if (p == "heterogeneous") rc.generator = GeneratorConfig::heterogeneous();
    else throw ConfigError("config: unknown preset '" + p + "'");
  }
  if (j.contains("policy_preset")) {
    const auto p = config_value<std::string>(j["policy_preset"], "policy_preset");
    if (p == "default") rc.policy = PolicyConfig{};
    else if (p == "desk") rc.policy = PolicyConfig::desk();
    else throw ConfigError("config: unknown policy_preset '" + p + "'");
  }
  GeneratorConfig& g = rc.generator;
  PolicyConfig& pc = rc.policy;
  TrainerConfig& tc = rc.trainer;
  for (const auto& [key, v] : j.items()) {
    if (key == "preset" || key == "policy_preset") continue;
    // generator
    else if (key == "n_instances") g.n_instances = config_value<std::size_t>(v, key);
    else if (key == "n_passages") g.n_passages = config_value<std::size_t>(v, key);
    else if (key == "gold_count") g.gold_count = config_range<long>(v, key);
    else if (key == "distractor_count") g.distractor_count = config_range<long>(v, key);
    else if (key == "gold_band") g.gold_band = config_range<double>(v, key);
    else if (key == "distractor_band") g.distractor_band = config_range<double>(v, key);
    else if (key == "background_band") g.background_band = config_range<double>(v, key);
    else if (key == "weight_range") g.weight_range = config_range<double>(v, key);
    else if (key == "token_range") g.token_range = config_range<long>(v, key);
    else if (key == "capacity_range") g.capacity_range = config_range<double>(v, key);
    else if (key == "reward_kind") {
      try {
        g.reward_kind = reward_kind_from_string(config_value<std::string>(v, key));
      } catch (const DataError& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
    }
    else if (key == "overload_limit") g.overload_limit = config_value<std::size_t>(v, key);
    else if (key == "flip_prob") g.flip_prob = config_value<double>(v, key);
    else if (key == "id_prefix") g.id_prefix = config_value<std::string>(v, key);
    // policy
    else if (key == "policy_kind") {
      try {
        rc.policy_kind = policy_kind_from_string(config_value<std::string>(v, key));
      } catch (const UsageError& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
    }
    else if (key == "d_model") pc.d_model = config_value<std::size_t>(v, key);
    else if (key == "n_layers") pc.n_layers = config_value<std::size_t>(v, key);
    else if (key == "n_heads") pc.n_heads = config_value<std::size_t>(v, key);
    else if (key == "ffn_dim") pc.ffn_dim = config_value<std::size_t>(v, key);
    else if (key == "n_frequencies") pc.n_frequencies = config_value<std::size_t>(v, key);
    else if (key == "param_floor") pc.param_floor = config_value<double>(v, key);
    else if (key == "sample_clamp") pc.sample_clamp = config_value<double>(v, key);
    else if (key == "layer_norm_eps") pc.layer_norm_eps = config_value<double>(v, key);
    // trainer
    else if (key == "batch_size") tc.batch_size = config_value<std::size_t>(v, key);
    else if (key == "learning_rate") tc.learning_rate = config_value<double>(v, key);
    else if (key == "adam_beta1") tc.adam_beta1 = config_value<double>(v, key);
    else if (key == "adam_beta2") tc.adam_beta2 = config_value<double>(v, key);
    else if (key == "adam_eps") tc.adam_eps = config_value<double>(v, key);
    else if (key == "ema_coeff") tc.ema_coeff = config_value<double>(v, key);
    else if (key == "total_steps") tc.total_steps = config_value<std::size_t>(v, key);
    else if (key == "grad_clip_norm") {
      // null or a negative value disables clipping
      if (v.is_null()) tc.grad_clip_norm = std::numeric_limits<double>::infinity();
      else {
        const double c = config_value<double>(v, key);
        tc.grad_clip_norm = c < 0.0 ? std::numeric_limits<double>::infinity() : c;
      }
    }
    else if (key == "eval_every") tc.eval_every = config_value<std::size_t>(v, key);
    else if (key == "holdout_fraction") tc.holdout_fraction = config_value<double>(v, key);
    // shared
    else if (key == "seed") {
      const auto s = config_value<std::uint64_t>(v, key);
      g.seed = s;
      tc.seed = s;
    }
    else throw ConfigError("config: unknown key '" + key + "'");
  }
}

inline RunConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: malformed document: ") + e.what());
  }
  RunConfig rc;
  apply_config(rc, j);
  return rc;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

}  // namespace ldar
