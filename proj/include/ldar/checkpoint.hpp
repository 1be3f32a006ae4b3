// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout (all integers and reals little-endian):
//   "LDARCKPT"                 8 bytes magic
//   u32 version
//   u64 header length, header  JSON: policy/trainer config, kind, step,
//                              baseline, rng state, config hash
//   u64 tensor count
//   per tensor: u32 name length, name, u32 rank, u64 extents[rank],
//               f64 data[product(extents)]
// Tensor names are "param/<name>", "adam.m/<name>" and "adam.v/<name>".
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldar/errors.hpp"
#include "ldar/policy.hpp"
#include "ldar/trainer.hpp"

namespace ldar {

inline constexpr char kCheckpointMagic[8] = {'L', 'D', 'A', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  PolicyParams params;
  TrainerConfig trainer;
  TrainerState state;
  std::string rng_state;
};

inline nlohmann::json to_json(const PolicyConfig& c) {
  return {{"d_model", c.d_model},           {"n_layers", c.n_layers},       {"n_heads", c.n_heads},
          {"ffn_dim", c.ffn_dim},           {"n_frequencies", c.n_frequencies}, {"param_floor", c.param_floor},
          {"sample_clamp", c.sample_clamp}, {"layer_norm_eps", c.layer_norm_eps}};
}

inline PolicyConfig policy_config_from_json(const nlohmann::json& j) {
  PolicyConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  c.n_frequencies = j.at("n_frequencies").get<std::size_t>();
  c.param_floor = j.at("param_floor").get<double>();
  c.sample_clamp = j.at("sample_clamp").get<double>();
  c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
  return c;
}

inline nlohmann::json to_json(const TrainerConfig& c) {
  return {{"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"ema_coeff", c.ema_coeff},
          {"total_steps", c.total_steps},
          // JSON has no infinity; a negative value stands for "no clipping".
          {"grad_clip_norm", std::isfinite(c.grad_clip_norm) ? c.grad_clip_norm : -1.0},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"holdout_fraction", c.holdout_fraction}};
}

inline TrainerConfig trainer_config_from_json(const nlohmann::json& j) {
  TrainerConfig c;
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.adam_beta1 = j.at("adam_beta1").get<double>();
  c.adam_beta2 = j.at("adam_beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.ema_coeff = j.at("ema_coeff").get<double>();
  c.total_steps = j.at("total_steps").get<std::size_t>();
  const double clip = j.at("grad_clip_norm").get<double>();
  c.grad_clip_norm = clip < 0.0 ? std::numeric_limits<double>::infinity() : clip;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.eval_every = j.at("eval_every").get<std::size_t>();
  c.holdout_fraction = j.at("holdout_fraction").get<double>();
  return c;
}

// FNV-1a over the canonical configuration text.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t config_hash(const PolicyConfig& pc, PolicyKind kind, const TrainerConfig& tc) {
  nlohmann::json j = {{"policy", to_json(pc)}, {"kind", to_string(kind)}, {"trainer", to_json(tc)}};
  return fnv1a(j.dump());
}

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const std::string& data, std::string path) : data_(data), path_(std::move(path)) {}
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw FormatError("checkpoint '" + path_ + "' is truncated");
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  bool done() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline void write_tensor(ByteWriter& w, const std::string& name, const Tensor& t) {
  w.str32(name);
  w.u32(2);
  w.u64(t.rows());
  w.u64(t.cols());
  for (double v : t.data()) w.f64(v);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  const PolicyParams& p = ck.params;
  nlohmann::json header = {{"policy", to_json(p.config())},
                           {"kind", to_string(p.kind())},
                           {"trainer", to_json(ck.trainer)},
                           {"step", ck.state.step},
                           {"baseline", std::bit_cast<std::uint64_t>(ck.state.baseline)},
                           {"rng_state", ck.rng_state},
                           {"config_hash", config_hash(p.config(), p.kind(), ck.trainer)}};
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(ck.version);
  const std::string h = header.dump();
  w.u64(h.size());
  w.bytes(h.data(), h.size());
  const std::size_t count = p.tensors().size() + ck.state.first_moment.size() + ck.state.second_moment.size();
  w.u64(count);
  for (const auto& [name, t] : p.tensors()) detail::write_tensor(w, "param/" + name, t);
  for (const auto& [name, t] : ck.state.first_moment) detail::write_tensor(w, "adam.m/" + name, t);
  for (const auto& [name, t] : ck.state.second_moment) detail::write_tensor(w, "adam.v/" + name, t);
  return w.buffer();
}

inline Checkpoint deserialize_checkpoint(const std::string& data, const std::string& path = "<memory>") {
  detail::ByteReader r(data, path);
  if (r.bytes(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic))
    throw FormatError("'" + path + "' is not a checkpoint (bad magic)");
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != kCheckpointVersion)
    throw FormatError("checkpoint '" + path + "' has version " + std::to_string(ck.version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  const std::uint64_t header_len = r.u64();
  nlohmann::json header;
  PolicyConfig pc;
  PolicyKind kind = PolicyKind::band;
  try {
    header = nlohmann::json::parse(r.bytes(header_len));
    pc = policy_config_from_json(header.at("policy"));
    kind = policy_kind_from_string(header.at("kind").get<std::string>());
    ck.trainer = trainer_config_from_json(header.at("trainer"));
    ck.state.step = header.at("step").get<std::size_t>();
    ck.state.baseline = std::bit_cast<double>(header.at("baseline").get<std::uint64_t>());
    ck.rng_state = header.at("rng_state").get<std::string>();
    if (header.at("config_hash").get<std::uint64_t>() != config_hash(pc, kind, ck.trainer))
      throw FormatError("checkpoint '" + path + "': config hash mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint '" + path + "': bad header: " + e.what());
  } catch (const UsageError& e) {
    throw FormatError("checkpoint '" + path + "': " + e.what());
  }
  try {
    pc.validate();
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint '" + path + "': " + e.what());
  }
  ck.params = PolicyParams(pc, kind);
  const std::uint64_t count = r.u64();
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::string name = r.bytes(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank != 2) throw FormatError("checkpoint '" + path + "': tensor '" + name + "' has unsupported rank");
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (rows == 0 || cols == 0 || rows > (1ULL << 32) || cols > (1ULL << 32))
      throw FormatError("checkpoint '" + path + "': tensor '" + name + "' has bad extents");
    r.need(rows * cols * 8);
    Tensor t(rows, cols);
    for (double& v : t.data()) v = r.f64();
    const auto slash = name.find('/');
    const std::string group = name.substr(0, slash);
    const std::string key = slash == std::string::npos ? "" : name.substr(slash + 1);
    if (group == "param")
      ck.params.tensors()[key] = std::move(t);
    else if (group == "adam.m")
      ck.state.first_moment[key] = std::move(t);
    else if (group == "adam.v")
      ck.state.second_moment[key] = std::move(t);
    else
      throw FormatError("checkpoint '" + path + "': unknown tensor group in '" + name + "'");
  }
  if (!r.done()) throw FormatError("checkpoint '" + path + "': trailing bytes");
  ck.params.check_layout();
  for (const auto& [name, t] : ck.params.tensors()) {
    auto m = ck.state.first_moment.find(name);
    auto v = ck.state.second_moment.find(name);
    if (m == ck.state.first_moment.end() || v == ck.state.second_moment.end() || !m->second.same_shape(t) ||
        !v->second.same_shape(t))
      throw DimensionError("checkpoint '" + path + "': optimizer moments do not match parameter '" + name + "'");
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  const std::string data = serialize_checkpoint(ck);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw DataError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str(), path);
}

// Loads and insists on a particular network shape.
inline Checkpoint load_checkpoint(const std::string& path, const PolicyConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.params.config() == expected))
    throw DimensionError("checkpoint '" + path + "' was written for a different policy configuration");
  return ck;
}

}  // namespace ldar
