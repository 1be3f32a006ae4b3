// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstring>
#include <limits>

#include "support.hpp"

namespace ldar {
namespace {

Checkpoint sample_checkpoint(std::uint64_t seed, PolicyKind kind = PolicyKind::band) {
  TrainerConfig tc;
  tc.seed = seed;
  tc.batch_size = 3;
  Trainer tr(testing::tiny_config(), kind, tc);
  GeneratorConfig g;
  g.n_instances = 10;
  g.seed = seed;
  const auto data = generate(g);
  tr.step(data);
  tr.step(data);
  return tr.checkpoint();
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (PolicyKind kind : {PolicyKind::band, PolicyKind::bernoulli}) {
    const Checkpoint a = sample_checkpoint(1, kind);
    const Checkpoint b = deserialize_checkpoint(serialize_checkpoint(a));
    EXPECT_EQ(b.params.kind(), kind);
    EXPECT_EQ(b.params.config(), a.params.config());
    EXPECT_EQ(b.trainer, a.trainer);
    EXPECT_EQ(b.state.step, a.state.step);
    EXPECT_EQ(std::memcmp(&b.state.baseline, &a.state.baseline, sizeof(double)), 0);
    EXPECT_EQ(b.rng_state, a.rng_state);
    for (const auto& [name, t] : a.params.tensors()) EXPECT_EQ(b.params.at(name), t) << name;
    for (const auto& [name, t] : a.state.first_moment) EXPECT_EQ(b.state.first_moment.at(name), t);
    for (const auto& [name, t] : a.state.second_moment) EXPECT_EQ(b.state.second_moment.at(name), t);
    EXPECT_EQ(serialize_checkpoint(b), serialize_checkpoint(a));
  }
}

TEST(Checkpoint, InfiniteClipSurvives) {
  Checkpoint a = sample_checkpoint(2);
  a.trainer.grad_clip_norm = std::numeric_limits<double>::infinity();
  const Checkpoint b = deserialize_checkpoint(serialize_checkpoint(a));
  EXPECT_TRUE(std::isinf(b.trainer.grad_clip_norm));
}

TEST(Checkpoint, SaveLoadGivesIdenticalEvaluation) {
  testing::TempDir dir;
  const Checkpoint a = sample_checkpoint(3);
  save_checkpoint(a, dir.file("c.bin"));
  const Checkpoint b = load_checkpoint(dir.file("c.bin"));
  GeneratorConfig g;
  g.n_instances = 25;
  g.seed = 33;
  const auto data = generate(g);
  EXPECT_EQ(evaluate_policy("x", a.params, data, 5), evaluate_policy("x", b.params, data, 5));
}

TEST(Checkpoint, TruncatedFileIsFormatError) {
  const std::string bytes = serialize_checkpoint(sample_checkpoint(4));
  for (std::size_t cut : {std::size_t{4}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1})
    EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, cut)), FormatError) << cut;
}

TEST(Checkpoint, BadMagicVersionAndHash) {
  std::string bytes = serialize_checkpoint(sample_checkpoint(5));
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
  bad = bytes;
  bad[8] = 9;  // version field
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
  bad = bytes;
  const auto pos = bad.find("\"batch_size\":3");
  ASSERT_NE(pos, std::string::npos);
  bad[pos + 13] = '4';  // header edited without updating its hash
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
  bytes.push_back('\0');
  EXPECT_THROW(deserialize_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, DifferentConfigIsShapeError) {
  testing::TempDir dir;
  save_checkpoint(sample_checkpoint(6), dir.file("c.bin"));
  PolicyConfig other = testing::tiny_config();
  other.d_model = 32;
  EXPECT_THROW(load_checkpoint(dir.file("c.bin"), other), DimensionError);
  EXPECT_NO_THROW(load_checkpoint(dir.file("c.bin"), testing::tiny_config()));
}

TEST(Checkpoint, TensorShapeDisagreeingWithHeaderIsShapeError) {
  Checkpoint a = sample_checkpoint(7);
  a.params.tensors()["pool.mlp.weight"] = Tensor(3, 3);
  EXPECT_THROW(deserialize_checkpoint(serialize_checkpoint(a)), DimensionError);
}

TEST(Checkpoint, MissingFileIsDataError) { EXPECT_THROW(load_checkpoint("/nonexistent/ck.bin"), DataError); }

}  // namespace
}  // namespace ldar
