#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sre/checkpoint.hpp"
#include "sre/config.hpp"
#include "sre/pixmap.hpp"
#include "sre/trainer.hpp"

using namespace sre;

namespace {

Checkpoint sample_checkpoint(std::uint64_t seed = 3) {
  TrainConfig c;
  c.seed = seed;
  return Trainer(c).checkpoint();
}

std::string config_error_key(const std::string& text) {
  try {
    parse_run_config(text);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<none>";
}

}  // namespace

TEST(Config, ParsesAllKeys) {
  const auto c = parse_run_config(
      "# comment\n"
      "seed = 42\n"
      "world_seed=7   # trailing comment\n"
      "e = 3\n"
      "iterations = 100\n"
      "batch_size = 8\n"
      "learning_rate = 0.002\n"
      "direction_learning_rate = 0.02\n"
      "k = 10\n"
      "d = 5\n"
      "height = 24\n"
      "width = 28\n"
      "init = random\n"
      "reuse_batch = true\n"
      "log_every = 10\n");
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.resolved_world_seed(), 7u);
  EXPECT_EQ(c.e, 3.0);
  EXPECT_EQ(c.iterations, 100u);
  EXPECT_EQ(c.batch_size, 8u);
  EXPECT_EQ(c.learning_rate, 0.002);
  EXPECT_EQ(c.direction_learning_rate, 0.02);
  EXPECT_EQ(c.latent_dim, 10u);
  EXPECT_EQ(c.directions, 5u);
  EXPECT_EQ(c.height, 24u);
  EXPECT_EQ(c.width, 28u);
  EXPECT_EQ(c.init, InitMode::kRandom);
  EXPECT_TRUE(c.reuse_batch);
  EXPECT_EQ(c.log_every, 10u);
}

TEST(Config, DefaultsWhenOnlySeedGiven) {
  const auto c = parse_run_config("seed = 1\n");
  EXPECT_EQ(c.hash(), TrainConfig{}.hash());
}

TEST(Config, ErrorsNameTheKey) {
  EXPECT_EQ(config_error_key("seed = 1\nbogus = 3\n"), "bogus");
  EXPECT_EQ(config_error_key("e = 1\n"), "seed");
  EXPECT_EQ(config_error_key("seed = 1\ne = abc\n"), "e");
  EXPECT_EQ(config_error_key("seed = 1\niterations = -4\n"), "iterations");
  EXPECT_EQ(config_error_key("seed = 1\ne = 1\ne = 2\n"), "e");
  EXPECT_EQ(config_error_key("seed = 1\ninit = ld\n"), "init");
  EXPECT_EQ(config_error_key("seed = 1\ne = -1\n"), "e");
  EXPECT_EQ(config_error_key("seed = 1\nbatch_size =\n"), "batch_size");
  EXPECT_THROW(parse_run_config("seed 1\n"), ConfigError);
}

TEST(Config, MissingFile) { EXPECT_THROW(load_run_config("/nonexistent/run.cfg"), ConfigError); }

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const Checkpoint c = sample_checkpoint();
  const auto bytes = serialize(c);
  const Checkpoint back = deserialize(bytes);
  EXPECT_EQ(serialize(back), bytes);
  EXPECT_EQ(back.direction_matrix.tensor().values(), c.direction_matrix.tensor().values());
  EXPECT_EQ(back.q.values(), c.q.values());
  EXPECT_EQ(back.config_hash, c.config_hash);
  EXPECT_EQ(back.world().q().values(), c.q.values());

  const auto path = std::filesystem::temp_directory_path() / "sre_roundtrip.srev1";
  save_checkpoint(c, path.string());
  EXPECT_EQ(serialize(load_checkpoint(path.string())), bytes);
  std::filesystem::remove(path);
}

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = serialize(sample_checkpoint());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 5), "SREV1");
  // k = 8, little-endian u32 right after the magic
  EXPECT_EQ(bytes[5], 8);
  EXPECT_EQ(bytes[6], 0);
  EXPECT_EQ(bytes[9], 4);  // d
}

TEST(Checkpoint, CorruptMagicRejected) {
  auto bytes = serialize(sample_checkpoint());
  bytes[0] = 'X';
  EXPECT_THROW(deserialize(bytes), CorruptCheckpointError);
}

TEST(Checkpoint, VersionMismatchRejected) {
  auto bytes = serialize(sample_checkpoint());
  bytes[4] = '2';
  try {
    deserialize(bytes);
    FAIL();
  } catch (const CorruptCheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, TruncatedAndTrailingRejected) {
  const auto bytes = serialize(sample_checkpoint());
  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(deserialize(std::vector<char>(bytes.begin(), bytes.begin() + cut)), CorruptCheckpointError);
  }
  auto longer = bytes;
  longer.push_back(0);
  EXPECT_THROW(deserialize(longer), CorruptCheckpointError);
}

TEST(Checkpoint, InconsistentHeaderRejected) {
  auto bytes = serialize(sample_checkpoint());
  bytes[9] = 3;  // d no longer matches D and the network head
  EXPECT_THROW(deserialize(bytes), CorruptCheckpointError);
}

TEST(Pixmap, RoundHalfUp) {
  EXPECT_EQ(to_gray_level(0.0), 0);
  EXPECT_EQ(to_gray_level(1.0), 255);
  EXPECT_EQ(to_gray_level(0.5), 128);       // 127.5 -> 128
  EXPECT_EQ(to_gray_level(1.5 / 255), 2);   // 1.5 -> 2
  EXPECT_EQ(to_gray_level(1.49 / 255), 1);
  EXPECT_EQ(to_gray_level(-0.2), 0);
  EXPECT_EQ(to_gray_level(1.2), 255);
}

TEST(Pixmap, P5HeaderAndPayload) {
  const GrayImage a{2, 2, {0.0, 1.0, 0.5, 0.25}};
  const GrayImage b{1, 2, {1.0, 0.0}};
  const std::string pgm = encode_pgm(hstack({a, b}));
  const std::string header = "P5\n3 2\n255\n";
  ASSERT_EQ(pgm.substr(0, header.size()), header);
  const std::string payload = pgm.substr(header.size());
  ASSERT_EQ(payload.size(), 6u);
  const unsigned char expect[6] = {0, 255, 255, 128, 64, 0};
  for (int i = 0; i < 6; ++i) EXPECT_EQ(static_cast<unsigned char>(payload[i]), expect[i]) << i;
}

TEST(Pixmap, MismatchedPanelHeights) {
  EXPECT_THROW(hstack({GrayImage{1, 2, {0, 0}}, GrayImage{1, 1, {0}}}), ShapeError);
}
