#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "lccal/config.hpp"

namespace lccal {
namespace {

RunConfig parse(const std::string& text) {
  RunConfig c;
  std::istringstream is(text);
  apply_config(c, is, "test.cfg");
  return c;
}

TEST(Config, Defaults) {
  const RunConfig c;
  EXPECT_EQ(c.train.initial_lr, 0.01);
  EXPECT_EQ(c.train.momentum, 0.9);
  EXPECT_EQ(c.train.weight_decay, 1e-4);
  EXPECT_EQ(c.train.lambda, 1.0);
  EXPECT_EQ(c.train.intensity_threshold, 30.0);
  EXPECT_EQ(c.network.width, 0);
  EXPECT_NO_THROW(validate(c));
}

TEST(Config, KeysAreUnique) {
  std::set<std::string> names;
  for (const auto& k : config_keys()) EXPECT_TRUE(names.insert(k.name).second) << k.name;
}

TEST(Config, ParsesValues) {
  const RunConfig c = parse("# comment\nlr = 0.02\niterations=123\npose_widths = 8, 16,32\nground_plane = false\n"
                            "decalib_rot_max_deg = 2\nout_dir = runs/a b\n");
  EXPECT_EQ(c.train.initial_lr, 0.02);
  EXPECT_EQ(c.train.total_iterations, 123);
  EXPECT_EQ(c.network.pose_widths, (std::vector<int>{8, 16, 32}));
  EXPECT_FALSE(c.scene.ground_plane);
  EXPECT_NEAR(c.train.decalib.rot_max, 2.0 * M_PI / 180.0, 1e-15);
  EXPECT_EQ(c.out_dir, "runs/a b");
}

TEST(Config, UnknownKeyNamed) {
  try {
    parse("lr = 0.1\nlearning_rate = 0.1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos) << e.what();
  }
}

TEST(Config, BadValuesRejected) {
  EXPECT_THROW(parse("lr = fast\n"), ConfigError);
  EXPECT_THROW(parse("iterations = 1.5\n"), ConfigError);
  EXPECT_THROW(parse("ground_plane = maybe\n"), ConfigError);
  EXPECT_THROW(parse("pose_widths = \n"), ConfigError);
  EXPECT_THROW(parse("just words\n"), ConfigError);
}

TEST(Config, WriteThenReadRoundTrips) {
  RunConfig c;
  c.train.initial_lr = 0.0123456789;
  c.train.total_iterations = 777;
  c.train.decalib.rot_max = deg_to_rad(3.5);
  c.network.dense_widths = {3, 5, 7};
  c.network.positional_encoding = false;
  c.scene.checker_period = {0.3, 1.7};
  c.data_dir = "/tmp/somewhere";
  std::ostringstream a;
  write_config(a, c);
  std::istringstream is(a.str());
  RunConfig back;
  apply_config(back, is, "roundtrip");
  std::ostringstream b;
  write_config(b, back);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(back.train.initial_lr, c.train.initial_lr);
  EXPECT_EQ(back.network.dense_widths, c.network.dense_widths);
  EXPECT_FALSE(back.network.positional_encoding);
  EXPECT_NE(a.str().find("decalib_rot_max_deg = 3.5\n"), std::string::npos);
}

TEST(Config, OverridesApplyInOrder) {
  RunConfig c;
  apply_overrides(c, {"lambda=0", "lambda = 0.5", "seed=9"});
  EXPECT_EQ(c.train.lambda, 0.5);
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_THROW(apply_overrides(c, {"lambda"}), ConfigError);
  EXPECT_THROW(apply_overrides(c, {"nokey=1"}), ConfigError);
}

TEST(Config, ValidationCatchesInconsistentSettings) {
  RunConfig c;
  c.train.lambda = 0;
  c.train.appearance_weight = 0;
  EXPECT_THROW(validate(c), ConfigError);
  c = RunConfig{};
  c.camera_id = -1;
  EXPECT_THROW(validate(c), ConfigError);
  c = RunConfig{};
  c.scene.points_per_scene = 1;
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(Config, NetworkSizeFromDataset) {
  RunConfig c;
  resolve_network_size(c, 64, 32);
  EXPECT_EQ(c.network.width, 64);
  EXPECT_EQ(c.network.height, 32);
  c.network.width = 128;
  resolve_network_size(c, 64, 32);
  EXPECT_EQ(c.network.width, 128);
}

}  // namespace
}  // namespace lccal
