// lccal: generate synthetic data, train, calibrate, evaluate, render overlays.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "lccal/calib_io.hpp"
#include "lccal/config.hpp"
#include "lccal/dataset.hpp"
#include "lccal/datagen.hpp"
#include "lccal/image_io.hpp"
#include "lccal/trainer.hpp"

namespace fs = std::filesystem;
using namespace lccal;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig c;
  if (!path.empty()) apply_config_file(c, path);
  apply_overrides(c, overrides);
  return c;
}

bool is_kitti_sequence(const std::string& dir) {
  return fs::exists(fs::path(dir) / "calib.txt") && fs::is_directory(fs::path(dir) / "velodyne");
}

std::vector<CalibSample> load_dataset(const std::string& dir, const RunConfig& c, bool require_gt) {
  if (is_kitti_sequence(dir)) {
    const KittiSequence seq = load_kitti_sequence(dir, c.camera_id);
    std::vector<CalibSample> out;
    for (std::size_t i = 0; i < seq.size(); ++i) out.push_back(seq.load(i));
    if (out.empty()) throw LoadError(dir + ": sequence has no frames");
    return out;
  }
  return load_synthetic_dataset(dir, require_gt);
}

/// Network settings for a checkpoint: --config if given, else the
/// run_config.txt written next to it by `train`.
RunConfig config_for_checkpoint(const std::string& checkpoint, const std::string& config,
                                const std::vector<std::string>& overrides) {
  std::string path = config;
  if (path.empty()) {
    const fs::path sibling = fs::path(checkpoint).parent_path() / "run_config.txt";
    if (fs::exists(sibling)) path = sibling.string();
  }
  return load_run_config(path, overrides);
}

int cmd_gen_synthetic(const std::string& config, const std::vector<std::string>& overrides, const std::string& out,
                      int scenes, std::uint64_t seed) {
  if (scenes < 1) throw UsageError("scene count must be ≥ 1");
  RunConfig c = load_run_config(config, overrides);
  c.scene.validate();
  c.train.decalib.validate();
  fs::create_directories(out);
  std::vector<ManifestEntry> manifest;
  for (int i = 0; i < scenes; ++i) {
    // A degenerate draw (camera inside a primitive) moves on to the next derived seed.
    SyntheticScene scene;
    bool ok = false;
    for (std::uint64_t attempt = 0; attempt < 100 && !ok; ++attempt) {
      c.scene.seed = derive_seed(seed, static_cast<std::uint64_t>(i), attempt);
      try {
        scene = generate_scene(c.scene);
        ok = true;
      } catch (const GenerationError&) {
      }
    }
    if (!ok) throw GenerationError("could not generate scene " + std::to_string(i) + " after 100 attempts");
    const std::string name = scene_dir_name(static_cast<std::size_t>(i));
    CalibSample s = scene.sample;
    s.t_init = compose(sample_decalibration(c.train.decalib, derive_seed(c.scene.seed, 0x1A17ull)), s.t_gt);
    save_scene((fs::path(out) / name).string(), s, true);
    manifest.push_back({name, c.scene.seed});
  }
  write_manifest(out, manifest);
  std::cout << "wrote " << scenes << " scenes to " << out << '\n';
  return 0;
}

int cmd_train(const std::string& config, const std::vector<std::string>& overrides, const std::string& data,
              const std::string& out) {
  RunConfig c = load_run_config(config, overrides);
  c.data_dir = data;
  c.out_dir = out;
  std::vector<CalibSample> samples = load_dataset(data, c, true);
  resolve_network_size(c, samples.front().intrinsics.width, samples.front().intrinsics.height);
  validate(c);
  fs::create_directories(out);
  write_config_file((fs::path(out) / "run_config.txt").string(), c);
  const std::string log_path = (fs::path(out) / "train_log.csv").string();
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot open '" + log_path + "' for writing");

  Trainer trainer(c.train, c.network, std::move(samples));
  TrainHooks hooks;
  hooks.log = &log;
  hooks.checkpoint = [&](long long step, const CalibrationModel& m) {
    if (step == c.train.total_iterations) {
      m.save((fs::path(out) / "checkpoint.rcal").string());
    } else {
      m.save((fs::path(out) / ("checkpoint_step" + std::to_string(step) + ".rcal")).string());
    }
  };
  try {
    trainer.run(hooks);
  } catch (const NumericError&) {
    log.flush();
    throw;
  }
  std::cout << "trained " << c.train.total_iterations << " steps; checkpoint " << (fs::path(out) / "checkpoint.rcal").string()
            << '\n';
  return 0;
}

int cmd_calibrate(const std::string& checkpoint, const std::string& config, const std::vector<std::string>& overrides,
                  const std::string& sample_dir, const std::string& t_init_path, const std::string& out) {
  RunConfig c = config_for_checkpoint(checkpoint, config, overrides);
  CalibSample s = load_scene(sample_dir, false);
  if (!t_init_path.empty()) s.t_init = read_extrinsic_file(t_init_path);
  resolve_network_size(c, s.intrinsics.width, s.intrinsics.height);
  c.network.validate();
  const SE3Transform t_pred = calibrate(checkpoint, c.network, s);
  write_extrinsic_file(out, t_pred);
  const auto& m = t_pred.matrix();
  std::printf("T_pred (LiDAR -> camera):\n");
  for (int r = 0; r < 3; ++r) std::printf("  % .9f % .9f % .9f % .9f\n", m(r, 0), m(r, 1), m(r, 2), m(r, 3));
  const EulerPose d = euler_from_se3(compose(t_pred, inverse(s.t_init)));
  std::printf("correction vs T_init: x %.4f cm  y %.4f cm  z %.4f cm  roll %.5f deg  pitch %.5f deg  yaw %.5f deg\n",
              d.tx * 100.0, d.ty * 100.0, d.tz * 100.0, rad_to_deg(d.roll), rad_to_deg(d.pitch), rad_to_deg(d.yaw));
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int cmd_overlay(const std::string& sample_dir, const std::string& extrinsic, const std::string& out, int splat) {
  const CalibSample s = load_scene(sample_dir, false);
  const SE3Transform t = read_extrinsic_file(extrinsic);
  write_ppm_file(out, render_overlay(s.image, s.cloud, t, s.intrinsics, splat));
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& config, const std::vector<std::string>& overrides,
             const std::string& data, const std::string& out) {
  RunConfig c = config_for_checkpoint(checkpoint, config, overrides);
  const std::vector<CalibSample> samples = load_dataset(data, c, true);
  resolve_network_size(c, samples.front().intrinsics.width, samples.front().intrinsics.height);
  c.network.validate();
  const CalibErrorReport r = evaluate(checkpoint, c.network, samples);
  fs::create_directories(out);
  const std::string log_path = (fs::path(out) / "eval_log.csv").string();
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot open '" + log_path + "' for writing");
  write_eval_log(log, r);
  const std::string text = format_report(r);
  std::ofstream((fs::path(out) / "report.txt").string()) << text;
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR-camera extrinsic calibration through consistency learning"};
  app.require_subcommand(1);
  std::string config, out, data, checkpoint, sample_dir, t_init, extrinsic;
  std::vector<std::string> overrides;
  int scenes = 1, splat = 1;
  std::uint64_t seed = 0;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config, "key=value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "override a configuration key (key=value), repeatable");
  };

  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic dataset");
  add_config(gen);
  gen->add_option("--out", out, "output dataset directory")->required();
  gen->add_option("--scenes", scenes, "number of scenes")->required();
  gen->add_option("--seed", seed, "base seed")->capture_default_str();

  auto* train = app.add_subcommand("train", "train the three networks");
  add_config(train);
  train->add_option("--data", data, "dataset directory (synthetic layout or KITTI sequence)")->required();
  train->add_option("--out", out, "output directory for checkpoint, log and run_config.txt")->required();

  auto* cal = app.add_subcommand("calibrate", "single-shot extrinsic correction for one sample");
  add_config(cal);
  cal->add_option("--checkpoint", checkpoint, "trained checkpoint (.rcal)")->required()->check(CLI::ExistingFile);
  cal->add_option("--sample-dir", sample_dir, "scene directory")->required()->check(CLI::ExistingDirectory);
  cal->add_option("--t-init", t_init, "initial extrinsic file (default: extrinsic_init.txt, else extrinsic_gt.txt)");
  cal->add_option("--out", out, "output extrinsic file")->required();

  auto* ov = app.add_subcommand("overlay", "draw projected LiDAR points over the image");
  ov->add_option("--sample-dir", sample_dir, "scene directory")->required()->check(CLI::ExistingDirectory);
  ov->add_option("--extrinsic", extrinsic, "extrinsic file")->required();
  ov->add_option("--out", out, "output PPM file")->required();
  ov->add_option("--splat", splat, "square point size in pixels")->capture_default_str()->check(CLI::PositiveNumber);

  auto* ev = app.add_subcommand("eval", "calibration error over a dataset");
  add_config(ev);
  ev->add_option("--checkpoint", checkpoint, "trained checkpoint (.rcal)")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data, "dataset directory with ground truth")->required();
  ev->add_option("--out", out, "output directory for report.txt and eval_log.csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_synthetic(config, overrides, out, scenes, seed);
    if (*train) return cmd_train(config, overrides, data, out);
    if (*cal) return cmd_calibrate(checkpoint, config, overrides, sample_dir, t_init, out);
    if (*ov) return cmd_overlay(sample_dir, extrinsic, out, splat);
    if (*ev) return cmd_eval(checkpoint, config, overrides, data, out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
