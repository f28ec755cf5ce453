#pragma once

// RunConfig: one flat `key = value` file (with `#` comments) covering
// training, network, scene-generation and path settings. Unknown keys are
// rejected; `key=value` command-line overrides use the same table.

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "lccal/calib_io.hpp"
#include "lccal/datagen.hpp"
#include "lccal/errors.hpp"
#include "lccal/networks.hpp"
#include "lccal/trainer.hpp"

namespace lccal {

/// Network input size 0 means "take it from the dataset images".
inline NetworkConfig default_run_network() {
  NetworkConfig n;
  n.height = 0;
  n.width = 0;
  return n;
}

struct RunConfig {
  TrainConfig train;
  NetworkConfig network = default_run_network();
  SyntheticSceneSpec scene;
  std::string data_dir;
  std::string out_dir = "out";
  int camera_id = 2;
};

namespace detail {

template <typename N>
N parse_scalar(const std::string& key, const std::string& text) {
  N v{};
  const char* b = text.data();
  const char* e = b + text.size();
  if (b != e && *b == '+') ++b;
  const auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e || b == e) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + text + "'");
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_scalar<int>(key, trim(item)));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

inline std::string int_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
  using detail::parse_scalar;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto real = [&k](std::string name, std::string doc, double* (*field)(RunConfig&)) {
      k.push_back({name, std::move(doc),
                   [field, name](RunConfig& c, const std::string& s) { *field(c) = parse_scalar<double>(name, s); },
                   [field](const RunConfig& c) { return format_double(*field(const_cast<RunConfig&>(c))); }});
    };
    auto integer = [&k](std::string name, std::string doc, int* (*field)(RunConfig&)) {
      k.push_back({name, std::move(doc),
                   [field, name](RunConfig& c, const std::string& s) { *field(c) = parse_scalar<int>(name, s); },
                   [field](const RunConfig& c) { return std::to_string(*field(const_cast<RunConfig&>(c))); }});
    };
    auto int64 = [&k](std::string name, std::string doc, long long* (*field)(RunConfig&)) {
      k.push_back({name, std::move(doc),
                   [field, name](RunConfig& c, const std::string& s) { *field(c) = parse_scalar<long long>(name, s); },
                   [field](const RunConfig& c) { return std::to_string(*field(const_cast<RunConfig&>(c))); }});
    };
    auto seed = [&k](std::string name, std::string doc, std::uint64_t* (*field)(RunConfig&)) {
      k.push_back({name, std::move(doc),
                   [field, name](RunConfig& c, const std::string& s) { *field(c) = parse_scalar<std::uint64_t>(name, s); },
                   [field](const RunConfig& c) { return std::to_string(*field(const_cast<RunConfig&>(c))); }});
    };
    auto flag = [&k](std::string name, std::string doc, bool* (*field)(RunConfig&)) {
      k.push_back({name, std::move(doc),
                   [field, name](RunConfig& c, const std::string& s) { *field(c) = detail::parse_bool(name, s); },
                   [field](const RunConfig& c) { return std::string(*field(const_cast<RunConfig&>(c)) ? "true" : "false"); }});
    };
    auto list = [&k](std::string name, std::string doc, std::vector<int>* (*field)(RunConfig&)) {
      k.push_back({name, std::move(doc),
                   [field, name](RunConfig& c, const std::string& s) { *field(c) = detail::parse_int_list(name, s); },
                   [field](const RunConfig& c) { return detail::int_list(*field(const_cast<RunConfig&>(c))); }});
    };
    auto angle = [&k](std::string name, std::string doc, double* (*field)(RunConfig&)) {
      k.push_back({name, std::move(doc),
                   [field, name](RunConfig& c, const std::string& s) { *field(c) = deg_to_rad(parse_scalar<double>(name, s)); },
                   [field](const RunConfig& c) {
                     char buf[32];
                     const double deg = rad_to_deg(*field(const_cast<RunConfig&>(c)));
                     const auto res = std::to_chars(buf, buf + sizeof(buf), deg, std::chars_format::general, 12);
                     return std::string(buf, res.ptr);
                   }});
    };
    auto text = [&k](std::string name, std::string doc, std::string* (*field)(RunConfig&)) {
      k.push_back({name, std::move(doc), [field](RunConfig& c, const std::string& s) { *field(c) = s; },
                   [field](const RunConfig& c) { return *field(const_cast<RunConfig&>(c)); }});
    };

    // training
    real("lr", "initial learning rate", [](RunConfig& c) { return &c.train.initial_lr; });
    real("momentum", "SGD momentum", [](RunConfig& c) { return &c.train.momentum; });
    real("weight_decay", "weight decay", [](RunConfig& c) { return &c.train.weight_decay; });
    flag("decoupled_weight_decay", "apply weight decay to parameters directly (true) or through the gradient",
         [](RunConfig& c) { return &c.train.decoupled_weight_decay; });
    int64("iterations", "optimizer steps", [](RunConfig& c) { return &c.train.total_iterations; });
    integer("batch_size", "samples per step", [](RunConfig& c) { return &c.train.batch_size; });
    real("lambda", "weight of the geometric (depth) loss; 0 disables it", [](RunConfig& c) { return &c.train.lambda; });
    real("appearance_weight", "weight of the appearance (intensity) loss; 0 disables it",
         [](RunConfig& c) { return &c.train.appearance_weight; });
    real("decalib_trans_max", "max per-axis translation perturbation (m)",
         [](RunConfig& c) { return &c.train.decalib.trans_max; });
    angle("decalib_rot_max_deg", "max per-axis rotation perturbation (degrees)",
          [](RunConfig& c) { return &c.train.decalib.rot_max; });
    real("intensity_threshold", "binary intensity label threshold (strict >)",
         [](RunConfig& c) { return &c.train.intensity_threshold; });
    seed("seed", "training / generation seed", [](RunConfig& c) { return &c.train.seed; });
    int64("checkpoint_interval", "write a checkpoint every N steps (0: final only)",
          [](RunConfig& c) { return &c.train.checkpoint_interval; });

    // network
    integer("net_height", "network input height; 0: dataset image height",
            [](RunConfig& c) { return &c.network.height; });
    integer("net_width", "network input width; 0: dataset image width", [](RunConfig& c) { return &c.network.width; });
    integer("pose_stem_width", "PoseNet full-resolution stem width (0: none)",
            [](RunConfig& c) { return &c.network.pose_stem_width; });
    list("pose_widths", "PoseNet stride-2 stage widths", [](RunConfig& c) { return &c.network.pose_widths; });
    flag("positional_encoding", "add sinusoidal position encodings to PoseNet tokens",
         [](RunConfig& c) { return &c.network.positional_encoding; });
    integer("embed_dim", "PoseNet token width C", [](RunConfig& c) { return &c.network.embed_dim; });
    integer("query_count", "learned queries N2", [](RunConfig& c) { return &c.network.query_count; });
    integer("ffn_dim", "decoder feed-forward width", [](RunConfig& c) { return &c.network.ffn_dim; });
    list("dense_widths", "IntensityNet/DepthNet stem + stage widths", [](RunConfig& c) { return &c.network.dense_widths; });
    real("max_depth", "depth scale of the DepthNet output (m)", [](RunConfig& c) { return &c.network.max_depth; });
    real("initial_depth", "DepthNet output before training (m)", [](RunConfig& c) { return &c.network.initial_depth; });
    real("rotation_head_scale", "multiplier on the rotation head output",
         [](RunConfig& c) { return &c.network.rotation_head_scale; });
    real("translation_head_scale", "multiplier on the translation head output",
         [](RunConfig& c) { return &c.network.translation_head_scale; });
    seed("init_seed", "network initialization seed", [](RunConfig& c) { return &c.network.init_seed; });

    // synthetic scenes
    real("fx", "synthetic camera focal length x (px)", [](RunConfig& c) { return &c.scene.intrinsics.fx; });
    real("fy", "synthetic camera focal length y (px)", [](RunConfig& c) { return &c.scene.intrinsics.fy; });
    real("cx", "synthetic camera principal point x (px)", [](RunConfig& c) { return &c.scene.intrinsics.cx; });
    real("cy", "synthetic camera principal point y (px)", [](RunConfig& c) { return &c.scene.intrinsics.cy; });
    integer("image_width", "synthetic image width", [](RunConfig& c) { return &c.scene.intrinsics.width; });
    integer("image_height", "synthetic image height", [](RunConfig& c) { return &c.scene.intrinsics.height; });
    integer("points_per_scene", "LiDAR points per synthetic scene", [](RunConfig& c) { return &c.scene.points_per_scene; });
    flag("ground_plane", "include the ground plane", [](RunConfig& c) { return &c.scene.ground_plane; });
    flag("back_wall", "include the back wall", [](RunConfig& c) { return &c.scene.back_wall; });
    integer("box_count_min", "min boxes per scene", [](RunConfig& c) { return &c.scene.box_count.min; });
    integer("box_count_max", "max boxes per scene", [](RunConfig& c) { return &c.scene.box_count.max; });
    integer("pole_count_min", "min poles per scene", [](RunConfig& c) { return &c.scene.pole_count.min; });
    integer("pole_count_max", "max poles per scene", [](RunConfig& c) { return &c.scene.pole_count.max; });
    real("checker_period_min", "min checker period (m)", [](RunConfig& c) { return &c.scene.checker_period.min; });
    real("checker_period_max", "max checker period (m)", [](RunConfig& c) { return &c.scene.checker_period.max; });
    real("intensity_noise", "uniform +- intensity noise", [](RunConfig& c) { return &c.scene.intensity_noise; });
    angle("lidar_azimuth_max_deg", "LiDAR half field of view in azimuth (degrees)",
          [](RunConfig& c) { return &c.scene.azimuth_max; });
    angle("lidar_elevation_min_deg", "LiDAR lowest elevation (degrees)", [](RunConfig& c) { return &c.scene.elevation_min; });
    angle("lidar_elevation_max_deg", "LiDAR highest elevation (degrees)", [](RunConfig& c) { return &c.scene.elevation_max; });
    integer("supersample", "render supersampling per axis", [](RunConfig& c) { return &c.scene.supersample; });

    // paths
    text("data_dir", "dataset directory", [](RunConfig& c) { return &c.data_dir; });
    text("out_dir", "output directory", [](RunConfig& c) { return &c.out_dir; });
    integer("camera_id", "KITTI camera index", [](RunConfig& c) { return &c.camera_id; });
    return k;
  }();
  return keys;
}

inline const ConfigKey* find_config_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value, const std::string& where) {
  const ConfigKey* k = find_config_key(key);
  if (!k) throw ConfigError(where + ": unknown config key '" + key + "'");
  try {
    k->set(c, value);
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

/// Applies every key of a key=value stream on top of `c`.
inline void apply_config(RunConfig& c, std::istream& is, const std::string& source) {
  std::map<std::string, std::string> kv;
  try {
    kv = parse_key_values(is, source);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  for (const auto& [key, value] : kv) set_config_value(c, key, value, source);
}

inline void apply_config_file(RunConfig& c, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path + "'");
  apply_config(c, is, path);
}

/// "key=value" strings, e.g. from repeated --set flags.
inline void apply_overrides(RunConfig& c, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "': expected key=value");
    set_config_value(c, trim(o.substr(0, eq)), trim(o.substr(eq + 1)), "override");
  }
}

inline void write_config(std::ostream& os, const RunConfig& c) {
  for (const auto& k : config_keys()) os << "# " << k.doc << '\n' << k.name << " = " << k.get(c) << '\n';
}

inline void write_config_file(const std::string& path, const RunConfig& c) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_config(os, c);
}

/// Fills a zero network input size from the dataset image size.
inline void resolve_network_size(RunConfig& c, int image_width, int image_height) {
  if (c.network.width == 0) c.network.width = image_width;
  if (c.network.height == 0) c.network.height = image_height;
}

inline void validate(const RunConfig& c) {
  c.train.validate();
  if (c.network.width != 0 || c.network.height != 0) c.network.validate();
  try {
    c.scene.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("scene settings: ") + e.what());
  }
  if (c.camera_id < 0) throw ConfigError("camera_id must be >= 0");
}

}  // namespace lccal
