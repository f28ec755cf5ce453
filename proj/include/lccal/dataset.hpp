#pragma once

// KITTI odometry ingestion and the synthetic dataset directory layout:
//
//   <root>/manifest.txt           "# scene seed" then one "scene_XXXX <seed>" per line
//   <root>/scene_XXXX/image.ppm
//   <root>/scene_XXXX/cloud.bin   KITTI velodyne format
//   <root>/scene_XXXX/intrinsics.txt
//   <root>/scene_XXXX/extrinsic_gt.txt
//   <root>/scene_XXXX/extrinsic_init.txt   optional

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lccal/calib_io.hpp"
#include "lccal/errors.hpp"
#include "lccal/image_io.hpp"
#include "lccal/pseudo_image.hpp"
#include "lccal/se3.hpp"

namespace lccal {

namespace fs = std::filesystem;

/// KITTI reflectance is stored in [0,1]; the pipeline works on [0,255].
inline constexpr double kReflectanceScale = 255.0;

/// Parses little-endian float32 (x, y, z, reflectance) records.
inline PointCloud parse_velodyne_bin(const std::vector<char>& bytes, const std::string& source) {
  if (bytes.size() % 16 != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % 16;
    throw ParseError(source + ": truncated point record at byte offset " + std::to_string(offset) + " (file size " +
                     std::to_string(bytes.size()) + " is not a multiple of 16)");
  }
  PointCloud cloud;
  cloud.points.reserve(bytes.size() / 16);
  for (std::size_t off = 0; off < bytes.size(); off += 16) {
    float v[4];
    std::memcpy(v, bytes.data() + off, 16);
    cloud.points.push_back(LidarPoint{v[0], v[1], v[2], static_cast<double>(v[3]) * kReflectanceScale});
  }
  return cloud;
}

inline std::vector<char> read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return std::vector<char>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

inline PointCloud read_velodyne_bin(const std::string& path) { return parse_velodyne_bin(read_file_bytes(path), path); }

inline void write_velodyne_bin(std::ostream& os, const PointCloud& cloud) {
  for (const auto& p : cloud.points) {
    const float v[4] = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z),
                        static_cast<float>(p.intensity / kReflectanceScale)};
    os.write(reinterpret_cast<const char*>(v), 16);
  }
}

inline void write_velodyne_bin_file(const std::string& path, const PointCloud& cloud) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_velodyne_bin(os, cloud);
  if (!os) throw IoError("failed writing '" + path + "'");
}

struct KittiCalib {
  CameraIntrinsics intrinsics;  ///< width/height left 0 until an image is read
  SE3Transform t_lc;
};

/// Reads "KEY: v v v ..." lines. T_LC = [I | P offset] * Tr, where the P
/// offset (P[0,3]/fx, P[1,3]/fy, P[2,3]) maps the reference camera to camera
/// `camera_id`. Tr is projected onto SE(3) because KITTI prints 6 decimals.
inline KittiCalib parse_kitti_calib(std::istream& is, const std::string& source, int camera_id) {
  std::map<std::string, std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto colon = t.find(':');
    if (colon == std::string::npos) throw ParseError(source + ":" + std::to_string(lineno) + ": expected 'KEY: values'");
    rows[trim(t.substr(0, colon))] = parse_numbers(t.substr(colon + 1), source + ":" + std::to_string(lineno));
  }
  auto need = [&](const std::string& key) -> const std::vector<double>& {
    const auto it = rows.find(key);
    if (it == rows.end()) throw ParseError(source + ": missing calibration key '" + key + "'");
    if (it->second.size() != 12)
      throw ParseError(source + ": key '" + key + "' needs 12 numbers, got " + std::to_string(it->second.size()));
    return it->second;
  };
  const auto& p = need("P" + std::to_string(camera_id));
  const auto& tr = need("Tr");
  KittiCalib c;
  c.intrinsics = CameraIntrinsics{p[0], p[5], p[2], p[6], 0, 0};
  Eigen::Matrix<double, 3, 4> m;
  for (int r = 0; r < 3; ++r)
    for (int col = 0; col < 4; ++col) m(r, col) = tr[static_cast<std::size_t>(r * 4 + col)];
  const SE3Transform velo_to_ref = SE3Transform::nearest_rigid(m);
  if (p[0] == 0.0 || p[5] == 0.0) throw ParseError(source + ": zero focal length in P" + std::to_string(camera_id));
  const Eigen::Vector3d offset(p[3] / p[0], p[7] / p[5], p[11]);
  c.t_lc = compose(SE3Transform::from_rotation_translation(Eigen::Matrix3d::Identity(), offset), velo_to_ref);
  return c;
}

inline KittiCalib read_kitti_calib_file(const std::string& path, int camera_id) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  return parse_kitti_calib(is, path, camera_id);
}

/// Lazily loads frames of one KITTI odometry sequence directory
/// (velodyne/NNNNNN.bin, image_<cam>/NNNNNN.png, calib.txt).
class KittiSequence {
 public:
  KittiSequence(const std::string& dir, int camera_id) : dir_(dir), camera_id_(camera_id) {
    if (!fs::is_directory(dir_)) throw IoError("not a directory: '" + dir + "'");
    calib_ = read_kitti_calib_file((dir_ / "calib.txt").string(), camera_id);
    const fs::path velo = dir_ / "velodyne";
    if (!fs::is_directory(velo)) throw IoError("missing velodyne/ in '" + dir + "'");
    for (const auto& e : fs::directory_iterator(velo))
      if (e.path().extension() == ".bin") frames_.push_back(e.path().stem().string());
    std::sort(frames_.begin(), frames_.end());
  }

  std::size_t size() const { return frames_.size(); }
  const KittiCalib& calib() const { return calib_; }

  CalibSample load(std::size_t i) const {
    const std::string& f = frames_.at(i);
    CalibSample s;
    s.id = f;
    s.cloud = read_velodyne_bin((dir_ / "velodyne" / (f + ".bin")).string());
    const fs::path img_dir = dir_ / ("image_" + std::to_string(camera_id_));
    const fs::path png = img_dir / (f + ".png");
    s.image = read_image_file(fs::exists(png) ? png.string() : (img_dir / (f + ".ppm")).string());
    s.intrinsics = calib_.intrinsics;
    s.intrinsics.width = s.image.width;
    s.intrinsics.height = s.image.height;
    s.intrinsics.validate();
    s.t_gt = calib_.t_lc;
    s.t_init = calib_.t_lc;
    return s;
  }

 private:
  fs::path dir_;
  int camera_id_;
  KittiCalib calib_;
  std::vector<std::string> frames_;
};

inline KittiSequence load_kitti_sequence(const std::string& dir, int camera_id = 2) {
  return KittiSequence(dir, camera_id);
}

inline std::string scene_dir_name(std::size_t index) {
  std::ostringstream os;
  os << "scene_" << std::setw(4) << std::setfill('0') << index;
  return os.str();
}

inline void save_scene(const std::string& dir, const CalibSample& s, bool with_init) {
  fs::create_directories(dir);
  const fs::path d(dir);
  write_ppm_file((d / "image.ppm").string(), s.image);
  write_velodyne_bin_file((d / "cloud.bin").string(), s.cloud);
  write_intrinsics_file((d / "intrinsics.txt").string(), s.intrinsics);
  write_extrinsic_file((d / "extrinsic_gt.txt").string(), s.t_gt);
  if (with_init) write_extrinsic_file((d / "extrinsic_init.txt").string(), s.t_init);
}

/// Reads one scene directory. Without extrinsic_init.txt, T_init = T_gt.
/// Labels are left empty.
inline CalibSample load_scene(const std::string& dir, bool require_gt = true) {
  const fs::path d(dir);
  CalibSample s;
  s.id = d.filename().string();
  if (s.id.empty()) s.id = d.parent_path().filename().string();
  s.image = read_ppm_file((d / "image.ppm").string());
  s.cloud = read_velodyne_bin((d / "cloud.bin").string());
  s.intrinsics = read_intrinsics_file((d / "intrinsics.txt").string());
  if (s.image.width != s.intrinsics.width || s.image.height != s.intrinsics.height)
    throw ParseError(dir + ": image size does not match intrinsics.txt");
  const fs::path gt = d / "extrinsic_gt.txt", init = d / "extrinsic_init.txt";
  const bool has_gt = fs::exists(gt);
  if (require_gt && !has_gt) throw LoadError(dir + ": missing ground-truth extrinsic '" + gt.string() + "'");
  if (has_gt) s.t_gt = read_extrinsic_file(gt.string());
  s.t_init = fs::exists(init) ? read_extrinsic_file(init.string()) : s.t_gt;
  return s;
}

struct ManifestEntry {
  std::string scene;
  std::uint64_t seed = 0;
};

inline void write_manifest(const std::string& root, const std::vector<ManifestEntry>& entries) {
  const std::string path = (fs::path(root) / "manifest.txt").string();
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "# scene seed\n";
  for (const auto& e : entries) os << e.scene << ' ' << e.seed << '\n';
  if (!os) throw IoError("failed writing '" + path + "'");
}

inline std::vector<ManifestEntry> read_manifest(const std::string& root) {
  const std::string path = (fs::path(root) / "manifest.txt").string();
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ls(t);
    ManifestEntry e;
    if (!(ls >> e.scene >> e.seed)) throw ParseError(path + ":" + std::to_string(lineno) + ": expected 'scene seed'");
    out.push_back(e);
  }
  return out;
}

/// Loads every scene listed in the manifest, in manifest order.
inline std::vector<CalibSample> load_synthetic_dataset(const std::string& root, bool require_gt = true) {
  std::vector<CalibSample> out;
  for (const auto& e : read_manifest(root)) out.push_back(load_scene((fs::path(root) / e.scene).string(), require_gt));
  if (out.empty()) throw LoadError(root + ": dataset has no scenes");
  return out;
}

}  // namespace lccal
