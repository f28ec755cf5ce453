#pragma once

// Seven-channel network input (RGB + rasterized LiDAR camera coordinates and
// intensity) and the per-point supervision labels.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "lccal/se3.hpp"
#include "lccal/tensor.hpp"

namespace lccal {

/// Threshold that splits KITTI reflectance (on the [0,255] scale).
inline constexpr double kKittiIntensityThreshold = 30.0;
/// Threshold for the delivery-vehicle LiDAR data.
inline constexpr double kDeliveryFleetIntensityThreshold = 10.0;

/// 8-bit interleaved RGB, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  bool operator==(const RgbImage&) const = default;
};

enum PseudoChannel : int { kRed = 0, kGreen, kBlue, kCamX, kCamY, kCamZ, kIntensity, kPseudoChannels };

/// [7, H, W] float grid; LiDAR channels are zero where no point lands.
struct PseudoImage {
  ad::Tensor<float> channels;

  int height() const { return channels.dim(1); }
  int width() const { return channels.dim(2); }
  float at(int ch, int y, int x) const {
    return channels[(static_cast<std::size_t>(ch) * height() + y) * width() + x];
  }
};

/// Per-point labels (indexed like the cloud).
struct PointLabels {
  std::vector<std::uint8_t> binary_intensity;
  std::vector<double> gt_u;
  std::vector<double> gt_v;
  std::vector<double> gt_depth;
  std::vector<std::uint8_t> valid_gt;

  std::size_t size() const { return valid_gt.size(); }
  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto v : valid_gt) n += v;
    return n;
  }
};

struct CalibSample {
  std::string id;
  RgbImage image;
  PointCloud cloud;
  CameraIntrinsics intrinsics;
  SE3Transform t_gt;
  SE3Transform t_init;
  PointLabels labels;
};

/// 1 iff intensity > threshold.
inline std::vector<std::uint8_t> binarize_intensity(const PointCloud& cloud, double threshold) {
  if (!(threshold >= 0.0)) throw InvalidArgument("intensity threshold must be >= 0");
  std::vector<std::uint8_t> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud.points) out.push_back(p.intensity > threshold ? 1 : 0);
  return out;
}

inline PointLabels make_labels(const CalibSample& sample, double threshold) {
  PointLabels labels;
  labels.binary_intensity = binarize_intensity(sample.cloud, threshold);
  const auto proj = project_points(sample.cloud, sample.t_gt, sample.intrinsics);
  labels.gt_u.reserve(proj.size());
  for (const auto& p : proj) {
    labels.gt_u.push_back(p.u);
    labels.gt_v.push_back(p.v);
    labels.gt_depth.push_back(p.cam_z);
    labels.valid_gt.push_back(p.valid ? 1 : 0);
  }
  return labels;
}

/// Rasterizes every point valid under T_init into the pixel containing its
/// (u, v). Collisions keep the smaller depth; equal depths keep the earlier
/// point.
inline PseudoImage build_pseudo_image(const CalibSample& sample) {
  const CameraIntrinsics& k = sample.intrinsics;
  const int h = k.height, w = k.width;
  if (sample.image.width != w || sample.image.height != h)
    throw InvalidArgument("image size " + std::to_string(sample.image.width) + "x" + std::to_string(sample.image.height) +
                          " does not match intrinsics " + std::to_string(w) + "x" + std::to_string(h));
  PseudoImage out{ad::Tensor<float>(ad::Shape{kPseudoChannels, h, w})};
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  float* d = out.channels.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) d[c * plane + static_cast<std::size_t>(y) * w + x] = sample.image.at(y, x, c) / 255.0f;

  std::vector<double> best(plane, std::numeric_limits<double>::infinity());
  const auto proj = project_points(sample.cloud, sample.t_init, k);
  for (std::size_t i = 0; i < proj.size(); ++i) {
    const auto& p = proj[i];
    if (!p.valid) continue;
    const int px = static_cast<int>(p.u), py = static_cast<int>(p.v);
    const std::size_t cell = static_cast<std::size_t>(py) * w + px;
    if (!(p.cam_z < best[cell])) continue;
    best[cell] = p.cam_z;
    d[kCamX * plane + cell] = static_cast<float>(p.cam_x);
    d[kCamY * plane + cell] = static_cast<float>(p.cam_y);
    d[kCamZ * plane + cell] = static_cast<float>(p.cam_z);
    d[kIntensity * plane + cell] = static_cast<float>(sample.cloud.points[i].intensity);
  }
  return out;
}

}  // namespace lccal
