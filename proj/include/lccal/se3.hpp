#pragma once

// Rigid transforms, Euler conversions, pinhole projection and decalibration
// sampling. Everything here runs in double precision.

#include <Eigen/Core>
#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lccal/errors.hpp"

namespace lccal {

/// Points closer than this to the camera plane are never projected.
inline constexpr double kZNear = 0.1;

inline constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// Roll/pitch/yaw in radians about the fixed X/Y/Z axes, translation in meters.
struct EulerPose {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
  double tx = 0.0;
  double ty = 0.0;
  double tz = 0.0;

  bool finite() const {
    return std::isfinite(roll) && std::isfinite(pitch) && std::isfinite(yaw) && std::isfinite(tx) &&
           std::isfinite(ty) && std::isfinite(tz);
  }
};

/// 4x4 homogeneous rigid transform. Construction from raw numbers validates
/// orthonormality (1e-9), det(R) = +1 and an exact (0,0,0,1) bottom row.
class SE3Transform {
 public:
  static constexpr double kTolerance = 1e-9;

  SE3Transform() : m_(Eigen::Matrix4d::Identity()) {}

  static SE3Transform identity() { return SE3Transform(); }

  static SE3Transform from_matrix(const Eigen::Matrix4d& m) {
    check(m);
    return SE3Transform(m, Unchecked{});
  }

  static SE3Transform from_rotation_translation(const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = r;
    m.topRightCorner<3, 1>() = t;
    return from_matrix(m);
  }

  /// Top 3x4 block, row-major order (KITTI calibration style).
  static SE3Transform from_row_major_3x4(const std::vector<double>& v) {
    if (v.size() != 12) throw InvalidArgument("expected 12 values for a 3x4 extrinsic, got " + std::to_string(v.size()));
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) m(r, c) = v[static_cast<std::size_t>(r * 4 + c)];
    return from_matrix(m);
  }

  /// Snaps an approximately-rigid 3x4 (e.g. calibration files printed with
  /// six decimals) onto the nearest rotation in the Frobenius sense.
  static SE3Transform nearest_rigid(const Eigen::Matrix<double, 3, 4>& approx) {
    if (!approx.allFinite()) throw InvalidArgument("non-finite extrinsic");
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(approx.leftCols<3>(), Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = svd.matrixU() * d * svd.matrixV().transpose();
    m.topRightCorner<3, 1>() = approx.col(3);
    return from_matrix(m);
  }

  const Eigen::Matrix4d& matrix() const { return m_; }
  Eigen::Matrix3d rotation() const { return m_.topLeftCorner<3, 3>(); }
  Eigen::Vector3d translation() const { return m_.topRightCorner<3, 1>(); }
  double operator()(int r, int c) const { return m_(r, c); }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation() * p + translation(); }

  std::vector<double> row_major_3x4() const {
    std::vector<double> v;
    v.reserve(12);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) v.push_back(m_(r, c));
    return v;
  }

  friend SE3Transform compose(const SE3Transform& a, const SE3Transform& b);
  friend SE3Transform inverse(const SE3Transform& t);
  friend SE3Transform euler_to_se3(const EulerPose& pose);

 private:
  struct Unchecked {};
  SE3Transform(const Eigen::Matrix4d& m, Unchecked) : m_(m) {}

  static void check(const Eigen::Matrix4d& m) {
    if (!m.allFinite()) throw InvalidArgument("transform has non-finite entries");
    if (m(3, 0) != 0.0 || m(3, 1) != 0.0 || m(3, 2) != 0.0 || m(3, 3) != 1.0)
      throw InvalidArgument("transform bottom row must be exactly (0,0,0,1)");
    const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
    const double ortho = (r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (ortho > kTolerance) throw InvalidArgument("rotation block is not orthonormal (error " + std::to_string(ortho) + ")");
    if (std::abs(r.determinant() - 1.0) > kTolerance) throw InvalidArgument("rotation block must have determinant +1");
  }

  Eigen::Matrix4d m_;
};

inline SE3Transform compose(const SE3Transform& a, const SE3Transform& b) {
  Eigen::Matrix4d m = a.m_ * b.m_;
  m.row(3) << 0.0, 0.0, 0.0, 1.0;
  return SE3Transform(m, SE3Transform::Unchecked{});
}

inline SE3Transform inverse(const SE3Transform& t) {
  const Eigen::Matrix3d rt = t.rotation().transpose();
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rt;
  m.topRightCorner<3, 1>() = -rt * t.translation();
  return SE3Transform(m, SE3Transform::Unchecked{});
}

inline Eigen::Matrix3d rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

inline Eigen::Matrix3d rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

inline Eigen::Matrix3d rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

/// R = Rz(yaw) * Ry(pitch) * Rx(roll).
inline SE3Transform euler_to_se3(const EulerPose& pose) {
  if (!pose.finite()) throw InvalidArgument("euler pose has non-finite components");
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rot_z(pose.yaw) * rot_y(pose.pitch) * rot_x(pose.roll);
  m.topRightCorner<3, 1>() << pose.tx, pose.ty, pose.tz;
  return SE3Transform(m, SE3Transform::Unchecked{});
}

inline EulerPose euler_from_se3(const SE3Transform& t) {
  const Eigen::Matrix4d& m = t.matrix();
  // m(2,0) = -sin(pitch)
  if (std::abs(m(2, 0)) > 1.0 - 1e-9) throw DegenerateRotation("rotation is at gimbal lock (|R31| ~ 1)");
  EulerPose p;
  p.pitch = -std::asin(m(2, 0));
  p.roll = std::atan2(m(2, 1), m(2, 2));
  p.yaw = std::atan2(m(1, 0), m(0, 0));
  p.tx = m(0, 3);
  p.ty = m(1, 3);
  p.tz = m(2, 3);
  return p;
}

/// Pinhole intrinsics without skew or distortion.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("focal lengths must be positive");
    if (width <= 0 || height <= 0) throw InvalidArgument("image size must be positive");
    if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height))
      throw InvalidArgument("principal point must lie strictly inside the image");
  }

  bool operator==(const CameraIntrinsics&) const = default;
};

struct LidarPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double intensity = 0.0;  ///< [0, 255]
};

struct PointCloud {
  std::vector<LidarPoint> points;

  std::size_t size() const { return points.size(); }

  void validate() const {
    if (points.empty()) throw InvalidArgument("point cloud must contain at least one point");
    for (const auto& p : points)
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) || !std::isfinite(p.intensity))
        throw InvalidArgument("point cloud contains non-finite values");
  }
};

struct DecalibRange {
  double trans_max = 0.10;            ///< meters, per axis
  double rot_max = deg_to_rad(1.0);   ///< radians, per axis

  void validate() const {
    if (!(trans_max >= 0.0) || !(rot_max >= 0.0)) throw InvalidArgument("decalibration range must be non-negative");
  }
};

struct ProjectedPoint {
  double u = 0.0;
  double v = 0.0;
  double cam_x = 0.0;
  double cam_y = 0.0;
  double cam_z = 0.0;
  bool valid = false;
};

/// Projects one camera-frame point. Validity: z > kZNear and the pixel
/// coordinate inside [0,width) x [0,height).
inline ProjectedPoint project_camera_point(const Eigen::Vector3d& c, const CameraIntrinsics& k) {
  ProjectedPoint out;
  out.cam_x = c.x();
  out.cam_y = c.y();
  out.cam_z = c.z();
  if (c.z() > kZNear) {
    out.u = k.fx * c.x() / c.z() + k.cx;
    out.v = k.fy * c.y() / c.z() + k.cy;
    out.valid = out.u >= 0.0 && out.u < k.width && out.v >= 0.0 && out.v < k.height;
  } else {
    out.u = -1.0;
    out.v = -1.0;
  }
  return out;
}

inline std::vector<ProjectedPoint> project_points(const PointCloud& cloud, const SE3Transform& t,
                                                  const CameraIntrinsics& k) {
  std::vector<ProjectedPoint> out;
  out.reserve(cloud.size());
  const Eigen::Matrix3d r = t.rotation();
  const Eigen::Vector3d tr = t.translation();
  for (const auto& p : cloud.points) out.push_back(project_camera_point(r * Eigen::Vector3d(p.x, p.y, p.z) + tr, k));
  return out;
}

/// Uniform perturbation: each angle in [-rot_max, rot_max], each translation
/// component in [-trans_max, trans_max]. Deterministic per seed.
inline EulerPose sample_decalibration_pose(const DecalibRange& range, std::uint64_t seed) {
  range.validate();
  std::mt19937_64 rng(seed);
  auto draw = [&rng](double bound) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    const double x = dist(rng);
    return bound == 0.0 ? 0.0 : bound * x;
  };
  EulerPose p;
  p.roll = draw(range.rot_max);
  p.pitch = draw(range.rot_max);
  p.yaw = draw(range.rot_max);
  p.tx = draw(range.trans_max);
  p.ty = draw(range.trans_max);
  p.tz = draw(range.trans_max);
  return p;
}

inline SE3Transform sample_decalibration(const DecalibRange& range, std::uint64_t seed) {
  return euler_to_se3(sample_decalibration_pose(range, seed));
}

}  // namespace lccal
