#pragma once

// Synthetic scenes (ground plane, back wall, boxes, poles) with checkered
// intensity patterns, rendered to an RGB image whose brightness follows the
// same pattern, plus decalibration.
//
// LiDAR frame: x forward, y left, z up. The camera pose in that frame is
// inverse(T_LC).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lccal/errors.hpp"
#include "lccal/pseudo_image.hpp"
#include "lccal/se3.hpp"

namespace lccal {

struct Range {
  double min = 0.0;
  double max = 0.0;
  double sample(std::mt19937_64& rng) const {
    return min == max ? min : std::uniform_real_distribution<double>(min, max)(rng);
  }
  bool valid() const { return std::isfinite(min) && std::isfinite(max) && min <= max; }
};

struct IntRange {
  int min = 0;
  int max = 0;
  int sample(std::mt19937_64& rng) const {
    return min == max ? min : std::uniform_int_distribution<int>(min, max)(rng);
  }
};

/// Camera looking along LiDAR +x, 0.27 m behind and 0.08 m below the LiDAR.
inline SE3Transform default_lidar_to_camera() {
  Eigen::Matrix3d r;
  r << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  return SE3Transform::from_rotation_translation(r, Eigen::Vector3d(0.06, -0.08, -0.27));
}

inline CameraIntrinsics default_synthetic_intrinsics() { return CameraIntrinsics{40.0, 40.0, 32.0, 16.0, 64, 32}; }

struct SyntheticSceneSpec {
  std::uint64_t seed = 0;
  CameraIntrinsics intrinsics = default_synthetic_intrinsics();
  SE3Transform t_lc = default_lidar_to_camera();
  int points_per_scene = 3000;

  bool ground_plane = true;
  double ground_height = 1.7;  ///< LiDAR height above the ground
  bool back_wall = true;
  Range wall_distance{14.0, 20.0};

  IntRange box_count{2, 4};
  Range box_size{0.8, 2.5};  ///< edge length
  Range box_distance{4.0, 12.0};
  IntRange pole_count{1, 3};
  Range pole_radius{0.08, 0.25};
  Range pole_height{2.5, 5.0};
  Range pole_distance{3.0, 12.0};
  double lateral_spread = 0.8;  ///< |y| <= spread * x for placed objects

  Range checker_period{0.4, 1.2};  ///< meters
  Range high_band{45.0, 90.0};     ///< intensity on "bright" cells
  Range low_band{3.0, 22.0};       ///< intensity on "dark" cells
  double intensity_noise = 5.0;    ///< uniform +-noise per point

  double azimuth_max = deg_to_rad(48.0);
  double elevation_min = deg_to_rad(-28.0);
  double elevation_max = deg_to_rad(26.0);
  double max_range = 60.0;
  int supersample = 3;

  void validate() const {
    intrinsics.validate();
    auto ranges_ok = [](std::initializer_list<Range> rs) {
      for (const auto& r : rs)
        if (!r.valid()) return false;
      return true;
    };
    if (points_per_scene < 100) throw InvalidArgument("points per scene must be >= 100");
    if (box_count.min < 0 || pole_count.min < 0 || box_count.max < box_count.min || pole_count.max < pole_count.min)
      throw InvalidArgument("primitive counts must be >= 0 with min <= max");
    if (!ground_plane && !back_wall && box_count.max == 0 && pole_count.max == 0)
      throw InvalidArgument("scene spec must contain at least one primitive");
    if (!ranges_ok({wall_distance, box_size, box_distance, pole_radius, pole_height, pole_distance, checker_period,
                    high_band, low_band}))
      throw InvalidArgument("scene spec has an invalid range");
    if (checker_period.min <= 0.0) throw InvalidArgument("checker period must be > 0");
    if (box_size.min <= 0.0 || pole_radius.min <= 0.0 || pole_height.min <= 0.0)
      throw InvalidArgument("primitive sizes must be > 0");
    if (!(intensity_noise >= 0.0) || !(ground_height > 0.0) || !(max_range > 0.0) || supersample < 1)
      throw InvalidArgument("scene spec has an invalid scalar setting");
    if (!(elevation_min < elevation_max) || !(azimuth_max > 0.0) || azimuth_max >= kPi)
      throw InvalidArgument("scene spec has an invalid LiDAR field of view");
  }
};

/// Checker pattern on surface coordinates (a, b): cell (floor(a/p) +
/// floor(b/p)) even is high.
struct SurfacePattern {
  double period = 1.0;
  double high = 60.0;
  double low = 10.0;
  bool is_high(double a, double b) const {
    const auto cell = static_cast<long long>(std::floor(a / period)) + static_cast<long long>(std::floor(b / period));
    return (cell & 1LL) == 0;
  }
};

struct Primitive {
  enum class Kind { kPlane, kBox, kCylinder };
  Kind kind = Kind::kPlane;
  // kPlane: points p with normal.dot(p) = offset; pattern coords are
  // (axis_a.dot(p), axis_b.dot(p)).
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  double offset = 0.0;
  Eigen::Vector3d axis_a = Eigen::Vector3d::UnitX();
  Eigen::Vector3d axis_b = Eigen::Vector3d::UnitY();
  // kBox: center, half extents in the box frame, yaw about z.
  // kCylinder: vertical axis through center.xy, z in [z_min, z_max].
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_extents = Eigen::Vector3d::Ones();
  double yaw = 0.0;
  double radius = 0.0;
  double z_min = 0.0;
  double z_max = 0.0;

  SurfacePattern pattern;
  Eigen::Vector3d albedo = Eigen::Vector3d::Ones();
};

struct SurfaceHit {
  double t = std::numeric_limits<double>::infinity();
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
  double a = 0.0;
  double b = 0.0;
  int primitive = -1;
};

namespace detail {

inline constexpr double kRayEps = 1e-9;

inline std::optional<SurfaceHit> intersect_plane(const Primitive& p, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  const double denom = p.normal.dot(d);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double t = (p.offset - p.normal.dot(o)) / denom;
  if (!(t > kRayEps)) return std::nullopt;
  SurfaceHit h;
  h.t = t;
  h.point = o + t * d;
  h.normal = denom < 0 ? p.normal : Eigen::Vector3d(-p.normal);
  h.a = p.axis_a.dot(h.point);
  h.b = p.axis_b.dot(h.point);
  return h;
}

inline Eigen::Matrix3d yaw_matrix(double yaw) { return rot_z(yaw); }

inline std::optional<SurfaceHit> intersect_box(const Primitive& p, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  const Eigen::Matrix3d r = yaw_matrix(p.yaw);
  const Eigen::Vector3d lo = r.transpose() * (o - p.center);
  const Eigen::Vector3d ld = r.transpose() * d;
  double t_near = -std::numeric_limits<double>::infinity(), t_far = std::numeric_limits<double>::infinity();
  int axis_near = -1;
  double sign_near = 0.0;
  for (int ax = 0; ax < 3; ++ax) {
    const double e = p.half_extents[ax];
    if (std::abs(ld[ax]) < 1e-15) {
      if (lo[ax] < -e || lo[ax] > e) return std::nullopt;
      continue;
    }
    double t0 = (-e - lo[ax]) / ld[ax], t1 = (e - lo[ax]) / ld[ax];
    double s0 = -1.0;
    if (t0 > t1) {
      std::swap(t0, t1);
      s0 = 1.0;
    }
    if (t0 > t_near) {
      t_near = t0;
      axis_near = ax;
      sign_near = s0;
    }
    t_far = std::min(t_far, t1);
  }
  if (axis_near < 0 || t_near > t_far || !(t_near > kRayEps)) return std::nullopt;
  SurfaceHit h;
  h.t = t_near;
  h.point = o + t_near * d;
  Eigen::Vector3d ln = Eigen::Vector3d::Zero();
  ln[axis_near] = sign_near;
  h.normal = r * ln;
  const Eigen::Vector3d lp = lo + t_near * ld + p.half_extents;  // corner-relative, so patterns start at an edge
  const int ua = axis_near == 0 ? 1 : 0, ub = axis_near == 2 ? 1 : 2;
  h.a = lp[ua];
  h.b = lp[ub];
  return h;
}

inline std::optional<SurfaceHit> intersect_cylinder(const Primitive& p, const Eigen::Vector3d& o,
                                                    const Eigen::Vector3d& d) {
  const double ox = o.x() - p.center.x(), oy = o.y() - p.center.y();
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a < 1e-15) return std::nullopt;
  const double b = 2.0 * (ox * d.x() + oy * d.y());
  const double c = ox * ox + oy * oy - p.radius * p.radius;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
    if (!(t > kRayEps)) continue;
    const Eigen::Vector3d pt = o + t * d;
    if (pt.z() < p.z_min || pt.z() > p.z_max) continue;
    SurfaceHit h;
    h.t = t;
    h.point = pt;
    h.normal = Eigen::Vector3d(pt.x() - p.center.x(), pt.y() - p.center.y(), 0.0) / p.radius;
    if (h.normal.dot(d) > 0.0) h.normal = -h.normal;
    h.a = std::atan2(pt.y() - p.center.y(), pt.x() - p.center.x()) * p.radius;
    h.b = pt.z() - p.z_min;
    return h;
  }
  return std::nullopt;
}

}  // namespace detail

inline std::optional<SurfaceHit> intersect(const Primitive& p, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  switch (p.kind) {
    case Primitive::Kind::kPlane: return detail::intersect_plane(p, origin, dir);
    case Primitive::Kind::kBox: return detail::intersect_box(p, origin, dir);
    case Primitive::Kind::kCylinder: return detail::intersect_cylinder(p, origin, dir);
  }
  return std::nullopt;
}

inline bool contains(const Primitive& p, const Eigen::Vector3d& x) {
  switch (p.kind) {
    case Primitive::Kind::kPlane: return false;
    case Primitive::Kind::kBox: {
      const Eigen::Vector3d l = detail::yaw_matrix(p.yaw).transpose() * (x - p.center);
      return (l.array().abs() <= p.half_extents.array()).all();
    }
    case Primitive::Kind::kCylinder: {
      const double dx = x.x() - p.center.x(), dy = x.y() - p.center.y();
      return dx * dx + dy * dy <= p.radius * p.radius && x.z() >= p.z_min && x.z() <= p.z_max;
    }
  }
  return false;
}

/// Unsigned distance from x to the primitive's surface.
inline double surface_distance(const Primitive& p, const Eigen::Vector3d& x) {
  switch (p.kind) {
    case Primitive::Kind::kPlane: return std::abs(p.normal.dot(x) - p.offset);
    case Primitive::Kind::kBox: {
      const Eigen::Vector3d l = detail::yaw_matrix(p.yaw).transpose() * (x - p.center);
      const Eigen::Vector3d q = l.cwiseAbs() - p.half_extents;
      const double outside = q.cwiseMax(0.0).norm();
      const double inside = std::min(q.maxCoeff(), 0.0);
      return std::abs(outside + inside);
    }
    case Primitive::Kind::kCylinder: {
      const double rad = std::hypot(x.x() - p.center.x(), x.y() - p.center.y()) - p.radius;
      const double vert = std::max(p.z_min - x.z(), x.z() - p.z_max);
      if (vert <= 0.0) return rad >= 0.0 ? rad : std::min(-rad, -vert);
      return rad <= 0.0 ? vert : std::hypot(rad, vert);
    }
  }
  return 0.0;
}

struct SceneGeometry {
  std::vector<Primitive> primitives;

  std::optional<SurfaceHit> first_hit(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const {
    std::optional<SurfaceHit> best;
    for (std::size_t i = 0; i < primitives.size(); ++i) {
      auto h = intersect(primitives[i], origin, dir);
      if (h && (!best || h->t < best->t)) {
        h->primitive = static_cast<int>(i);
        best = h;
      }
    }
    return best;
  }

  /// True if the ray meets primitive `id` anywhere (occlusion ignored).
  bool ray_meets(int id, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const {
    return intersect(primitives.at(static_cast<std::size_t>(id)), origin, dir).has_value();
  }
};

struct SyntheticScene {
  CalibSample sample;  ///< t_init = t_gt, labels empty
  SceneGeometry geometry;
  std::vector<int> point_primitive;  ///< generating primitive per point
};

namespace detail {

inline Eigen::Vector3d random_albedo(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.35, 1.0);
  return Eigen::Vector3d(u(rng), u(rng), u(rng));
}

inline SurfacePattern random_pattern(const SyntheticSceneSpec& s, std::mt19937_64& rng) {
  SurfacePattern p;
  p.period = s.checker_period.sample(rng);
  p.high = s.high_band.sample(rng);
  p.low = s.low_band.sample(rng);
  return p;
}

inline Eigen::Vector3d sky_color(const Eigen::Vector3d& dir) {
  const double up = std::clamp(dir.normalized().z(), -1.0, 1.0);
  return Eigen::Vector3d(0.55, 0.68, 0.85) + 0.15 * up * Eigen::Vector3d(-1.0, -0.5, 0.2);
}

inline Eigen::Vector3d shade(const Primitive& p, const SurfaceHit& h) {
  static const Eigen::Vector3d light = Eigen::Vector3d(-0.4, 0.3, 0.85).normalized();
  const double lambert = 0.55 + 0.45 * std::max(0.0, h.normal.dot(light));
  const double band = p.pattern.is_high(h.a, h.b) ? 1.0 : 0.3;
  return p.albedo * (band * lambert);
}

}  // namespace detail

/// Places primitives, surface-samples the LiDAR cloud by casting rays from the
/// LiDAR origin, and renders the image through K and T_LC.
inline SyntheticScene generate_scene(const SyntheticSceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SceneGeometry geo;
  const Eigen::Vector3d cam_origin = inverse(spec.t_lc).translation();

  if (spec.ground_plane) {
    Primitive g;
    g.kind = Primitive::Kind::kPlane;
    g.normal = Eigen::Vector3d::UnitZ();
    g.offset = -spec.ground_height;
    g.axis_a = Eigen::Vector3d::UnitX();
    g.axis_b = Eigen::Vector3d::UnitY();
    g.pattern = detail::random_pattern(spec, rng);
    g.albedo = detail::random_albedo(rng);
    geo.primitives.push_back(g);
  }
  if (spec.back_wall) {
    Primitive w;
    w.kind = Primitive::Kind::kPlane;
    w.normal = Eigen::Vector3d::UnitX();
    w.offset = spec.wall_distance.sample(rng);
    w.axis_a = Eigen::Vector3d::UnitY();
    w.axis_b = Eigen::Vector3d::UnitZ();
    w.pattern = detail::random_pattern(spec, rng);
    w.albedo = detail::random_albedo(rng);
    geo.primitives.push_back(w);
  }
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const int boxes = spec.box_count.sample(rng);
  for (int i = 0; i < boxes; ++i) {
    Primitive b;
    b.kind = Primitive::Kind::kBox;
    const double x = spec.box_distance.sample(rng);
    const double y = unit(rng) * spec.lateral_spread * x;
    b.half_extents = 0.5 * Eigen::Vector3d(spec.box_size.sample(rng), spec.box_size.sample(rng), spec.box_size.sample(rng));
    b.center = Eigen::Vector3d(x, y, -spec.ground_height + b.half_extents.z());
    b.yaw = unit(rng) * kPi / 4.0;
    b.pattern = detail::random_pattern(spec, rng);
    b.albedo = detail::random_albedo(rng);
    geo.primitives.push_back(b);
  }
  const int poles = spec.pole_count.sample(rng);
  for (int i = 0; i < poles; ++i) {
    Primitive c;
    c.kind = Primitive::Kind::kCylinder;
    const double x = spec.pole_distance.sample(rng);
    c.center = Eigen::Vector3d(x, unit(rng) * spec.lateral_spread * x, 0.0);
    c.radius = spec.pole_radius.sample(rng);
    c.z_min = -spec.ground_height;
    c.z_max = c.z_min + spec.pole_height.sample(rng);
    c.pattern = detail::random_pattern(spec, rng);
    c.pattern.period = std::min(c.pattern.period, 0.5);
    c.albedo = detail::random_albedo(rng);
    geo.primitives.push_back(c);
  }
  for (std::size_t i = 0; i < geo.primitives.size(); ++i) {
    if (contains(geo.primitives[i], cam_origin))
      throw GenerationError("degenerate scene (seed " + std::to_string(spec.seed) + "): camera inside primitive " +
                            std::to_string(i));
    if (contains(geo.primitives[i], Eigen::Vector3d::Zero()))
      throw GenerationError("degenerate scene (seed " + std::to_string(spec.seed) + "): LiDAR inside primitive " +
                            std::to_string(i));
  }

  SyntheticScene scene;
  CalibSample& s = scene.sample;
  s.id = "seed_" + std::to_string(spec.seed);
  s.intrinsics = spec.intrinsics;
  s.t_gt = spec.t_lc;
  s.t_init = spec.t_lc;

  std::uniform_real_distribution<double> az(-spec.azimuth_max, spec.azimuth_max);
  std::uniform_real_distribution<double> el(spec.elevation_min, spec.elevation_max);
  std::uniform_real_distribution<double> noise(-1.0, 1.0);
  const long long max_attempts = 200LL * spec.points_per_scene;
  long long attempts = 0;
  while (static_cast<int>(s.cloud.points.size()) < spec.points_per_scene) {
    if (++attempts > max_attempts)
      throw GenerationError("degenerate scene (seed " + std::to_string(spec.seed) +
                            "): too few LiDAR rays hit a surface");
    const double a = az(rng), e = el(rng);
    const Eigen::Vector3d dir(std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e));
    const auto hit = geo.first_hit(Eigen::Vector3d::Zero(), dir);
    const double jitter = noise(rng);
    if (!hit || hit->t > spec.max_range) continue;
    const Primitive& prim = geo.primitives[static_cast<std::size_t>(hit->primitive)];
    double intensity = prim.pattern.is_high(hit->a, hit->b) ? prim.pattern.high : prim.pattern.low;
    intensity = std::clamp(intensity + spec.intensity_noise * jitter, 0.0, 255.0);
    // Round-trip through the on-disk float32 representation so saved scenes reload exactly.
    const auto f = [](double v) { return static_cast<double>(static_cast<float>(v)); };
    s.cloud.points.push_back(LidarPoint{f(hit->point.x()), f(hit->point.y()), f(hit->point.z()),
                                        f(intensity / 255.0) * 255.0});
    scene.point_primitive.push_back(hit->primitive);
  }

  const CameraIntrinsics& k = spec.intrinsics;
  s.image = RgbImage(k.width, k.height);
  const Eigen::Matrix3d r_cl = spec.t_lc.rotation().transpose();
  const int ss = spec.supersample;
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      Eigen::Vector3d acc = Eigen::Vector3d::Zero();
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const double u = x + (sx + 0.5) / ss, v = y + (sy + 0.5) / ss;
          const Eigen::Vector3d dir = r_cl * Eigen::Vector3d((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
          const auto hit = geo.first_hit(cam_origin, dir);
          acc += hit ? detail::shade(geo.primitives[static_cast<std::size_t>(hit->primitive)], *hit)
                     : detail::sky_color(dir);
        }
      acc /= static_cast<double>(ss * ss);
      for (int c = 0; c < 3; ++c)
        s.image.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(acc[c] * 255.0), 0L, 255L));
    }
  scene.geometry = std::move(geo);
  return scene;
}

/// Splitmix64-style mixing of (base, epoch, index) into an independent seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ (b * 0xD1B54A32D192ED03ull));
}

/// T_init = delta * T_gt with delta drawn from `range`; labels recomputed.
inline CalibSample decalibrate(const CalibSample& sample, const DecalibRange& range, std::uint64_t seed,
                               double intensity_threshold = kKittiIntensityThreshold) {
  CalibSample out = sample;
  out.t_init = compose(sample_decalibration(range, seed), sample.t_gt);
  out.labels = make_labels(out, intensity_threshold);
  return out;
}

}  // namespace lccal
