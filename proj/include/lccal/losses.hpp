#pragma once

// Appearance- and geometric-consistency objectives. Each is the sum of a
// pred branch (points projected with T_pred, gradient reaches PoseNet) and a
// gt branch (points projected with T_gt, constant coordinates).

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "lccal/networks.hpp"
#include "lccal/pseudo_image.hpp"
#include "lccal/sampling.hpp"

namespace lccal {

/// Pixel coordinates of every cloud point plus the per-point validity mask.
template <typename T>
struct ProjectionBranch {
  ad::Var<T> coords;  ///< [N,2]
  std::vector<std::uint8_t> mask;

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto m : mask) n += m;
    return n;
  }
};

/// Projects the cloud with a tape-valued 3x4 extrinsic. The mask comes from
/// the detached values and is not differentiated.
template <typename T>
ProjectionBranch<T> project_differentiable(const PointCloud& cloud, const ad::Var<T>& t_pred,
                                           const CameraIntrinsics& k) {
  if (t_pred.value().size() != 12) throw ShapeError("project_differentiable: expected a [3,4] extrinsic");
  const int n = static_cast<int>(cloud.size());
  Eigen::Matrix<double, 3, 4> m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) m(i, j) = static_cast<double>(t_pred.value()[static_cast<std::size_t>(i * 4 + j)]);
  ad::Tensor<T> out(ad::Shape{n, 2});
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 0);
  for (int p = 0; p < n; ++p) {
    const auto& pt = cloud.points[static_cast<std::size_t>(p)];
    const Eigen::Vector3d c = m * Eigen::Vector4d(pt.x, pt.y, pt.z, 1.0);
    const ProjectedPoint pp = project_camera_point(c, k);
    out[2 * static_cast<std::size_t>(p)] = static_cast<T>(pp.u);
    out[2 * static_cast<std::size_t>(p) + 1] = static_cast<T>(pp.v);
    mask[static_cast<std::size_t>(p)] = pp.valid ? 1 : 0;
  }
  const std::size_t it = t_pred.id();
  const double fx = k.fx, fy = k.fy;
  auto pts = std::make_shared<std::vector<Eigen::Vector4d>>();
  pts->reserve(cloud.size());
  for (const auto& pt : cloud.points) pts->emplace_back(pt.x, pt.y, pt.z, 1.0);
  ProjectionBranch<T> branch;
  branch.coords = t_pred.tape().record(
      std::move(out), {t_pred},
      [it, m, fx, fy, pts, n](ad::Tape<T>& t, const ad::Tensor<T>& g) {
        ad::Tensor<T>& gm = t.grad(it);
        std::array<double, 12> acc{};
        for (int p = 0; p < n; ++p) {
          const double gu = g[2 * static_cast<std::size_t>(p)], gv = g[2 * static_cast<std::size_t>(p) + 1];
          if (gu == 0.0 && gv == 0.0) continue;
          const Eigen::Vector4d& ph = (*pts)[static_cast<std::size_t>(p)];
          const Eigen::Vector3d c = m * ph;
          if (!(c.z() > kZNear)) continue;
          const double iz = 1.0 / c.z();
          // d(u,v)/d(camera point)
          const double dcx = gu * fx * iz;
          const double dcy = gv * fy * iz;
          const double dcz = -(gu * fx * c.x() + gv * fy * c.y()) * iz * iz;
          for (int j = 0; j < 4; ++j) {
            acc[static_cast<std::size_t>(j)] += dcx * ph[j];
            acc[static_cast<std::size_t>(4 + j)] += dcy * ph[j];
            acc[static_cast<std::size_t>(8 + j)] += dcz * ph[j];
          }
        }
        for (std::size_t i = 0; i < 12; ++i) gm[i] += static_cast<T>(acc[i]);
      },
      "project_differentiable");
  branch.mask = std::move(mask);
  return branch;
}

/// Constant-coordinate branch from the ground-truth labels.
template <typename T>
ProjectionBranch<T> gt_branch(ad::Tape<T>& tape, const PointLabels& labels) {
  const int n = static_cast<int>(labels.size());
  ad::Tensor<T> coords(ad::Shape{n, 2});
  for (std::size_t p = 0; p < labels.size(); ++p) {
    coords[2 * p] = static_cast<T>(labels.valid_gt[p] ? labels.gt_u[p] : -1.0);
    coords[2 * p + 1] = static_cast<T>(labels.valid_gt[p] ? labels.gt_v[p] : -1.0);
  }
  return ProjectionBranch<T>{tape.constant(std::move(coords)), labels.valid_gt};
}

/// Mean softmax cross-entropy of [N,2] logits over the masked points; 0 when
/// no point is valid.
template <typename T>
ad::Var<T> masked_cross_entropy(const ad::Var<T>& logits, const std::vector<std::uint8_t>& labels,
                                const std::vector<std::uint8_t>& mask) {
  const auto& s = logits.shape();
  if (s.size() != 2 || s[1] != 2 || static_cast<std::size_t>(s[0]) != labels.size() || labels.size() != mask.size())
    throw ShapeError("masked_cross_entropy: logits " + ad::shape_str(s) + " vs " + std::to_string(labels.size()) +
                     " labels");
  std::size_t count = 0;
  double acc = 0.0;
  const T* l = logits.value().data();
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (!mask[p]) continue;
    const double a = l[2 * p], b = l[2 * p + 1];
    const double mx = std::max(a, b);
    const double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
    acc += lse - (labels[p] ? b : a);
    ++count;
  }
  const double inv = count ? 1.0 / static_cast<double>(count) : 0.0;
  const std::size_t il = logits.id();
  return logits.tape().record_if(
      ad::Tensor<T>::scalar(static_cast<T>(acc * inv)), count > 0 && logits.requires_grad(),
      [il, labels, mask, inv](ad::Tape<T>& t, const ad::Tensor<T>& g) {
        const T* l = t.value(il).data();
        ad::Tensor<T>& gl = t.grad(il);
        const double scale = static_cast<double>(g[0]) * inv;
        for (std::size_t p = 0; p < labels.size(); ++p) {
          if (!mask[p]) continue;
          const double a = l[2 * p], b = l[2 * p + 1];
          const double pb = 1.0 / (1.0 + std::exp(a - b));
          const double pa = 1.0 - pb;
          gl[2 * p] += static_cast<T>(scale * (pa - (labels[p] ? 0.0 : 1.0)));
          gl[2 * p + 1] += static_cast<T>(scale * (pb - (labels[p] ? 1.0 : 0.0)));
        }
      },
      "masked_cross_entropy");
}

/// Mean |value - target| of [N,1] values over the masked points; 0 when no
/// point is valid.
template <typename T>
ad::Var<T> masked_l1(const ad::Var<T>& values, const std::vector<double>& targets,
                     const std::vector<std::uint8_t>& mask) {
  if (values.value().size() != targets.size() || targets.size() != mask.size())
    throw ShapeError("masked_l1: values " + ad::shape_str(values.shape()) + " vs " + std::to_string(targets.size()) +
                     " targets");
  std::size_t count = 0;
  double acc = 0.0;
  for (std::size_t p = 0; p < targets.size(); ++p) {
    if (!mask[p]) continue;
    acc += std::abs(static_cast<double>(values.value()[p]) - targets[p]);
    ++count;
  }
  const double inv = count ? 1.0 / static_cast<double>(count) : 0.0;
  const std::size_t iv = values.id();
  return values.tape().record_if(
      ad::Tensor<T>::scalar(static_cast<T>(acc * inv)), count > 0 && values.requires_grad(),
      [iv, targets, mask, inv](ad::Tape<T>& t, const ad::Tensor<T>& g) {
        const ad::Tensor<T>& v = t.value(iv);
        ad::Tensor<T>& gv = t.grad(iv);
        const double scale = static_cast<double>(g[0]) * inv;
        for (std::size_t p = 0; p < targets.size(); ++p) {
          if (!mask[p]) continue;
          const double d = static_cast<double>(v[p]) - targets[p];
          gv[p] += static_cast<T>(d > 0 ? scale : (d < 0 ? -scale : 0.0));
        }
      },
      "masked_l1");
}

template <typename T>
struct ConsistencyTerms {
  ad::Var<T> pred_term;
  ad::Var<T> gt_term;
  ad::Var<T> total;  ///< pred_term + gt_term
};

namespace detail {

inline std::vector<std::uint8_t> and_mask(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  std::vector<std::uint8_t> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] && b[i];
  return out;
}

}  // namespace detail

/// Cross-entropy of the intensity logits [1,2,H,W] sampled at both branches.
/// A point contributes to a branch only if it is valid there and valid under
/// the ground truth.
template <typename T>
ConsistencyTerms<T> appearance_loss(const ad::Var<T>& intensity_logits, const ProjectionBranch<T>& pred,
                                    const ProjectionBranch<T>& gt, const PointLabels& labels) {
  const auto mask_pred = detail::and_mask(pred.mask, labels.valid_gt);
  const auto mask_gt = detail::and_mask(gt.mask, labels.valid_gt);
  ConsistencyTerms<T> out;
  out.pred_term =
      masked_cross_entropy(ad::bilinear_sample(intensity_logits, pred.coords), labels.binary_intensity, mask_pred);
  out.gt_term = masked_cross_entropy(ad::bilinear_sample(intensity_logits, gt.coords), labels.binary_intensity, mask_gt);
  out.total = ad::add(out.pred_term, out.gt_term);
  return out;
}

/// L1 between the predicted depth map [1,1,H,W] sampled at both branches and
/// the ground-truth point depths.
template <typename T>
ConsistencyTerms<T> geometric_loss(const ad::Var<T>& depth_map, const ProjectionBranch<T>& pred,
                                   const ProjectionBranch<T>& gt, const PointLabels& labels) {
  const auto mask_pred = detail::and_mask(pred.mask, labels.valid_gt);
  const auto mask_gt = detail::and_mask(gt.mask, labels.valid_gt);
  ConsistencyTerms<T> out;
  out.pred_term = masked_l1(ad::bilinear_sample(depth_map, pred.coords), labels.gt_depth, mask_pred);
  out.gt_term = masked_l1(ad::bilinear_sample(depth_map, gt.coords), labels.gt_depth, mask_gt);
  out.total = ad::add(out.pred_term, out.gt_term);
  return out;
}

struct LossWeights {
  double appearance = 1.0;  ///< weight on L_I; 0 disables IntensityNet
  double geometric = 1.0;   ///< lambda on L_D; 0 disables DepthNet
};

struct LossBreakdown {
  double l_i = 0.0;
  double l_d = 0.0;
  double total = 0.0;
  double l_i_pred = 0.0, l_i_gt = 0.0;
  double l_d_pred = 0.0, l_d_gt = 0.0;
  std::size_t valid_pred = 0;  ///< points contributing to the pred branch
  std::size_t valid_gt = 0;    ///< points contributing to the gt branch
  bool empty_pred_branch = false;
  bool empty_gt_branch = false;
};

/// The three networks plus their parameters bound on one tape.
template <typename T>
struct BoundNetworks {
  const PoseNet<T>* posenet = nullptr;
  const IntensityNet<T>* intensitynet = nullptr;
  const DepthNet<T>* depthnet = nullptr;
  ad::BoundParameters<T> pose_params;
  ad::BoundParameters<T> intensity_params;
  ad::BoundParameters<T> depth_params;
};

template <typename T>
struct SampleLoss {
  ad::Var<T> total;
  ad::Var<T> pose;  ///< [1,6]
  LossBreakdown breakdown;
};

/// Full per-sample objective: total = w_I * L_I + lambda * L_D.
template <typename T>
SampleLoss<T> total_loss(ad::Tape<T>& tape, const CalibSample& sample, const PseudoImage& pseudo,
                         const BoundNetworks<T>& nets, const LossWeights& weights = {}) {
  const NetworkConfig& cfg = nets.posenet->config();
  const ad::Var<T> input = tape.constant(make_network_input<T>(pseudo, cfg));
  SampleLoss<T> out;
  out.pose = nets.posenet->forward(nets.pose_params, input);
  const ad::Var<T> t_pred = pose_to_tpred(out.pose, sample.t_init);
  const ProjectionBranch<T> pred = project_differentiable(sample.cloud, t_pred, sample.intrinsics);
  const ProjectionBranch<T> gt = gt_branch(tape, sample.labels);

  LossBreakdown& b = out.breakdown;
  std::size_t np = 0, ng = 0;
  for (std::size_t i = 0; i < pred.mask.size(); ++i) {
    np += pred.mask[i] && sample.labels.valid_gt[i];
    ng += gt.mask[i] && sample.labels.valid_gt[i];
  }
  b.valid_pred = np;
  b.valid_gt = ng;
  b.empty_pred_branch = np == 0;
  b.empty_gt_branch = ng == 0;

  std::vector<ad::Var<T>> parts;
  if (weights.appearance != 0.0) {
    const ad::Var<T> logits = nets.intensitynet->forward(nets.intensity_params, input);
    const auto li = appearance_loss(logits, pred, gt, sample.labels);
    b.l_i_pred = li.pred_term.value().item();
    b.l_i_gt = li.gt_term.value().item();
    b.l_i = li.total.value().item();
    parts.push_back(weights.appearance == 1.0 ? li.total : ad::scalar_mul(li.total, static_cast<T>(weights.appearance)));
  }
  if (weights.geometric != 0.0) {
    const ad::Var<T> depth = nets.depthnet->forward(nets.depth_params, input);
    const auto ld = geometric_loss(depth, pred, gt, sample.labels);
    b.l_d_pred = ld.pred_term.value().item();
    b.l_d_gt = ld.gt_term.value().item();
    b.l_d = ld.total.value().item();
    parts.push_back(weights.geometric == 1.0 ? ld.total : ad::scalar_mul(ld.total, static_cast<T>(weights.geometric)));
  }
  if (parts.empty()) throw ConfigError("both loss weights are zero");
  out.total = parts.size() == 1 ? parts[0] : ad::add(parts[0], parts[1]);
  b.total = out.total.value().item();
  if (!std::isfinite(b.total)) throw NumericError("non-finite total loss");
  return out;
}

}  // namespace lccal
