// Acceptance run: one PASS/FAIL line per criterion. Optional arguments pick
// criteria by number, e.g. `acceptance 1 7 9`.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "lccal/attention.hpp"
#include "lccal/calib_io.hpp"
#include "lccal/checkpoint.hpp"
#include "lccal/datagen.hpp"
#include "lccal/dataset.hpp"
#include "lccal/image_io.hpp"
#include "lccal/losses.hpp"
#include "lccal/sampling.hpp"
#include "lccal/trainer.hpp"

namespace fs = std::filesystem;
using namespace lccal;
using lccal::testing::Fn;
using lccal::testing::grad_check;
using lccal::testing::project_to_scalar;
using lccal::testing::random_tensor;
using lccal::testing::TapeD;
using lccal::testing::TensorD;
using lccal::testing::VarD;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Collects failed checks; the first few are kept for the summary line.
class Checker {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (ok) return;
    ++failures_;
    if (failures_ <= 3) notes_ += (notes_.empty() ? "" : "; ") + what;
  }
  Outcome outcome(const std::string& summary) const {
    Outcome o;
    o.pass = failures_ == 0;
    o.detail = summary + " (" + std::to_string(checks_) + " checks";
    if (failures_) o.detail += ", " + std::to_string(failures_) + " failed: " + notes_;
    o.detail += ")";
    return o;
  }

 private:
  int checks_ = 0;
  int failures_ = 0;
  std::string notes_;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

// 1 ------------------------------------------------------------------------

Eigen::Matrix3d rot_oracle(double roll, double pitch, double yaw) {
  const double cr = std::cos(roll), sr = std::sin(roll), cp = std::cos(pitch), sp = std::sin(pitch),
               cy = std::cos(yaw), sy = std::sin(yaw);
  Eigen::Matrix3d rx, ry, rz;
  rx << 1, 0, 0, 0, cr, -sr, 0, sr, cr;
  ry << cp, 0, sp, 0, 1, 0, -sp, 0, cp;
  rz << cy, -sy, 0, sy, cy, 0, 0, 0, 1;
  return rz * ry * rx;
}

Outcome geometry_oracles() {
  constexpr double tol = 1e-9;
  constexpr int cases = 1000;
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> ang(-M_PI, M_PI), pitch(-1.5, 1.5), tr(-5.0, 5.0), pt(-20.0, 20.0);
  Checker c;
  double worst = 0.0;
  auto random_pose = [&] { return EulerPose{ang(rng), pitch(rng), ang(rng), tr(rng), tr(rng), tr(rng)}; };
  auto oracle_matrix = [](const EulerPose& e) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rot_oracle(e.roll, e.pitch, e.yaw);
    m.topRightCorner<3, 1>() = Eigen::Vector3d(e.tx, e.ty, e.tz);
    return m;
  };
  const CameraIntrinsics k = default_synthetic_intrinsics();
  Eigen::Matrix<double, 3, 4> kmat = Eigen::Matrix<double, 3, 4>::Zero();
  kmat(0, 0) = k.fx;
  kmat(1, 1) = k.fy;
  kmat(0, 2) = k.cx;
  kmat(1, 2) = k.cy;
  kmat(2, 2) = 1.0;
  int projected = 0;
  for (int i = 0; i < cases; ++i) {
    const EulerPose e = random_pose(), f = random_pose();
    const SE3Transform a = euler_to_se3(e), b = euler_to_se3(f);
    const Eigen::Matrix4d ma = oracle_matrix(e), mb = oracle_matrix(f);

    double d = max_abs_diff(a.matrix(), ma);
    worst = std::max(worst, d);
    c.expect(d <= tol, "euler_to_se3 vs oracle");

    const EulerPose back = euler_from_se3(a);
    d = std::max({std::abs(back.roll - e.roll), std::abs(back.pitch - e.pitch), std::abs(back.yaw - e.yaw),
                  std::abs(back.tx - e.tx), std::abs(back.ty - e.ty), std::abs(back.tz - e.tz)});
    worst = std::max(worst, d);
    c.expect(d <= tol, "euler round trip");

    d = max_abs_diff(euler_to_se3(euler_from_se3(a)).matrix(), a.matrix());
    worst = std::max(worst, d);
    c.expect(d <= tol, "matrix round trip");

    d = max_abs_diff(compose(a, b).matrix(), ma * mb);
    worst = std::max(worst, d);
    c.expect(d <= tol, "compose vs 4x4 multiply");

    d = max_abs_diff(inverse(a).matrix(), ma.inverse());
    worst = std::max(worst, d);
    c.expect(d <= tol, "inverse vs general inverse");

    d = max_abs_diff(compose(a, inverse(a)).matrix(), Eigen::Matrix4d::Identity());
    worst = std::max(worst, d);
    c.expect(d <= tol, "T * T^-1 = I");

    d = max_abs_diff(compose(compose(a, b), a).matrix(), compose(a, compose(b, a)).matrix());
    worst = std::max(worst, d);
    c.expect(d <= tol, "associativity");

    // Projection against K [R|t] in homogeneous coordinates.
    PointCloud cloud;
    for (int j = 0; j < 4; ++j) cloud.points.push_back(LidarPoint{pt(rng), pt(rng), pt(rng), 0.0});
    const auto proj = project_points(cloud, a, k);
    for (std::size_t j = 0; j < cloud.size(); ++j) {
      const auto& p = cloud.points[j];
      const Eigen::Vector4d ph(p.x, p.y, p.z, 1.0);
      const Eigen::Vector3d cam = (ma * ph).head<3>();
      const Eigen::Vector3d uvw = kmat * ma * ph;
      const double u = uvw.x() / uvw.z(), v = uvw.y() / uvw.z();
      const bool valid = cam.z() > kZNear && u >= 0.0 && u < k.width && v >= 0.0 && v < k.height;
      c.expect(proj[j].valid == valid, "projection validity");
      if (cam.z() > kZNear) {
        d = std::max({std::abs(proj[j].u - u), std::abs(proj[j].v - v), std::abs(proj[j].cam_z - cam.z())});
        worst = std::max(worst, d / std::max(1.0, std::abs(u) + std::abs(v)));
        c.expect(d <= tol * std::max(1.0, std::abs(u) + std::abs(v)), "projection vs K[R|t]");
        ++projected;
      }
    }
  }
  return c.outcome(std::to_string(cases) + " random cases, " + std::to_string(projected) +
                   " projections, worst deviation " + fmt("%.2e", worst) + ", tol 1e-9");
}

// 2 ------------------------------------------------------------------------

Outcome gradient_suite() {
  constexpr double elementwise_tol = 1e-4;
  constexpr double composite_tol = 1e-3;
  Checker c;
  double worst_elem = 0.0, worst_comp = 0.0;
  int checked = 0;
  auto elementwise = [&](const std::string& name, const Fn& f, const std::vector<TensorD>& in) {
    const auto r = grad_check(f, in);
    worst_elem = std::max(worst_elem, r.max_elementwise);
    c.expect(r.max_elementwise <= elementwise_tol, name + " " + fmt("%.1e", r.max_elementwise));
    ++checked;
  };
  auto composite = [&](const std::string& name, const Fn& f, const std::vector<TensorD>& in, double eps = 1e-6) {
    const auto r = grad_check(f, in, eps);
    worst_comp = std::max(worst_comp, r.max_norm);
    c.expect(r.max_norm <= composite_tol, name + " " + fmt("%.1e", r.max_norm) + " " + r.worst);
    ++checked;
  };

  for (int trial = 0; trial < 3; ++trial) {
    std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(trial));
    auto away = [&](const ad::Shape& s) {
      TensorD t = random_tensor(s, rng, 0.1, 1.0);
      std::bernoulli_distribution sign(0.5);
      for (std::size_t i = 0; i < t.size(); ++i)
        if (sign(rng)) t[i] = -t[i];
      return t;
    };
    elementwise("add", [](TapeD&, const auto& v) { return project_to_scalar(ad::add(v[0], v[1]), 1); },
                {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
    elementwise("sub", [](TapeD&, const auto& v) { return project_to_scalar(ad::sub(v[0], v[1]), 2); },
                {random_tensor({5}, rng), random_tensor({5}, rng)});
    elementwise("mul", [](TapeD&, const auto& v) { return project_to_scalar(ad::mul(v[0], v[1]), 3); },
                {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
    elementwise("scalar_mul/affine",
                [](TapeD&, const auto& v) { return project_to_scalar(ad::affine(ad::scalar_mul(v[0], 1.7), -0.3, 2.0), 4); },
                {random_tensor({4, 2}, rng)});
    elementwise("relu", [](TapeD&, const auto& v) { return project_to_scalar(ad::relu(v[0]), 5); }, {away({6, 3})});
    elementwise("softplus", [](TapeD&, const auto& v) { return project_to_scalar(ad::softplus(v[0]), 6); },
                {random_tensor({7}, rng, -4.0, 4.0)});
    elementwise("sum/mean/reshape",
                [](TapeD&, const auto& v) {
                  return ad::add(ad::sum(ad::reshape(v[0], {6, 2})), ad::scalar_mul(ad::mean(v[0]), 3.0));
                },
                {random_tensor({3, 4}, rng)});
    for (int axis = 0; axis < 3; ++axis)
      elementwise("mean_dim", [axis](TapeD&, const auto& v) { return project_to_scalar(ad::mean_dim(v[0], axis), 7); },
                  {random_tensor({2, 3, 4}, rng)});
    elementwise("transpose_last_two",
                [](TapeD&, const auto& v) { return project_to_scalar(ad::transpose_last_two(v[0]), 10); },
                {random_tensor({2, 3, 4}, rng)});
    for (int axis = 0; axis < 2; ++axis)
      elementwise("concat",
                  [axis](TapeD&, const auto& v) {
                    return project_to_scalar(ad::concat(std::vector<VarD>{v[0], v[1]}, axis), 14);
                  },
                  {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
    elementwise("nearest_upsample2x",
                [](TapeD&, const auto& v) { return project_to_scalar(ad::nearest_upsample2x(v[0]), 15); },
                {random_tensor({1, 2, 3, 2}, rng)});

    composite("matmul", [](TapeD&, const auto& v) { return project_to_scalar(ad::matmul(v[0], v[1]), 8); },
              {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)});
    composite("batched matmul", [](TapeD&, const auto& v) { return project_to_scalar(ad::matmul(v[0], v[1]), 9); },
              {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 2}, rng)});
    composite("linear", [](TapeD&, const auto& v) { return project_to_scalar(ad::linear(v[0], v[1], v[2]), 11); },
              {random_tensor({2, 3, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5}, rng)});
    composite("softmax", [](TapeD&, const auto& v) { return project_to_scalar(ad::softmax_last_dim(v[0]), 12); },
              {random_tensor({3, 5}, rng, -3.0, 3.0)});
    composite("layer_norm", [](TapeD&, const auto& v) { return project_to_scalar(ad::layer_norm_last_dim(v[0]), 13); },
              {random_tensor({3, 6}, rng, -3.0, 3.0)});
    for (int stride : {1, 2})
      for (int k : {1, 3}) {
        const ad::Conv2dOptions opt{stride, k / 2};
        composite("conv2d", [opt](TapeD&, const auto& v) { return project_to_scalar(ad::conv2d(v[0], v[1], v[2], opt), 16); },
                  {random_tensor({2, 3, 5, 6}, rng), random_tensor({4, 3, k, k}, rng), random_tensor({4}, rng)});
      }
    TensorD coords(ad::Shape{6, 2});
    std::uniform_real_distribution<double> uu(0.0, 5.0), uv(0.0, 4.0);
    for (int i = 0; i < 6; ++i) {
      coords[2 * static_cast<std::size_t>(i)] = uu(rng);
      coords[2 * static_cast<std::size_t>(i) + 1] = uv(rng);
    }
    composite("bilinear_sample", [](TapeD&, const auto& v) { return project_to_scalar(ad::bilinear_sample(v[0], v[1]), 17); },
              {random_tensor({2, 4, 5}, rng), coords});

    // Attention block: inputs and every parameter.
    ad::ParameterSet<double> ps;
    ad::add_attention_block_params(ps, "blk", 4, 6, rng);
    std::vector<TensorD> in{random_tensor({2, 3, 4}, rng), random_tensor({2, 5, 4}, rng)};
    std::vector<std::string> names;
    for (auto& e : ps.entries()) {
      if (e.name.find(".bias") != std::string::npos) e.value = random_tensor(e.value.shape(), rng, -0.2, 0.2);
      names.push_back(e.name);
      in.push_back(e.value);
    }
    composite("attention_block",
              [&names](TapeD&, const auto& v) {
                ad::BoundParameters<double> p;
                for (std::size_t i = 0; i < names.size(); ++i) p.insert(names[i], v[i + 2]);
                return project_to_scalar(ad::attention_block(p, "blk", v[0], v[1]), 31);
              },
              in);

    const SE3Transform t_init = euler_to_se3(EulerPose{0.3, -0.2, 1.1, 0.5, -0.1, 0.2});
    composite("pose_to_tpred", [&](TapeD&, const auto& v) { return project_to_scalar(pose_to_tpred(v[0], t_init), 41); },
              {random_tensor({1, 6}, rng, -0.5, 0.5)});

    PointCloud cloud;
    std::uniform_real_distribution<double> xy(-2.0, 2.0), z(3.0, 8.0);
    for (int i = 0; i < 12; ++i) cloud.points.push_back(LidarPoint{xy(rng), xy(rng), z(rng), 10.0});
    const CameraIntrinsics k{30.0, 32.0, 16.0, 12.0, 32, 24};
    TensorD m(ad::Shape{3, 4}, {1, 0.01, -0.02, 0.1, -0.01, 1, 0.03, -0.05, 0.02, -0.03, 1, 0.2});
    composite("project_differentiable",
              [&](TapeD&, const auto& v) { return project_to_scalar(project_differentiable(cloud, v[0], k).coords, 42); },
              {m});

    // Full objective over every parameter of the three networks.
    SyntheticSceneSpec spec;
    spec.seed = 50 + static_cast<std::uint64_t>(trial);
    spec.points_per_scene = 120;
    spec.intrinsics = CameraIntrinsics{14.0, 14.0, 8.0, 4.0, 16, 8};
    spec.supersample = 1;
    CalibSample sample = decalibrate(generate_scene(spec).sample, DecalibRange{}, spec.seed + 1);
    const PseudoImage pseudo = build_pseudo_image(sample);
    NetworkConfig cfg;
    cfg.height = 8;
    cfg.width = 16;
    cfg.pose_stem_width = 3;
    cfg.pose_widths = {4, 6};
    cfg.embed_dim = 4;
    cfg.query_count = 2;
    cfg.ffn_dim = 5;
    cfg.dense_widths = {3, 4};
    cfg.init_seed = 7 + static_cast<std::uint64_t>(trial);
    PoseNet<double> pn(cfg);
    IntensityNet<double> in_net(cfg);
    DepthNet<double> d_net(cfg);
    for (auto& e : pn.params().entries())
      if (e.name.rfind("head.", 0) == 0) e.value = random_tensor(e.value.shape(), rng, -0.02, 0.02);
    // Zero biases put ReLUs over all-zero patches exactly on their kink.
    for (auto* ps : {&pn.params(), &in_net.params(), &d_net.params()})
      for (auto& e : ps->entries())
        if (e.name.rfind("head.", 0) != 0 && e.name.find(".bias") != std::string::npos)
          e.value = random_tensor(e.value.shape(), rng, -0.1, 0.1);
    struct Slot {
      int net;
      std::string name;
    };
    std::vector<Slot> slots;
    std::vector<TensorD> params;
    const ad::ParameterSet<double>* sets[3] = {&pn.params(), &in_net.params(), &d_net.params()};
    for (int n = 0; n < 3; ++n)
      for (const auto& e : sets[n]->entries()) {
        slots.push_back({n, e.name});
        params.push_back(e.value);
      }
    composite("total_loss",
              [&](TapeD&, const auto& v) {
                BoundNetworks<double> nets{&pn, &in_net, &d_net, {}, {}, {}};
                ad::BoundParameters<double>* bound[3] = {&nets.pose_params, &nets.intensity_params, &nets.depth_params};
                for (std::size_t i = 0; i < slots.size(); ++i) bound[slots[i].net]->insert(slots[i].name, v[i]);
                return total_loss(v[0].tape(), sample, pseudo, nets).total;
              },
              params, 1e-5);
  }
  return c.outcome(std::to_string(checked) + " gradient checks, worst elementwise rel " + fmt("%.1e", worst_elem) +
                   " (tol 1e-4), worst composite rel " + fmt("%.1e", worst_comp) + " (tol 1e-3)");
}

// 3 ------------------------------------------------------------------------

CalibSample default_scene(std::uint64_t seed) {
  SyntheticSceneSpec spec;
  spec.seed = seed;
  for (std::uint64_t attempt = 0;; ++attempt) {
    try {
      spec.seed = derive_seed(seed, 0, attempt);
      return generate_scene(spec).sample;
    } catch (const GenerationError&) {
      if (attempt > 100) throw;
    }
  }
}

Outcome safe_start() {
  Checker c;
  const NetworkConfig cfg;
  const PoseNet<float> net(cfg);
  const Calibrator cal(net);
  double worst_sym = 0.0;
  for (std::uint64_t i = 0; i < 16; ++i) {
    const CalibSample s = decalibrate(default_scene(300 + i), DecalibRange{}, 400 + i);
    c.expect(cal.calibrate(s).matrix() == s.t_init.matrix(), "T_pred != T_init with zero heads");
  }
  CalibrationModel model(cfg);
  for (std::uint64_t i = 0; i < 8; ++i) {
    CalibSample s = default_scene(500 + i);
    s.t_init = s.t_gt;
    s.labels = make_labels(s, kKittiIntensityThreshold);
    ad::Tape<float> tape;
    BoundNetworks<float> nets{&model.posenet,
                              &model.intensitynet,
                              &model.depthnet,
                              ad::BoundParameters<float>(tape, model.posenet.params()),
                              ad::BoundParameters<float>(tape, model.intensitynet.params()),
                              ad::BoundParameters<float>(tape, model.depthnet.params())};
    const auto l = total_loss(tape, s, build_pseudo_image(s), nets);
    const double di = std::abs(l.breakdown.l_i_pred - l.breakdown.l_i_gt);
    const double dd = std::abs(l.breakdown.l_d_pred - l.breakdown.l_d_gt);
    worst_sym = std::max({worst_sym, di, dd});
    c.expect(di <= 1e-6, "CE branches differ by " + fmt("%.2e", di));
    c.expect(dd <= 1e-6, "L1 branches differ by " + fmt("%.2e", dd));
    c.expect(l.breakdown.valid_pred == l.breakdown.valid_gt, "branch point counts differ");
  }
  return c.outcome("16 samples calibrate to T_init exactly; 8 samples with T_init = T_gt, worst branch gap " +
                   fmt("%.1e", worst_sym));
}

// 4 ------------------------------------------------------------------------

double loss_at(CalibrationModel& model, const CalibSample& s) {
  ad::Tape<float> tape;
  BoundNetworks<float> nets{&model.posenet,
                            &model.intensitynet,
                            &model.depthnet,
                            ad::BoundParameters<float>(tape, model.posenet.params()),
                            ad::BoundParameters<float>(tape, model.intensitynet.params()),
                            ad::BoundParameters<float>(tape, model.depthnet.params())};
  return total_loss(tape, s, build_pseudo_image(s), nets).breakdown.total;
}

Outcome overfit() {
  const CalibSample base = default_scene(77);
  TrainConfig tc;
  tc.seed = 77;
  Trainer trainer(tc, NetworkConfig{}, {base});
  // Loss on the first visited decalibration, before and after training.
  const auto visit = SampleSchedule(1, tc.seed).at(0);
  CalibSample probe = base;
  probe.t_init = compose(sample_decalibration(tc.decalib, visit.decalib_seed), base.t_gt);
  probe.labels = make_labels(probe, tc.intensity_threshold);
  const double initial = loss_at(trainer.model(), probe);
  double first = 0.0, last = 0.0;
  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) {
    if (r.step == 0) first = r.total;
    last = r.total;
  };
  trainer.run(hooks);
  const double final_loss = loss_at(trainer.model(), probe);
  Outcome o;
  o.pass = final_loss < 0.1 * initial;
  o.detail = fmt("%.0f steps, loss %.4f -> %.4f (ratio %.3f, need < 0.1)", static_cast<double>(tc.total_iterations),
                 initial, final_loss, final_loss / initial) +
             fmt("; logged step 0 %.4f, last step %.4f", first, last);
  return o;
}

// 5, 6 -----------------------------------------------------------------------

constexpr int kTrainScenes = 512;
constexpr int kHeldOutScenes = 64;
constexpr long long kRecoverySteps = 50000;

struct Protocol {
  std::vector<CalibSample> train;
  std::vector<CalibSample> held_out;
  CalibErrorReport baseline;
};

const Protocol& protocol() {
  static const Protocol p = [] {
    Protocol out;
    const TrainConfig tc;
    for (int i = 0; i < kTrainScenes; ++i) out.train.push_back(default_scene(derive_seed(2024, 1, static_cast<std::uint64_t>(i))));
    for (int i = 0; i < kHeldOutScenes; ++i)
      out.held_out.push_back(decalibrate(default_scene(derive_seed(2024, 2, static_cast<std::uint64_t>(i))), tc.decalib,
                                         derive_seed(2024, 3, static_cast<std::uint64_t>(i))));
    out.baseline = baseline_errors(out.held_out);
    return out;
  }();
  return p;
}

CalibErrorReport train_and_evaluate(double appearance_weight, double lambda, const char* label) {
  const Protocol& p = protocol();
  TrainConfig tc;
  tc.total_iterations = kRecoverySteps;
  tc.appearance_weight = appearance_weight;
  tc.lambda = lambda;
  tc.seed = 2024;
  Trainer trainer(tc, NetworkConfig{}, p.train);
  const auto t0 = std::chrono::steady_clock::now();
  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) {
    if ((r.step + 1) % 10000 != 0) return;
    const auto rep = evaluate(Calibrator(trainer.model().posenet), p.held_out);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "  [%s] step %lld  %.0fs  held-out %.3f cm  %.4f deg\n", label, r.step + 1, secs,
                 rep.trans_mean_cm, rep.rot_mean_deg);
  };
  trainer.run(hooks);
  return evaluate(Calibrator(trainer.model().posenet), p.held_out);
}

std::optional<CalibErrorReport> full_model;

Outcome recovery() {
  const Protocol& p = protocol();
  full_model = train_and_evaluate(1.0, 1.0, "full");
  const CalibErrorReport& r = *full_model;
  Outcome o;
  o.pass = r.trans_mean_cm <= 2.0 && r.rot_mean_deg <= 0.20;
  o.detail = fmt("held-out %.3f cm / %.4f deg (need <= 2.0 cm / <= 0.20 deg)", r.trans_mean_cm, r.rot_mean_deg) +
             fmt("; no-op baseline %.3f cm / %.4f deg", p.baseline.trans_mean_cm, p.baseline.rot_mean_deg) +
             "; " + std::to_string(kTrainScenes) + " train / " + std::to_string(kHeldOutScenes) + " held-out, " +
             std::to_string(kRecoverySteps) + " steps";
  return o;
}

Outcome ablation() {
  if (!full_model) full_model = train_and_evaluate(1.0, 1.0, "full");
  const CalibErrorReport no_appearance = train_and_evaluate(0.0, 1.0, "w/o appearance");
  const CalibErrorReport no_geometric = train_and_evaluate(1.0, 0.0, "w/o geometric");
  const double full = full_model->trans_mean_cm;
  const double f_app = no_appearance.trans_mean_cm / full, f_geo = no_geometric.trans_mean_cm / full;
  Outcome o;
  o.pass = f_app > f_geo;
  o.detail = fmt("translation error full %.3f cm, w/o appearance %.3f cm (x%.3f), w/o geometric %.3f cm", full,
                 no_appearance.trans_mean_cm, f_app, no_geometric.trans_mean_cm) +
             fmt(" (x%.3f); need w/o appearance factor > w/o geometric factor", f_geo);
  return o;
}

// 7 ------------------------------------------------------------------------

Outcome single_shot() {
  Checker c;
  const NetworkConfig cfg;
  std::mt19937_64 rng(9);
  PoseNet<float> net(cfg);
  std::normal_distribution<float> n(0.0f, 0.05f);
  for (auto& e : net.params().entries())
    if (e.name.rfind("head.", 0) == 0)
      for (auto& v : e.value.storage()) v = n(rng);
  const Calibrator cal(net);
  auto& counters = forward_counters();
  for (std::uint64_t i = 0; i < 8; ++i) {
    const CalibSample s = decalibrate(default_scene(900 + i), DecalibRange{}, i);
    const std::uint64_t p0 = counters.posenet.load(), i0 = counters.intensitynet.load(), d0 = counters.depthnet.load();
    (void)cal.calibrate(s);
    c.expect(counters.posenet.load() - p0 == 1, "PoseNet evaluations != 1");
    c.expect(counters.intensitynet.load() == i0, "IntensityNet evaluated");
    c.expect(counters.depthnet.load() == d0, "DepthNet evaluated");
  }
  return c.outcome("8 calibrations: 1 PoseNet, 0 IntensityNet, 0 DepthNet evaluations each");
}

// 8 ------------------------------------------------------------------------

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

Outcome bit_exactness() {
  Checker c;
  const fs::path dir = fs::temp_directory_path() / "lccal_acceptance_formats";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::mt19937_64 rng(8);

  // KITTI velodyne binary: arbitrary float bytes survive read -> write.
  std::uniform_real_distribution<float> coord(-80.0f, 80.0f), refl(0.0f, 1.0f);
  {
    std::ofstream os(dir / "cloud.bin", std::ios::binary);
    for (int i = 0; i < 5000; ++i) {
      const float rec[4] = {coord(rng), coord(rng), coord(rng), refl(rng)};
      os.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    }
  }
  write_velodyne_bin_file((dir / "cloud2.bin").string(), read_velodyne_bin((dir / "cloud.bin").string()));
  c.expect(slurp(dir / "cloud.bin") == slurp(dir / "cloud2.bin"), "KITTI binary round trip");

  // Checkpoint.
  NetworkConfig cfg;
  cfg.init_seed = 31;
  CalibrationModel model(cfg);
  for (auto& e : model.posenet.params().entries())
    for (auto& v : e.value.storage()) v += std::uniform_real_distribution<float>(-1e-3f, 1e-3f)(rng);
  model.save((dir / "a.rcal").string());
  CalibrationModel loaded(cfg);
  loaded.load((dir / "a.rcal").string());
  loaded.save((dir / "b.rcal").string());
  c.expect(slurp(dir / "a.rcal") == slurp(dir / "b.rcal"), "checkpoint round trip");

  // Extrinsic text.
  for (std::uint64_t i = 0; i < 200; ++i) {
    const SE3Transform t = compose(sample_decalibration(DecalibRange{0.5, 0.3}, i), default_lidar_to_camera());
    write_extrinsic_file((dir / "t.txt").string(), t);
    const SE3Transform back = read_extrinsic_file((dir / "t.txt").string());
    c.expect(back.matrix() == t.matrix(), "extrinsic values round trip");
    write_extrinsic_file((dir / "t2.txt").string(), back);
    c.expect(slurp(dir / "t.txt") == slurp(dir / "t2.txt"), "extrinsic text round trip");
  }

  // PPM: overlay rendered twice, and a read -> write cycle.
  const CalibSample s = decalibrate(default_scene(4), DecalibRange{}, 4);
  write_ppm_file((dir / "o1.ppm").string(), render_overlay(s.image, s.cloud, s.t_init, s.intrinsics));
  write_ppm_file((dir / "o2.ppm").string(), render_overlay(s.image, s.cloud, s.t_init, s.intrinsics));
  c.expect(slurp(dir / "o1.ppm") == slurp(dir / "o2.ppm"), "PPM determinism");
  write_ppm_file((dir / "o3.ppm").string(), read_ppm_file((dir / "o1.ppm").string()));
  c.expect(slurp(dir / "o1.ppm") == slurp(dir / "o3.ppm"), "PPM round trip");
  fs::remove_all(dir);
  return c.outcome("KITTI binary, checkpoint, extrinsic text and PPM outputs byte-identical");
}

// 9 ------------------------------------------------------------------------

Outcome thresholds() {
  Checker c;
  PointCloud cloud;
  cloud.points = {{0, 0, 1, 45}, {0, 0, 1, 30}, {0, 0, 1, 30.000001}, {0, 0, 1, 10}, {0, 0, 1, 10.5}, {0, 0, 1, 0}};
  c.expect(kKittiIntensityThreshold == 30.0, "KITTI default threshold");
  c.expect(kDeliveryFleetIntensityThreshold == 10.0, "delivery-fleet default threshold");
  c.expect(binarize_intensity(cloud, kKittiIntensityThreshold) == std::vector<std::uint8_t>{1, 0, 1, 0, 0, 0},
           "threshold 30");
  c.expect(binarize_intensity(cloud, kDeliveryFleetIntensityThreshold) == std::vector<std::uint8_t>{1, 1, 1, 0, 1, 0},
           "threshold 10");
  c.expect(TrainConfig{}.intensity_threshold == 30.0, "training default threshold");
  return c.outcome("45 -> 1, 30 -> 0 at threshold 30; defaults 30 / 10");
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "geometry oracle suite", geometry_oracles},
      {2, "autodiff gradient suite", gradient_suite},
      {3, "safe start", safe_start},
      {4, "overfit regression", overfit},
      {5, "decalibration recovery", recovery},
      {6, "ablation direction", ablation},
      {7, "single-shot inference", single_shot},
      {8, "format bit-exactness", bit_exactness},
      {9, "threshold semantics", thresholds},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& cr : criteria) {
    if (!selected.empty() && !selected.count(cr.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failed;
    std::printf("%s  criterion %d  %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", cr.id, cr.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
