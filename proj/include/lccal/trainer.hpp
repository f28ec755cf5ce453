#pragma once

// End-to-end training (SGD + momentum + cosine decay), single-shot
// calibration, and calibration-error evaluation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lccal/calib_io.hpp"
#include "lccal/checkpoint.hpp"
#include "lccal/datagen.hpp"
#include "lccal/errors.hpp"
#include "lccal/losses.hpp"
#include "lccal/networks.hpp"
#include "lccal/pseudo_image.hpp"
#include "lccal/se3.hpp"

namespace lccal {

struct TrainConfig {
  double initial_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool decoupled_weight_decay = true;
  long long total_iterations = 2000;
  int batch_size = 1;
  double lambda = 1.0;             ///< weight on L_D
  double appearance_weight = 1.0;  ///< weight on L_I
  DecalibRange decalib;
  double intensity_threshold = kKittiIntensityThreshold;
  std::uint64_t seed = 0;
  long long checkpoint_interval = 0;  ///< 0: final checkpoint only

  void validate() const {
    if (!(initial_lr > 0.0) || !std::isfinite(initial_lr)) throw ConfigError("lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("weight_decay must be >= 0");
    if (total_iterations <= 0) throw ConfigError("iterations must be > 0");
    if (batch_size <= 0) throw ConfigError("batch_size must be > 0");
    if (!(lambda >= 0.0) || !(appearance_weight >= 0.0)) throw ConfigError("loss weights must be >= 0");
    if (lambda == 0.0 && appearance_weight == 0.0) throw ConfigError("at least one loss weight must be > 0");
    if (!(intensity_threshold >= 0.0)) throw ConfigError("intensity_threshold must be >= 0");
    if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be >= 0");
    decalib.validate();
  }
};

/// lr0 * 0.5 * (1 + cos(pi * step / total)).
inline double cosine_lr(double lr0, long long step, long long total) {
  return lr0 * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(step) / static_cast<double>(total)));
}

/// v <- momentum * v + g (+ wd * p when coupled); p <- p - lr * v (- lr * wd * p
/// when decoupled).
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay, bool decoupled)
      : momentum_(momentum), weight_decay_(weight_decay), decoupled_(decoupled) {}

  void step(ad::ParameterSet<float>& params, const std::vector<const ad::Tensor<float>*>& grads, double lr) {
    auto& entries = params.entries();
    if (grads.size() != entries.size()) throw InvalidArgument("optimizer: gradient count mismatch");
    if (velocity_.empty())
      for (const auto& e : entries) velocity_.emplace_back(e.value.shape());
    const float m = static_cast<float>(momentum_), wd = static_cast<float>(weight_decay_), a = static_cast<float>(lr);
    for (std::size_t k = 0; k < entries.size(); ++k) {
      float* p = entries[k].value.data();
      float* v = velocity_[k].data();
      const float* g = grads[k]->data();
      const std::size_t n = entries[k].value.size();
      for (std::size_t i = 0; i < n; ++i) {
        float gi = g[i];
        if (!decoupled_ && wd != 0.0f) gi += wd * p[i];
        v[i] = m == 0.0f ? gi : m * v[i] + gi;
        float next = p[i] - a * v[i];
        if (decoupled_ && wd != 0.0f) next -= a * wd * p[i];
        p[i] = next;
      }
    }
  }

  const std::vector<ad::Tensor<float>>& velocity() const { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  bool decoupled_;
  std::vector<ad::Tensor<float>> velocity_;
};

inline constexpr const char* kPosePrefix = "posenet.";
inline constexpr const char* kIntensityPrefix = "intensitynet.";
inline constexpr const char* kDepthPrefix = "depthnet.";

/// The three networks in single precision.
struct CalibrationModel {
  explicit CalibrationModel(const NetworkConfig& cfg) : posenet(cfg), intensitynet(cfg), depthnet(cfg) {}

  PoseNet<float> posenet;
  IntensityNet<float> intensitynet;
  DepthNet<float> depthnet;

  std::vector<NamedTensor> to_named() const {
    auto out = lccal::to_named(posenet.params(), kPosePrefix);
    for (auto& t : lccal::to_named(intensitynet.params(), kIntensityPrefix)) out.push_back(std::move(t));
    for (auto& t : lccal::to_named(depthnet.params(), kDepthPrefix)) out.push_back(std::move(t));
    return out;
  }

  void save(const std::string& path) const { write_checkpoint_file(path, to_named()); }

  void load(const std::string& path) {
    const auto tensors = read_checkpoint_file(path);
    assign_parameters(posenet.params(), tensors, kPosePrefix, path);
    assign_parameters(intensitynet.params(), tensors, kIntensityPrefix, path);
    assign_parameters(depthnet.params(), tensors, kDepthPrefix, path);
  }
};

struct StepRecord {
  long long step = 0;
  double lr = 0.0;
  double l_i = 0.0;
  double l_d = 0.0;
  double total = 0.0;
  std::size_t valid_pred = 0;
  std::size_t valid_gt = 0;
  std::array<double, 6> pose{};  ///< batch-mean predicted correction
};

inline constexpr const char* kTrainLogHeader = "step,L_I,L_D,total,valid_pred,valid_gt";

inline std::string format_step(const StepRecord& r) {
  std::ostringstream os;
  os << r.step << ',' << format_double(r.l_i) << ',' << format_double(r.l_d) << ',' << format_double(r.total) << ','
     << r.valid_pred << ',' << r.valid_gt;
  return os.str();
}

struct TrainHooks {
  std::ostream* log = nullptr;  ///< CSV, header + one line per step
  /// Called with (step, model) at every checkpoint_interval and after the last step.
  std::function<void(long long, const CalibrationModel&)> checkpoint;
  std::function<void(const StepRecord&)> on_step;
};

/// Deterministic sample schedule: each epoch visits a seeded permutation of
/// the dataset, and each (epoch, sample) visit draws its own decalibration.
class SampleSchedule {
 public:
  SampleSchedule(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}

  struct Visit {
    std::size_t index;
    std::uint64_t epoch;
    std::uint64_t decalib_seed;
  };

  Visit at(std::uint64_t position) {
    const std::uint64_t epoch = position / n_;
    if (epoch != epoch_ || perm_.empty()) {
      epoch_ = epoch;
      perm_.resize(n_);
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      std::mt19937_64 rng(derive_seed(seed_, 0x5EED0001ull, epoch));
      std::shuffle(perm_.begin(), perm_.end(), rng);
    }
    const std::size_t idx = perm_[position % n_];
    return Visit{idx, epoch, derive_seed(seed_, 0xDECA1B00ull + epoch, idx)};
  }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> perm_;
};

/// Samples must carry T_gt; labels are (re)computed here from the threshold.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const NetworkConfig& net_cfg, std::vector<CalibSample> dataset)
      : cfg_(cfg),
        model_(net_cfg),
        data_(std::move(dataset)),
        schedule_(data_.size(), cfg.seed),
        opt_pose_(cfg.momentum, cfg.weight_decay, cfg.decoupled_weight_decay),
        opt_int_(cfg.momentum, cfg.weight_decay, cfg.decoupled_weight_decay),
        opt_depth_(cfg.momentum, cfg.weight_decay, cfg.decoupled_weight_decay) {
    cfg_.validate();
    if (data_.empty()) throw InvalidArgument("training dataset is empty");
    for (auto& s : data_) {
      if (s.intrinsics.width != net_cfg.width || s.intrinsics.height != net_cfg.height)
        throw ConfigError("sample '" + s.id + "' is " + std::to_string(s.intrinsics.width) + "x" +
                          std::to_string(s.intrinsics.height) + " but the network expects " +
                          std::to_string(net_cfg.width) + "x" + std::to_string(net_cfg.height));
      s.labels = make_labels(s, cfg_.intensity_threshold);
    }
  }

  CalibrationModel& model() { return model_; }
  const CalibrationModel& model() const { return model_; }
  long long step_index() const { return step_; }

  /// One optimizer step; returns the batch-mean record.
  StepRecord step() {
    const long long s = step_;
    StepRecord rec;
    rec.step = s;
    rec.lr = cosine_lr(cfg_.initial_lr, s, cfg_.total_iterations);
    ad::Tape<float> tape;
    BoundNetworks<float> nets{&model_.posenet,
                              &model_.intensitynet,
                              &model_.depthnet,
                              ad::BoundParameters<float>(tape, model_.posenet.params()),
                              ad::BoundParameters<float>(tape, model_.intensitynet.params()),
                              ad::BoundParameters<float>(tape, model_.depthnet.params())};
    const LossWeights weights{cfg_.appearance_weight, cfg_.lambda};
    std::vector<ad::Var<float>> totals;
    try {
      for (int b = 0; b < cfg_.batch_size; ++b) {
        const auto visit = schedule_.at(static_cast<std::uint64_t>(s) * static_cast<std::uint64_t>(cfg_.batch_size) +
                                        static_cast<std::uint64_t>(b));
        CalibSample sample = data_[visit.index];
        sample.t_init = compose(sample_decalibration(cfg_.decalib, visit.decalib_seed), sample.t_gt);
        const PseudoImage pseudo = build_pseudo_image(sample);
        const SampleLoss<float> loss = total_loss(tape, sample, pseudo, nets, weights);
        rec.l_i += loss.breakdown.l_i;
        rec.l_d += loss.breakdown.l_d;
        rec.total += loss.breakdown.total;
        rec.valid_pred += loss.breakdown.valid_pred;
        rec.valid_gt += loss.breakdown.valid_gt;
        for (std::size_t k = 0; k < 6; ++k) rec.pose[k] += loss.pose.value()[k] / cfg_.batch_size;
        totals.push_back(loss.total);
      }
    } catch (const NumericError& e) {
      throw NumericError("training aborted at step " + std::to_string(s) + ": " + e.what());
    }
    const double inv = 1.0 / cfg_.batch_size;
    rec.l_i *= inv;
    rec.l_d *= inv;
    rec.total *= inv;
    if (!std::isfinite(rec.total))
      throw NumericError("training aborted at step " + std::to_string(s) + ": non-finite loss (L_I=" +
                         format_double(rec.l_i) + ", L_D=" + format_double(rec.l_d) + ")");

    ad::Var<float> sum = totals[0];
    for (std::size_t i = 1; i < totals.size(); ++i) sum = ad::add(sum, totals[i]);
    const ad::Var<float> objective = cfg_.batch_size == 1 ? sum : ad::scalar_mul(sum, static_cast<float>(inv));
    const ad::Gradients<float> grads = tape.backward(objective);

    auto update = [&](ad::ParameterSet<float>& ps, const ad::BoundParameters<float>& bound, SgdMomentum& opt,
                      const char* what) {
      std::vector<const ad::Tensor<float>*> g;
      for (const auto& e : ps.entries()) {
        const ad::Tensor<float>& gi = grads[bound[e.name]];
        if (!gi.all_finite())
          throw NumericError("training aborted at step " + std::to_string(s) + ": non-finite gradient for " + what +
                             e.name + " (L_I=" + format_double(rec.l_i) + ", L_D=" + format_double(rec.l_d) + ")");
        g.push_back(&gi);
      }
      opt.step(ps, g, rec.lr);
    };
    update(model_.posenet.params(), nets.pose_params, opt_pose_, kPosePrefix);
    if (cfg_.appearance_weight != 0.0) update(model_.intensitynet.params(), nets.intensity_params, opt_int_, kIntensityPrefix);
    if (cfg_.lambda != 0.0) update(model_.depthnet.params(), nets.depth_params, opt_depth_, kDepthPrefix);
    ++step_;
    return rec;
  }

  void run(const TrainHooks& hooks = {}) {
    if (hooks.log) *hooks.log << kTrainLogHeader << '\n';
    while (step_ < cfg_.total_iterations) {
      const StepRecord rec = step();
      if (hooks.log) *hooks.log << format_step(rec) << '\n';
      if (hooks.on_step) hooks.on_step(rec);
      const bool last = step_ == cfg_.total_iterations;
      if (hooks.checkpoint && (last || (cfg_.checkpoint_interval > 0 && step_ % cfg_.checkpoint_interval == 0)))
        hooks.checkpoint(step_, model_);
    }
    if (hooks.log) hooks.log->flush();
  }

 private:
  TrainConfig cfg_;
  CalibrationModel model_;
  std::vector<CalibSample> data_;
  SampleSchedule schedule_;
  SgdMomentum opt_pose_;
  SgdMomentum opt_int_;
  SgdMomentum opt_depth_;
  long long step_ = 0;
};

/// Loads only the PoseNet tensors of a checkpoint and runs single-shot inference.
class Calibrator {
 public:
  Calibrator(const std::string& checkpoint_path, const NetworkConfig& cfg) : posenet_(cfg) {
    const auto tensors = read_checkpoint_file(checkpoint_path, {kPosePrefix});
    assign_parameters(posenet_.params(), tensors, kPosePrefix, checkpoint_path);
  }

  explicit Calibrator(const PoseNet<float>& net) : posenet_(net) {}

  /// Exactly one PoseNet forward pass.
  SE3Transform calibrate(const CalibSample& sample) const {
    const PseudoImage pseudo = build_pseudo_image(sample);
    ad::Tape<float> tape;
    const ad::BoundParameters<float> p(tape, posenet_.params());
    const ad::Var<float> input = tape.constant(make_network_input<float>(pseudo, posenet_.config()));
    const ad::Var<float> out = posenet_.forward(p, input);
    PosePrediction pred;
    for (std::size_t i = 0; i < 3; ++i) {
      pred.rotation[i] = static_cast<double>(out.value()[i]);
      pred.translation[i] = static_cast<double>(out.value()[i + 3]);
    }
    return pose_to_tpred(pred, sample.t_init);
  }

  const PoseNet<float>& posenet() const { return posenet_; }

 private:
  PoseNet<float> posenet_;
};

inline SE3Transform calibrate(const std::string& checkpoint_path, const NetworkConfig& cfg, const CalibSample& sample) {
  return Calibrator(checkpoint_path, cfg).calibrate(sample);
}

/// Absolute per-axis errors of the left error pose T_pred * inverse(T_gt).
struct SampleError {
  std::string id;
  double tx_cm = 0.0, ty_cm = 0.0, tz_cm = 0.0;
  double roll_deg = 0.0, pitch_deg = 0.0, yaw_deg = 0.0;
};

inline SampleError calibration_error(const SE3Transform& t_pred, const SE3Transform& t_gt, std::string id = {}) {
  const EulerPose e = euler_from_se3(compose(t_pred, inverse(t_gt)));
  SampleError s;
  s.id = std::move(id);
  s.tx_cm = std::abs(e.tx) * 100.0;
  s.ty_cm = std::abs(e.ty) * 100.0;
  s.tz_cm = std::abs(e.tz) * 100.0;
  s.roll_deg = std::abs(rad_to_deg(e.roll));
  s.pitch_deg = std::abs(rad_to_deg(e.pitch));
  s.yaw_deg = std::abs(rad_to_deg(e.yaw));
  return s;
}

struct CalibErrorReport {
  double trans_mean_cm = 0.0, x_cm = 0.0, y_cm = 0.0, z_cm = 0.0;
  double rot_mean_deg = 0.0, roll_deg = 0.0, pitch_deg = 0.0, yaw_deg = 0.0;
  std::size_t samples = 0;
  std::vector<SampleError> per_sample;
};

inline CalibErrorReport aggregate_errors(std::vector<SampleError> errs) {
  CalibErrorReport r;
  r.samples = errs.size();
  if (errs.empty()) return r;
  for (const auto& e : errs) {
    r.x_cm += e.tx_cm;
    r.y_cm += e.ty_cm;
    r.z_cm += e.tz_cm;
    r.roll_deg += e.roll_deg;
    r.pitch_deg += e.pitch_deg;
    r.yaw_deg += e.yaw_deg;
  }
  const double n = static_cast<double>(errs.size());
  r.x_cm /= n;
  r.y_cm /= n;
  r.z_cm /= n;
  r.roll_deg /= n;
  r.pitch_deg /= n;
  r.yaw_deg /= n;
  r.trans_mean_cm = (r.x_cm + r.y_cm + r.z_cm) / 3.0;
  r.rot_mean_deg = (r.roll_deg + r.pitch_deg + r.yaw_deg) / 3.0;
  r.per_sample = std::move(errs);
  return r;
}

/// Samples must carry both T_gt and T_init.
inline CalibErrorReport evaluate(const Calibrator& calibrator, const std::vector<CalibSample>& dataset) {
  std::vector<SampleError> errs;
  errs.reserve(dataset.size());
  for (const auto& s : dataset) errs.push_back(calibration_error(calibrator.calibrate(s), s.t_gt, s.id));
  return aggregate_errors(std::move(errs));
}

inline CalibErrorReport evaluate(const std::string& checkpoint_path, const NetworkConfig& cfg,
                                 const std::vector<CalibSample>& dataset) {
  return evaluate(Calibrator(checkpoint_path, cfg), dataset);
}

/// Error of T_init itself (the no-op baseline).
inline CalibErrorReport baseline_errors(const std::vector<CalibSample>& dataset) {
  std::vector<SampleError> errs;
  for (const auto& s : dataset) errs.push_back(calibration_error(s.t_init, s.t_gt, s.id));
  return aggregate_errors(std::move(errs));
}

inline constexpr const char* kEvalLogHeader = "id,x_cm,y_cm,z_cm,roll_deg,pitch_deg,yaw_deg";

inline void write_eval_log(std::ostream& os, const CalibErrorReport& r) {
  os << kEvalLogHeader << '\n';
  for (const auto& e : r.per_sample)
    os << e.id << ',' << format_double(e.tx_cm) << ',' << format_double(e.ty_cm) << ',' << format_double(e.tz_cm) << ','
       << format_double(e.roll_deg) << ',' << format_double(e.pitch_deg) << ',' << format_double(e.yaw_deg) << '\n';
}

/// Table row: translation mean/X/Y/Z (cm) then rotation mean/roll/pitch/yaw (deg).
inline std::string format_report(const CalibErrorReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "samples: %zu\n"
                "translation (cm): mean %.4f  X %.4f  Y %.4f  Z %.4f\n"
                "rotation (deg):   mean %.4f  roll %.4f  pitch %.4f  yaw %.4f\n",
                r.samples, r.trans_mean_cm, r.x_cm, r.y_cm, r.z_cm, r.rot_mean_deg, r.roll_deg, r.pitch_deg, r.yaw_deg);
  return buf;
}

}  // namespace lccal
