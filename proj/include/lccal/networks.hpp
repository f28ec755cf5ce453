#pragma once

// PoseNet (conv encoder + attention decoder + two linear heads),
// IntensityNet (2-channel logits) and DepthNet (1-channel positive depth).
// Capacities are small; the roles match the full-size networks.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lccal/attention.hpp"
#include "lccal/ops.hpp"
#include "lccal/params.hpp"
#include "lccal/pseudo_image.hpp"
#include "lccal/se3.hpp"

namespace lccal {

struct NetworkConfig {
  int input_channels = kPseudoChannels;
  int height = 32;
  int width = 64;
  /// PoseNet full-resolution stem width (0: none) and stride-2 stage widths.
  int pose_stem_width = 16;
  std::vector<int> pose_widths = {16, 32, 48, 64};
  /// Fixed 2-D sinusoidal encodings added to the encoder tokens.
  bool positional_encoding = true;
  int embed_dim = 32;
  int query_count = 8;
  int ffn_dim = 64;
  /// IntensityNet / DepthNet: full-resolution stem width followed by
  /// stride-2 stage widths.
  std::vector<int> dense_widths = {12, 16, 24, 32};
  double max_depth = 40.0;
  /// DepthNet output before training (m); sets the classifier bias.
  double initial_depth = 15.0;
  /// Input normalization applied per channel: (x - offset) * scale.
  std::array<double, kPseudoChannels> input_offset = {0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0};
  std::array<double, kPseudoChannels> input_scale = {2.0, 2.0, 2.0, 0.2, 0.2, 0.1, 1.0 / 64.0};
  /// Multipliers on the raw pose head outputs (radians, meters).
  double rotation_head_scale = 0.01;
  double translation_head_scale = 0.05;
  std::uint64_t init_seed = 1;

  void validate() const {
    auto positive = [](const std::vector<int>& v) {
      if (v.empty()) return false;
      for (int x : v)
        if (x <= 0) return false;
      return true;
    };
    if (input_channels != kPseudoChannels) throw ConfigError("input_channels must be 7");
    if (height <= 0 || width <= 0) throw ConfigError("network input size must be positive");
    if (!positive(pose_widths) || !positive(dense_widths)) throw ConfigError("encoder widths must be positive");
    if (pose_stem_width < 0) throw ConfigError("pose_stem_width must be non-negative");
    if (positional_encoding && embed_dim % 4 != 0) throw ConfigError("positional encoding needs embed_dim divisible by 4");
    if (embed_dim <= 0 || query_count < 1 || ffn_dim <= 0) throw ConfigError("decoder sizes must be positive");
    if (!(max_depth > 0.0)) throw ConfigError("max_depth must be positive");
    if (!(initial_depth > 1e-3)) throw ConfigError("initial_depth must exceed 1e-3");
    if (!(rotation_head_scale > 0.0) || !(translation_head_scale > 0.0)) throw ConfigError("head scales must be positive");
    const int stages = static_cast<int>(dense_widths.size()) - 1;
    if (height % (1 << stages) != 0 || width % (1 << stages) != 0)
      throw ConfigError("input " + std::to_string(height) + "x" + std::to_string(width) + " is not divisible by 2^" +
                        std::to_string(stages) + " required by the dense encoder-decoder");
  }
};

/// Counts network evaluations process-wide.
struct ForwardCounters {
  std::atomic<std::uint64_t> posenet{0};
  std::atomic<std::uint64_t> intensitynet{0};
  std::atomic<std::uint64_t> depthnet{0};
};

inline ForwardCounters& forward_counters() {
  static ForwardCounters counters;
  return counters;
}

/// Rotation as roll/pitch/yaw radians, translation in meters.
struct PosePrediction {
  std::array<double, 3> rotation{};
  std::array<double, 3> translation{};

  EulerPose as_euler() const {
    return EulerPose{rotation[0], rotation[1], rotation[2], translation[0], translation[1], translation[2]};
  }
};

/// Normalized network input [B,7,H,W] for a batch of pseudo-images.
template <typename T>
ad::Tensor<T> make_network_input(std::span<const PseudoImage* const> batch, const NetworkConfig& cfg) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  const int h = cfg.height, w = cfg.width;
  ad::Tensor<T> out(ad::Shape{static_cast<int>(batch.size()), kPseudoChannels, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& img = batch[b]->channels;
    if (img.shape() != ad::Shape{kPseudoChannels, h, w})
      throw ShapeError("pseudo-image " + ad::shape_str(img.shape()) + " does not match network input " +
                       ad::shape_str({kPseudoChannels, h, w}));
    for (int c = 0; c < kPseudoChannels; ++c) {
      const double off = cfg.input_offset[static_cast<std::size_t>(c)], sc = cfg.input_scale[static_cast<std::size_t>(c)];
      const float* src = img.data() + c * plane;
      T* dst = out.data() + (b * kPseudoChannels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<T>((src[i] - off) * sc);
    }
  }
  return out;
}

template <typename T>
ad::Tensor<T> make_network_input(const PseudoImage& img, const NetworkConfig& cfg) {
  const PseudoImage* p = &img;
  return make_network_input<T>(std::span<const PseudoImage* const>(&p, 1), cfg);
}

namespace detail {

template <typename T>
void add_conv(ad::ParameterSet<T>& ps, const std::string& name, int cin, int cout, int k, std::mt19937_64& rng,
              double gain = 1.0) {
  ps.add(name + ".weight", ad::he_normal<T>({cout, cin, k, k}, cin * k * k, rng, gain));
  ps.add(name + ".bias", ad::Tensor<T>(ad::Shape{cout}));
}

template <typename T>
ad::Var<T> conv(const ad::BoundParameters<T>& p, const std::string& name, const ad::Var<T>& x, int stride = 1) {
  const int k = p[name + ".weight"].shape()[2];
  return ad::conv2d(x, p[name + ".weight"], p[name + ".bias"], ad::Conv2dOptions{stride, k / 2});
}

// Two 3x3 convs with an identity shortcut. The second conv starts small so
// each block is close to identity at init.
template <typename T>
void add_res_block(ad::ParameterSet<T>& ps, const std::string& name, int width, std::mt19937_64& rng) {
  add_conv(ps, name + ".conv1", width, width, 3, rng);
  add_conv(ps, name + ".conv2", width, width, 3, rng, 0.5);
}

template <typename T>
ad::Var<T> res_block(const ad::BoundParameters<T>& p, const std::string& name, const ad::Var<T>& x) {
  const ad::Var<T> h = ad::relu(conv(p, name + ".conv1", x));
  return ad::relu(ad::add(x, conv(p, name + ".conv2", h)));
}

}  // namespace detail

template <typename T>
class PoseNet {
 public:
  explicit PoseNet(NetworkConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.init_seed * 0x9E3779B97F4A7C15ull + 1);
    int cin = cfg_.input_channels;
    if (cfg_.pose_stem_width > 0) {
      detail::add_conv(params_, "enc.stem", cin, cfg_.pose_stem_width, 3, rng);
      cin = cfg_.pose_stem_width;
    }
    for (std::size_t s = 0; s < cfg_.pose_widths.size(); ++s) {
      const int w = cfg_.pose_widths[s];
      const std::string stage = "enc.stage" + std::to_string(s);
      detail::add_conv(params_, stage + ".down", cin, w, 3, rng);
      detail::add_res_block(params_, stage + ".res", w, rng);
      cin = w;
    }
    detail::add_conv(params_, "enc.embed", cin, cfg_.embed_dim, 1, rng);
    ad::add_attention_params(params_, "dec.feature_self", cfg_.embed_dim, rng);
    params_.add("dec.queries", ad::uniform_init<T>({cfg_.query_count, cfg_.embed_dim}, 1.0, rng));
    ad::add_attention_block_params(params_, "dec.block", cfg_.embed_dim, cfg_.ffn_dim, rng);
    // Zero heads: the untrained network predicts the identity correction.
    params_.add("head.rotation.weight", ad::Tensor<T>(ad::Shape{3, cfg_.embed_dim}));
    params_.add("head.rotation.bias", ad::Tensor<T>(ad::Shape{3}));
    params_.add("head.translation.weight", ad::Tensor<T>(ad::Shape{3, cfg_.embed_dim}));
    params_.add("head.translation.bias", ad::Tensor<T>(ad::Shape{3}));
  }

  const NetworkConfig& config() const { return cfg_; }
  ad::ParameterSet<T>& params() { return params_; }
  const ad::ParameterSet<T>& params() const { return params_; }

  /// input [B,7,H,W] -> [B,6] = (roll, pitch, yaw, tx, ty, tz).
  ad::Var<T> forward(const ad::BoundParameters<T>& p, const ad::Var<T>& input) const {
    check_input(input);
    forward_counters().posenet.fetch_add(1, std::memory_order_relaxed);
    const int batch = input.shape()[0];
    ad::Var<T> x = input;
    if (cfg_.pose_stem_width > 0) x = ad::relu(detail::conv(p, "enc.stem", x));
    for (std::size_t s = 0; s < cfg_.pose_widths.size(); ++s) {
      const std::string stage = "enc.stage" + std::to_string(s);
      x = ad::relu(detail::conv(p, stage + ".down", x, 2));
      x = detail::res_block(p, stage + ".res", x);
    }
    x = detail::conv(p, "enc.embed", x);
    const int c = x.shape()[1], tokens = x.shape()[2] * x.shape()[3];
    ad::Var<T> features = ad::transpose_last_two(ad::reshape(x, {batch, c, tokens}));
    if (cfg_.positional_encoding)
      features = ad::add(features, input.tape().constant(positional_encoding(batch, x.shape()[2], x.shape()[3], c)));
    features = ad::add(features, ad::attention(p, "dec.feature_self", features, features));

    const ad::Var<T> q1 = ad::reshape(p["dec.queries"], {1, cfg_.query_count, c});
    const ad::Var<T> queries = batch == 1 ? q1 : ad::concat(std::vector<ad::Var<T>>(static_cast<std::size_t>(batch), q1), 0);
    const ad::Var<T> decoded = ad::attention_block(p, "dec.block", queries, features);
    const ad::Var<T> pooled = ad::layer_norm_last_dim(ad::mean_dim(decoded, 1));
    ad::Var<T> rot = ad::linear(pooled, p["head.rotation.weight"], p["head.rotation.bias"]);
    ad::Var<T> trans = ad::linear(pooled, p["head.translation.weight"], p["head.translation.bias"]);
    if (cfg_.rotation_head_scale != 1.0) rot = ad::scalar_mul(rot, static_cast<T>(cfg_.rotation_head_scale));
    if (cfg_.translation_head_scale != 1.0) trans = ad::scalar_mul(trans, static_cast<T>(cfg_.translation_head_scale));
    return ad::concat(std::vector<ad::Var<T>>{rot, trans}, 1);
  }

 private:
  // [B, h*w, c]: first half of the channels encode the row, second half the column.
  static ad::Tensor<T> positional_encoding(int batch, int h, int w, int c) {
    ad::Tensor<T> pe(ad::Shape{batch, h * w, c});
    const int quarter = c / 4;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        T* row = pe.data() + static_cast<std::size_t>(y * w + x) * c;
        for (int k = 0; k < quarter; ++k) {
          const double freq = std::pow(1.0 / 100.0, static_cast<double>(k) / quarter);
          row[2 * k] = static_cast<T>(std::sin(y * freq));
          row[2 * k + 1] = static_cast<T>(std::cos(y * freq));
          row[c / 2 + 2 * k] = static_cast<T>(std::sin(x * freq));
          row[c / 2 + 2 * k + 1] = static_cast<T>(std::cos(x * freq));
        }
      }
    for (int b = 1; b < batch; ++b)
      std::copy(pe.data(), pe.data() + static_cast<std::size_t>(h) * w * c, pe.data() + static_cast<std::size_t>(b) * h * w * c);
    return pe;
  }

  void check_input(const ad::Var<T>& input) const {
    const auto& s = input.shape();
    if (s.size() != 4 || s[1] != cfg_.input_channels || s[2] != cfg_.height || s[3] != cfg_.width)
      throw ShapeError("posenet: input " + ad::shape_str(s) + " does not match configured [B," +
                       std::to_string(cfg_.input_channels) + "," + std::to_string(cfg_.height) + "," +
                       std::to_string(cfg_.width) + "]");
  }

  NetworkConfig cfg_;
  ad::ParameterSet<T> params_;
};

enum class DenseHead { kIntensity, kDepth };

/// Shared encoder-decoder: full-resolution stem, stride-2 residual stages,
/// then nearest-upsample + conv stages with additive skips back to full
/// resolution, and a 1x1 classifier.
template <typename T>
class EncoderDecoderNet {
 public:
  EncoderDecoderNet(NetworkConfig cfg, DenseHead head) : cfg_(std::move(cfg)), head_(head) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.init_seed * 0x9E3779B97F4A7C15ull + (head == DenseHead::kIntensity ? 2 : 3));
    const auto& w = cfg_.dense_widths;
    detail::add_conv(params_, "stem", cfg_.input_channels, w[0], 3, rng);
    for (std::size_t s = 1; s < w.size(); ++s) {
      const std::string stage = "enc.stage" + std::to_string(s);
      detail::add_conv(params_, stage + ".down", w[s - 1], w[s], 3, rng);
      detail::add_res_block(params_, stage + ".res", w[s], rng);
    }
    for (std::size_t s = w.size() - 1; s >= 1; --s)
      detail::add_conv(params_, "dec.up" + std::to_string(s), w[s], w[s - 1], 3, rng);
    detail::add_conv(params_, "classifier", w[0], out_channels(), 1, rng, 0.5);
    if (head_ == DenseHead::kDepth) {
      const double sp = (cfg_.initial_depth - 1e-3) / (cfg_.max_depth / 8.0);
      params_.get("classifier.bias").fill(static_cast<T>(sp > 30.0 ? sp : std::log(std::expm1(sp))));
    }
  }

  int out_channels() const { return head_ == DenseHead::kIntensity ? 2 : 1; }
  const NetworkConfig& config() const { return cfg_; }
  ad::ParameterSet<T>& params() { return params_; }
  const ad::ParameterSet<T>& params() const { return params_; }

  /// input [B,7,H,W] -> [B,2,H,W] logits or [B,1,H,W] depth in meters.
  ad::Var<T> forward(const ad::BoundParameters<T>& p, const ad::Var<T>& input) const {
    const auto& s = input.shape();
    if (s.size() != 4 || s[1] != cfg_.input_channels || s[2] != cfg_.height || s[3] != cfg_.width)
      throw ShapeError("encoder-decoder: input " + ad::shape_str(s) + " does not match the configuration");
    auto& counter = head_ == DenseHead::kIntensity ? forward_counters().intensitynet : forward_counters().depthnet;
    counter.fetch_add(1, std::memory_order_relaxed);

    const auto& w = cfg_.dense_widths;
    std::vector<ad::Var<T>> skips;
    ad::Var<T> x = ad::relu(detail::conv(p, "stem", input));
    skips.push_back(x);
    for (std::size_t st = 1; st < w.size(); ++st) {
      const std::string stage = "enc.stage" + std::to_string(st);
      x = ad::relu(detail::conv(p, stage + ".down", x, 2));
      x = detail::res_block(p, stage + ".res", x);
      skips.push_back(x);
    }
    for (std::size_t st = w.size() - 1; st >= 1; --st) {
      x = ad::relu(detail::conv(p, "dec.up" + std::to_string(st), ad::nearest_upsample2x(x)));
      x = ad::add(x, skips[st - 1]);
    }
    ad::Var<T> out = detail::conv(p, "classifier", x);
    if (head_ == DenseHead::kDepth)
      out = ad::affine(ad::softplus(out), static_cast<T>(cfg_.max_depth / 8.0), static_cast<T>(1e-3));
    return out;
  }

 private:
  NetworkConfig cfg_;
  DenseHead head_;
  ad::ParameterSet<T> params_;
};

template <typename T>
class IntensityNet : public EncoderDecoderNet<T> {
 public:
  explicit IntensityNet(NetworkConfig cfg) : EncoderDecoderNet<T>(std::move(cfg), DenseHead::kIntensity) {}
};

template <typename T>
class DepthNet : public EncoderDecoderNet<T> {
 public:
  explicit DepthNet(NetworkConfig cfg) : EncoderDecoderNet<T>(std::move(cfg), DenseHead::kDepth) {}
};

namespace detail {

inline Eigen::Matrix3d d_rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d r;
  r << 0, 0, 0, 0, -s, -c, 0, c, -s;
  return r;
}

inline Eigen::Matrix3d d_rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d r;
  r << -s, 0, c, 0, 0, 0, -c, 0, -s;
  return r;
}

inline Eigen::Matrix3d d_rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d r;
  r << -s, -c, 0, c, -s, 0, 0, 0, 0;
  return r;
}

}  // namespace detail

/// T_pred = euler_to_se3(pred) * T_init, non-differentiable form.
inline SE3Transform pose_to_tpred(const PosePrediction& pred, const SE3Transform& t_init) {
  return compose(euler_to_se3(pred.as_euler()), t_init);
}

/// Differentiable form. `pred` holds six scalars (shape [6] or [1,6]); the
/// result is the top 3x4 block of T_pred as a [3,4] tape value.
template <typename T>
ad::Var<T> pose_to_tpred(const ad::Var<T>& pred, const SE3Transform& t_init) {
  if (pred.value().size() != 6) throw ShapeError("pose_to_tpred: expected 6 scalars, got " + ad::shape_str(pred.shape()));
  std::array<double, 6> x{};
  for (int i = 0; i < 6; ++i) x[static_cast<std::size_t>(i)] = static_cast<double>(pred.value()[static_cast<std::size_t>(i)]);
  for (double v : x)
    if (!std::isfinite(v)) throw NumericError("pose_to_tpred: non-finite pose prediction");
  const double roll = x[0], pitch = x[1], yaw = x[2];
  const Eigen::Matrix3d rx = rot_x(roll), ry = rot_y(pitch), rz = rot_z(yaw);
  const Eigen::Matrix3d r = rz * ry * rx;
  const Eigen::Matrix3d ri = t_init.rotation();
  const Eigen::Vector3d ti = t_init.translation();

  ad::Tensor<T> out(ad::Shape{3, 4});
  Eigen::Matrix<double, 3, 4> m;
  m.leftCols<3>() = r * ri;
  m.col(3) = r * ti + Eigen::Vector3d(x[3], x[4], x[5]);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) out[static_cast<std::size_t>(i * 4 + j)] = static_cast<T>(m(i, j));

  // dM/d(angle) = [dR Ri | dR ti]
  std::array<Eigen::Matrix<double, 3, 4>, 3> jac;
  const std::array<Eigen::Matrix3d, 3> dr = {rz * ry * detail::d_rot_x(roll), rz * detail::d_rot_y(pitch) * rx,
                                             detail::d_rot_z(yaw) * ry * rx};
  for (std::size_t a = 0; a < 3; ++a) {
    jac[a].leftCols<3>() = dr[a] * ri;
    jac[a].col(3) = dr[a] * ti;
  }
  const std::size_t ip = pred.id();
  return pred.tape().record(
      std::move(out), {pred},
      [ip, jac](ad::Tape<T>& t, const ad::Tensor<T>& g) {
        ad::Tensor<T>& gp = t.grad(ip);
        for (std::size_t a = 0; a < 3; ++a) {
          double acc = 0.0;
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 4; ++j) acc += static_cast<double>(g[static_cast<std::size_t>(i * 4 + j)]) * jac[a](i, j);
          gp[a] += static_cast<T>(acc);
        }
        for (std::size_t k = 0; k < 3; ++k) gp[3 + k] += g[k * 4 + 3];
      },
      "pose_to_tpred");
}

}  // namespace lccal
