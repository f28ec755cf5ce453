#pragma once

// Dense ops recorded on a Tape. No broadcasting except the bias terms of
// linear and conv2d.

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "lccal/autodiff.hpp"

namespace lccal::ad {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape("add", a.shape(), b.shape());
  Tensor<T> out = a.value();
  detail::accumulate(out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib](Tape<T>& t, const Tensor<T>& g) {
        if (t.requires_grad(ia)) detail::accumulate(t.grad(ia), g);
        if (t.requires_grad(ib)) detail::accumulate(t.grad(ib), g);
      },
      "add");
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape("sub", a.shape(), b.shape());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib](Tape<T>& t, const Tensor<T>& g) {
        if (t.requires_grad(ia)) detail::accumulate(t.grad(ia), g);
        if (t.requires_grad(ib)) {
          Tensor<T>& gb = t.grad(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      },
      "sub");
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape("mul", a.shape(), b.shape());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& va = t.value(ia);
        const Tensor<T>& vb = t.value(ib);
        if (t.requires_grad(ia)) {
          Tensor<T>& ga = t.grad(ia);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
        }
        if (t.requires_grad(ib)) {
          Tensor<T>& gb = t.grad(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
        }
      },
      "mul");
}

template <typename T>
Var<T> scalar_mul(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= s;
  const std::size_t ia = a.id();
  return a.tape().record(
      std::move(out), {a},
      [ia, s](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& ga = t.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
      },
      "scalar_mul");
}

/// scale * x + shift, elementwise.
template <typename T>
Var<T> affine(const Var<T>& a, T scale, T shift) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = scale * v + shift;
  const std::size_t ia = a.id();
  return a.tape().record(
      std::move(out), {a},
      [ia, scale](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& ga = t.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += scale * g[i];
      },
      "affine");
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
  const std::size_t ia = a.id();
  return a.tape().record(
      std::move(out), {a},
      [ia](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& x = t.value(ia);
        Tensor<T>& ga = t.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] > T(0)) ga[i] += g[i];
      },
      "relu");
}

/// log(1 + exp(x)), evaluated without overflow.
template <typename T>
Var<T> softplus(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  const std::size_t ia = a.id();
  return a.tape().record(
      std::move(out), {a},
      [ia](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& x = t.value(ia);
        Tensor<T>& ga = t.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (T(1) + std::exp(-x[i]));
      },
      "softplus");
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record(
      std::move(out), {a}, [ia](Tape<T>& t, const Tensor<T>& g) { detail::accumulate(t.grad(ia), g); },
      "reshape");
}

/// Sum of all elements, accumulated in double.
template <typename T>
Var<T> sum(const Var<T>& a) {
  double acc = 0.0;
  for (T v : a.value().values()) acc += static_cast<double>(v);
  const std::size_t ia = a.id();
  return a.tape().record(
      Tensor<T>::scalar(static_cast<T>(acc)), {a},
      [ia](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& ga = t.grad(ia);
        const T s = g[0];
        for (auto& v : ga.storage()) v += s;
      },
      "sum");
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  double acc = 0.0;
  for (T v : a.value().values()) acc += static_cast<double>(v);
  const double n = static_cast<double>(a.value().size());
  const std::size_t ia = a.id();
  return a.tape().record(
      Tensor<T>::scalar(static_cast<T>(acc / n)), {a},
      [ia, n](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& ga = t.grad(ia);
        const T s = static_cast<T>(static_cast<double>(g[0]) / n);
        for (auto& v : ga.storage()) v += s;
      },
      "mean");
}

/// Mean over one axis; the axis is removed from the shape.
template <typename T>
Var<T> mean_dim(const Var<T>& a, int axis) {
  const Shape& s = a.shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw ShapeError("mean_dim: axis out of range for shape " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
  const std::size_t n = static_cast<std::size_t>(s[static_cast<std::size_t>(axis)]);
  Shape os;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (static_cast<int>(i) != axis) os.push_back(s[i]);
  Tensor<T> out(os);
  std::vector<double> acc(inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) acc[i] += static_cast<double>(a.value()[(o * n + k) * inner + i]);
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = static_cast<T>(acc[i] / static_cast<double>(n));
  }
  const std::size_t ia = a.id();
  return a.tape().record(
      std::move(out), {a},
      [ia, outer, inner, n](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& ga = t.grad(ia);
        const T scale = T(1) / static_cast<T>(n);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t k = 0; k < n; ++k)
            for (std::size_t i = 0; i < inner; ++i) ga[(o * n + k) * inner + i] += g[o * inner + i] * scale;
      },
      "mean_dim");
}

/// [M,K] x [K,N] -> [M,N], or batched [B,M,K] x [B,K,N] -> [B,M,N].
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool batched = sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0];
  const bool plain = sa.size() == 2 && sb.size() == 2;
  if ((!batched && !plain) || sa[sa.size() - 1] != sb[sb.size() - 2])
    throw ShapeError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  const int batch = batched ? sa[0] : 1;
  const int m = sa[sa.size() - 2], k = sa[sa.size() - 1], n = sb[sb.size() - 1];
  Tensor<T> out(batched ? Shape{batch, m, n} : Shape{m, n});
  for (int bi = 0; bi < batch; ++bi) {
    detail::CMapMat<T> ma(a.value().data() + static_cast<std::size_t>(bi) * m * k, m, k);
    detail::CMapMat<T> mb(b.value().data() + static_cast<std::size_t>(bi) * k * n, k, n);
    detail::MapMat<T> mo(out.data() + static_cast<std::size_t>(bi) * m * n, m, n);
    mo.noalias() = ma * mb;
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib, batch, m, k, n](Tape<T>& t, const Tensor<T>& g) {
        const bool need_a = t.requires_grad(ia), need_b = t.requires_grad(ib);
        for (int bi = 0; bi < batch; ++bi) {
          detail::CMapMat<T> mg(g.data() + static_cast<std::size_t>(bi) * m * n, m, n);
          if (need_a) {
            detail::CMapMat<T> mb(t.value(ib).data() + static_cast<std::size_t>(bi) * k * n, k, n);
            detail::MapMat<T> ga(t.grad(ia).data() + static_cast<std::size_t>(bi) * m * k, m, k);
            ga.noalias() += mg * mb.transpose();
          }
          if (need_b) {
            detail::CMapMat<T> ma(t.value(ia).data() + static_cast<std::size_t>(bi) * m * k, m, k);
            detail::MapMat<T> gb(t.grad(ib).data() + static_cast<std::size_t>(bi) * k * n, k, n);
            gb.noalias() += ma.transpose() * mg;
          }
        }
      },
      "matmul");
}

/// Swaps the last two axes of a rank >= 2 tensor.
template <typename T>
Var<T> transpose_last_two(const Var<T>& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw ShapeError("transpose_last_two: rank must be >= 2, got " + shape_str(s));
  const int r = s[s.size() - 2], c = s[s.size() - 1];
  const std::size_t batch = a.value().size() / (static_cast<std::size_t>(r) * c);
  Shape os = s;
  std::swap(os[os.size() - 1], os[os.size() - 2]);
  Tensor<T> out(os);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    detail::CMapMat<T> src(a.value().data() + bi * r * c, r, c);
    detail::MapMat<T> dst(out.data() + bi * r * c, c, r);
    dst = src.transpose();
  }
  const std::size_t ia = a.id();
  return a.tape().record(
      std::move(out), {a},
      [ia, batch, r, c](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& ga = t.grad(ia);
        for (std::size_t bi = 0; bi < batch; ++bi) {
          detail::CMapMat<T> src(g.data() + bi * r * c, c, r);
          detail::MapMat<T> dst(ga.data() + bi * r * c, r, c);
          dst += src.transpose();
        }
      },
      "transpose_last_two");
}

/// x [..., in] * W^T + b, with W [out, in] and optional b [out].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>* bias = nullptr) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sx.empty() || sw.size() != 2 || sx.back() != sw[1])
    throw ShapeError("linear: incompatible shapes " + shape_str(sx) + " and " + shape_str(sw));
  if (bias && (bias->shape().size() != 1 || bias->shape()[0] != sw[0]))
    throw ShapeError("linear: bias shape " + shape_str(bias->shape()) + " does not match weight " + shape_str(sw));
  const int in = sw[1], outd = sw[0];
  const int rows = static_cast<int>(x.value().size() / static_cast<std::size_t>(in));
  Shape os = sx;
  os.back() = outd;
  Tensor<T> out(os);
  detail::CMapMat<T> mx(x.value().data(), rows, in);
  detail::CMapMat<T> mw(weight.value().data(), outd, in);
  detail::MapMat<T> mo(out.data(), rows, outd);
  mo.noalias() = mx * mw.transpose();
  if (bias) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> mb(bias->value().data(), outd);
    mo.rowwise() += mb;
  }
  const std::size_t ix = x.id(), iw = weight.id();
  const std::size_t ibias = bias ? bias->id() : static_cast<std::size_t>(-1);
  bool needs = x.requires_grad() || weight.requires_grad() || (bias && bias->requires_grad());
  return x.tape().record_if(
      std::move(out), needs,
      [ix, iw, ibias, rows, in, outd](Tape<T>& t, const Tensor<T>& g) {
        detail::CMapMat<T> mg(g.data(), rows, outd);
        if (t.requires_grad(ix)) {
          detail::CMapMat<T> mw(t.value(iw).data(), outd, in);
          detail::MapMat<T> gx(t.grad(ix).data(), rows, in);
          gx.noalias() += mg * mw;
        }
        if (t.requires_grad(iw)) {
          detail::CMapMat<T> mx(t.value(ix).data(), rows, in);
          detail::MapMat<T> gw(t.grad(iw).data(), outd, in);
          gw.noalias() += mg.transpose() * mx;
        }
        if (ibias != static_cast<std::size_t>(-1) && t.requires_grad(ibias)) {
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(t.grad(ibias).data(), outd);
          gb += mg.colwise().sum();
        }
      },
      "linear");
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  return linear(x, weight, &bias);
}

template <typename T>
Var<T> softmax_last_dim(const Var<T>& a) {
  const int n = a.shape().empty() ? 1 : a.shape().back();
  const std::size_t rows = a.value().size() / static_cast<std::size_t>(n);
  Tensor<T> out = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * n;
    T mx = row[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
      row[i] = std::exp(row[i] - mx);
      z += static_cast<double>(row[i]);
    }
    for (int i = 0; i < n; ++i) row[i] = static_cast<T>(static_cast<double>(row[i]) / z);
  }
  const std::size_t ia = a.id();
  auto y = std::make_shared<const Tensor<T>>(out);
  return a.tape().record(
      std::move(out), {a},
      [ia, y, rows, n](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& ga = t.grad(ia);
        const Tensor<T>& yv = *y;
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (int i = 0; i < n; ++i) dot += static_cast<double>(g[r * n + i]) * yv[r * n + i];
          for (int i = 0; i < n; ++i)
            ga[r * n + i] += yv[r * n + i] * static_cast<T>(static_cast<double>(g[r * n + i]) - dot);
        }
      },
      "softmax_last_dim");
}

/// (x - mean) / sqrt(var + eps) over the last dimension, no affine terms.
template <typename T>
Var<T> layer_norm_last_dim(const Var<T>& a, double eps = 1e-5) {
  const int n = a.shape().empty() ? 1 : a.shape().back();
  const std::size_t rows = a.value().size() / static_cast<std::size_t>(n);
  Tensor<T> out = a.value();
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * n;
    double mean = 0.0, var = 0.0;
    for (int i = 0; i < n; ++i) mean += static_cast<double>(row[i]);
    mean /= n;
    for (int i = 0; i < n; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int i = 0; i < n; ++i) row[i] = static_cast<T>((row[i] - mean) * is);
  }
  const std::size_t ia = a.id();
  auto y = std::make_shared<const Tensor<T>>(out);
  return a.tape().record(
      std::move(out), {a},
      [ia, y, inv_std, rows, n](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& ga = t.grad(ia);
        const Tensor<T>& yv = *y;
        for (std::size_t r = 0; r < rows; ++r) {
          double gm = 0.0, gy = 0.0;
          for (int i = 0; i < n; ++i) {
            gm += static_cast<double>(g[r * n + i]);
            gy += static_cast<double>(g[r * n + i]) * yv[r * n + i];
          }
          gm /= n;
          gy /= n;
          for (int i = 0; i < n; ++i)
            ga[r * n + i] += static_cast<T>((*inv_std)[r] * (g[r * n + i] - gm - yv[r * n + i] * gy));
        }
      },
      "layer_norm_last_dim");
}

/// Concatenation along `axis`; all other dimensions must agree.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis < 0) axis += static_cast<int>(s0.size());
  if (axis < 0 || axis >= static_cast<int>(s0.size())) throw ShapeError("concat: axis out of range for " + shape_str(s0));
  const auto ax = static_cast<std::size_t>(axis);
  Shape os = s0;
  os[ax] = 0;
  bool needs = false;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = s0;
    if (a.size() != b.size()) throw ShapeError("concat: rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    a[ax] = b[ax] = 0;
    if (a != b) throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(s0));
    os[ax] += p.shape()[ax];
    needs = needs || p.requires_grad();
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= static_cast<std::size_t>(s0[i]);
  for (std::size_t i = ax + 1; i < s0.size(); ++i) inner *= static_cast<std::size_t>(s0[i]);
  Tensor<T> out(os);
  const std::size_t out_stride = static_cast<std::size_t>(os[ax]) * inner;
  std::vector<std::size_t> ids, widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = static_cast<std::size_t>(p.shape()[ax]) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.value().data() + o * w, w, out.data() + o * out_stride + offset);
    ids.push_back(p.id());
    widths.push_back(w);
    offset += w;
  }
  return parts[0].tape().record_if(
      std::move(out), needs,
      [ids, widths, outer, out_stride](Tape<T>& t, const Tensor<T>& g) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.requires_grad(ids[k])) {
            Tensor<T>& gp = t.grad(ids[k]);
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < widths[k]; ++i) gp[o * widths[k] + i] += g[o * out_stride + off + i];
          }
          off += widths[k];
        }
      },
      "concat");
}

/// [B,C,H,W] -> [B,C,2H,2W], each value copied into a 2x2 block.
template <typename T>
Var<T> nearest_upsample2x(const Var<T>& a) {
  const Shape& s = a.shape();
  if (s.size() != 4) throw ShapeError("nearest_upsample2x: expected [B,C,H,W], got " + shape_str(s));
  const int planes = s[0] * s[1], h = s[2], w = s[3];
  Tensor<T> out(Shape{s[0], s[1], 2 * h, 2 * w});
  for (int p = 0; p < planes; ++p)
    for (int y = 0; y < 2 * h; ++y)
      for (int x = 0; x < 2 * w; ++x)
        out[(static_cast<std::size_t>(p) * 2 * h + y) * 2 * w + x] =
            a.value()[(static_cast<std::size_t>(p) * h + y / 2) * w + x / 2];
  const std::size_t ia = a.id();
  return a.tape().record(
      std::move(out), {a},
      [ia, planes, h, w](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& ga = t.grad(ia);
        for (int p = 0; p < planes; ++p)
          for (int y = 0; y < 2 * h; ++y)
            for (int x = 0; x < 2 * w; ++x)
              ga[(static_cast<std::size_t>(p) * h + y / 2) * w + x / 2] +=
                  g[(static_cast<std::size_t>(p) * 2 * h + y) * 2 * w + x];
      },
      "nearest_upsample2x");
}

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
};

namespace detail {

// cols is [Cin*K*K, Ho*Wo] for one image.
template <typename T>
void im2col(const T* x, int cin, int h, int w, int k, int stride, int pad, int ho, int wo, T* cols) {
  for (int c = 0; c < cin; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill_n(dst, wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, int cin, int h, int w, int k, int stride, int pad, int ho, int wo, T* x) {
  for (int c = 0; c < cin; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * wo;
          T* dst = x + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace detail

/// x [B,Cin,H,W], weight [Cout,Cin,K,K], optional bias [Cout].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, Conv2dOptions opt = {}) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sx.size() != 4 || sw.size() != 4 || sw[1] != sx[1] || sw[2] != sw[3])
    throw ShapeError("conv2d: incompatible shapes " + shape_str(sx) + " and " + shape_str(sw));
  if (opt.stride < 1 || opt.padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  if (bias && (bias->shape().size() != 1 || bias->shape()[0] != sw[0]))
    throw ShapeError("conv2d: bias shape " + shape_str(bias->shape()) + " does not match weight " + shape_str(sw));
  const int batch = sx[0], cin = sx[1], h = sx[2], w = sx[3];
  const int cout = sw[0], k = sw[2];
  const int ho = (h + 2 * opt.padding - k) / opt.stride + 1;
  const int wo = (w + 2 * opt.padding - k) / opt.stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: kernel larger than padded input " + shape_str(sx));
  const int patch = cin * k * k, npix = ho * wo;
  const bool pointwise = k == 1 && opt.stride == 1 && opt.padding == 0;

  Tensor<T> out(Shape{batch, cout, ho, wo});
  // Columns are kept for the backward pass.
  auto cols = std::make_shared<AlignedVector<T>>(pointwise ? 0 : static_cast<std::size_t>(batch) * patch * npix);
  detail::CMapMat<T> mw(weight.value().data(), cout, patch);
  for (int b = 0; b < batch; ++b) {
    const T* xb = x.value().data() + static_cast<std::size_t>(b) * cin * h * w;
    const T* cb = xb;
    if (!pointwise) {
      T* dst = cols->data() + static_cast<std::size_t>(b) * patch * npix;
      detail::im2col(xb, cin, h, w, k, opt.stride, opt.padding, ho, wo, dst);
      cb = dst;
    }
    detail::CMapMat<T> mc(cb, patch, npix);
    detail::MapMat<T> mo(out.data() + static_cast<std::size_t>(b) * cout * npix, cout, npix);
    mo.noalias() = mw * mc;
    if (bias) {
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> mb(bias->value().data(), cout);
      mo.colwise() += mb;
    }
  }
  const std::size_t ix = x.id(), iw = weight.id();
  const std::size_t ibias = bias ? bias->id() : static_cast<std::size_t>(-1);
  const bool needs = x.requires_grad() || weight.requires_grad() || (bias && bias->requires_grad());
  return x.tape().record_if(
      std::move(out), needs,
      [=](Tape<T>& t, const Tensor<T>& g) {
        const bool need_x = t.requires_grad(ix), need_w = t.requires_grad(iw);
        const bool need_b = ibias != static_cast<std::size_t>(-1) && t.requires_grad(ibias);
        detail::CMapMat<T> wmat(t.value(iw).data(), cout, patch);
        AlignedVector<T> dcols(need_x && !pointwise ? static_cast<std::size_t>(patch) * npix : 0);
        for (int b = 0; b < batch; ++b) {
          detail::CMapMat<T> mg(g.data() + static_cast<std::size_t>(b) * cout * npix, cout, npix);
          const T* cb = pointwise ? t.value(ix).data() + static_cast<std::size_t>(b) * cin * h * w
                                  : cols->data() + static_cast<std::size_t>(b) * patch * npix;
          if (need_w) {
            detail::CMapMat<T> mc(cb, patch, npix);
            detail::MapMat<T> gw(t.grad(iw).data(), cout, patch);
            gw.noalias() += mg * mc.transpose();
          }
          if (need_b) {
            Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(t.grad(ibias).data(), cout);
            gb += mg.rowwise().sum();
          }
          if (need_x) {
            T* gx = t.grad(ix).data() + static_cast<std::size_t>(b) * cin * h * w;
            if (pointwise) {
              detail::MapMat<T> mgx(gx, cin, npix);
              mgx.noalias() += wmat.transpose() * mg;
            } else {
              detail::MapMat<T> md(dcols.data(), patch, npix);
              md.noalias() = wmat.transpose() * mg;
              detail::col2im(dcols.data(), cin, h, w, k, opt.stride, opt.padding, ho, wo, gx);
            }
          }
        }
      },
      "conv2d");
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Conv2dOptions opt = {}) {
  return conv2d(x, weight, &bias, opt);
}

}  // namespace lccal::ad
