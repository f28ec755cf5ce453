#pragma once

// Differentiable bilinear sampling. Pixel (row i, col j) covers
// [j, j+1) x [i, i+1); its value sits at the center (j + 0.5, i + 0.5).

#include <algorithm>
#include <cmath>

#include "lccal/ops.hpp"

namespace lccal::ad {

namespace detail {

struct BilinearTap {
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  double ax = 0.0, ay = 0.0;
  bool clamped_x = false, clamped_y = false;
};

// One axis: continuous pixel coordinate -> two taps and a weight. Clamping
// pins the coordinate to the outermost centers.
inline void axis_taps(double coord, int size, int& i0, int& i1, double& a, bool& clamped) {
  double p = coord - 0.5;
  clamped = false;
  if (p < 0.0) {
    p = 0.0;
    clamped = true;
  } else if (p > size - 1) {
    p = size - 1;
    clamped = true;
  }
  if (size == 1) {
    i0 = i1 = 0;
    a = 0.0;
    return;
  }
  i0 = std::min(static_cast<int>(std::floor(p)), size - 2);
  i1 = i0 + 1;
  a = p - i0;
}

inline BilinearTap bilinear_tap(double u, double v, int w, int h) {
  BilinearTap t;
  axis_taps(u, w, t.x0, t.x1, t.ax, t.clamped_x);
  axis_taps(v, h, t.y0, t.y1, t.ay, t.clamped_y);
  return t;
}

}  // namespace detail

/// image [C,H,W] (or [1,C,H,W]); coords [N,2] holding (u, v). Returns [N,C].
/// Differentiable w.r.t. both; the coordinate gradient is zero on any axis
/// where clamping is active.
template <typename T>
Var<T> bilinear_sample(const Var<T>& image, const Var<T>& coords) {
  const Shape& si = image.shape();
  const bool batched = si.size() == 4 && si[0] == 1;
  if (si.size() != 3 && !batched) throw ShapeError("bilinear_sample: expected image [C,H,W], got " + shape_str(si));
  const Shape& sc = coords.shape();
  if (sc.size() != 2 || sc[1] != 2) throw ShapeError("bilinear_sample: expected coords [N,2], got " + shape_str(sc));
  const std::size_t off = batched ? 1 : 0;
  const int c = si[off], h = si[off + 1], w = si[off + 2];
  const int n = sc[0];
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor<T> out(Shape{n, c});
  const T* img = image.value().data();
  const T* cd = coords.value().data();
  for (int p = 0; p < n; ++p) {
    const auto tap = detail::bilinear_tap(static_cast<double>(cd[2 * p]), static_cast<double>(cd[2 * p + 1]), w, h);
    const double w00 = (1 - tap.ax) * (1 - tap.ay), w01 = tap.ax * (1 - tap.ay);
    const double w10 = (1 - tap.ax) * tap.ay, w11 = tap.ax * tap.ay;
    for (int ch = 0; ch < c; ++ch) {
      const T* pl = img + ch * plane;
      const double val = w00 * pl[tap.y0 * w + tap.x0] + w01 * pl[tap.y0 * w + tap.x1] +
                         w10 * pl[tap.y1 * w + tap.x0] + w11 * pl[tap.y1 * w + tap.x1];
      out[static_cast<std::size_t>(p) * c + ch] = static_cast<T>(val);
    }
  }
  const std::size_t ii = image.id(), ic = coords.id();
  return image.tape().record(
      std::move(out), {image, coords},
      [ii, ic, n, c, h, w, plane](Tape<T>& t, const Tensor<T>& g) {
        const bool need_img = t.requires_grad(ii), need_xy = t.requires_grad(ic);
        const T* img = t.value(ii).data();
        const T* cd = t.value(ic).data();
        T* gi = need_img ? t.grad(ii).data() : nullptr;
        T* gc = need_xy ? t.grad(ic).data() : nullptr;
        for (int p = 0; p < n; ++p) {
          const auto tap =
              detail::bilinear_tap(static_cast<double>(cd[2 * p]), static_cast<double>(cd[2 * p + 1]), w, h);
          const double w00 = (1 - tap.ax) * (1 - tap.ay), w01 = tap.ax * (1 - tap.ay);
          const double w10 = (1 - tap.ax) * tap.ay, w11 = tap.ax * tap.ay;
          double du = 0.0, dv = 0.0;
          for (int ch = 0; ch < c; ++ch) {
            const double go = g[static_cast<std::size_t>(p) * c + ch];
            if (go == 0.0) continue;
            const std::size_t base = ch * plane;
            if (gi) {
              gi[base + tap.y0 * w + tap.x0] += static_cast<T>(go * w00);
              gi[base + tap.y0 * w + tap.x1] += static_cast<T>(go * w01);
              gi[base + tap.y1 * w + tap.x0] += static_cast<T>(go * w10);
              gi[base + tap.y1 * w + tap.x1] += static_cast<T>(go * w11);
            }
            if (gc) {
              const T* pl = img + base;
              const double v00 = pl[tap.y0 * w + tap.x0], v01 = pl[tap.y0 * w + tap.x1];
              const double v10 = pl[tap.y1 * w + tap.x0], v11 = pl[tap.y1 * w + tap.x1];
              du += go * ((1 - tap.ay) * (v01 - v00) + tap.ay * (v11 - v10));
              dv += go * ((1 - tap.ax) * (v10 - v00) + tap.ax * (v11 - v01));
            }
          }
          if (gc) {
            if (!tap.clamped_x && tap.x0 != tap.x1) gc[2 * p] += static_cast<T>(du);
            if (!tap.clamped_y && tap.y0 != tap.y1) gc[2 * p + 1] += static_cast<T>(dv);
          }
        }
      },
      "bilinear_sample");
}

}  // namespace lccal::ad
