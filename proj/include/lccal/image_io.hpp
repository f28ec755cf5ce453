#pragma once

// Binary PPM (P6) read/write, PNG read (libpng), and the projection overlay.

#include <png.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lccal/errors.hpp"
#include "lccal/pseudo_image.hpp"
#include "lccal/se3.hpp"

namespace lccal {

inline void write_ppm(std::ostream& os, const RgbImage& img) {
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
}

inline void write_ppm_file(const std::string& path, const RgbImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_ppm(os, img);
  if (!os) throw IoError("failed writing '" + path + "'");
}

inline RgbImage read_ppm(std::istream& is, const std::string& source) {
  auto token = [&]() {
    std::string tok;
    char c;
    while (is.get(c)) {
      if (c == '#') {
        std::string rest;
        std::getline(is, rest);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) break;
        continue;
      }
      tok += c;
    }
    return tok;
  };
  if (token() != "P6") throw ParseError(source + ": not a binary PPM (P6)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw ParseError(source + ": malformed PPM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw ParseError(source + ": unsupported PPM size or depth");
  RgbImage img(w, h);
  if (!is.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size())))
    throw ParseError(source + ": truncated PPM payload");
  return img;
}

inline RgbImage read_ppm_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return read_ppm(is, path);
}

inline RgbImage read_png_file(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IoError("cannot read PNG '" + path + "': " + image.message);
  image.format = PNG_FORMAT_RGB;
  RgbImage img(static_cast<int>(image.width), static_cast<int>(image.height));
  if (!png_image_finish_read(&image, nullptr, img.data.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode PNG '" + path + "': " + image.message);
  }
  return img;
}

/// Reads .png or .ppm by extension.
inline RgbImage read_image_file(const std::string& path) {
  auto ends_with = [&](const char* ext) {
    const std::string e(ext);
    return path.size() >= e.size() && path.compare(path.size() - e.size(), e.size(), e) == 0;
  };
  if (ends_with(".png")) return read_png_file(path);
  return read_ppm_file(path);
}

/// 256-entry jet colormap: index 0 is dark blue, 255 dark red. Channel
/// value = clamp(1.5 - |4x - k|, 0, 1) with x = i/255 and k = 3 (red),
/// 2 (green), 1 (blue), rounded to 8 bits.
inline const std::array<std::array<std::uint8_t, 3>, 256>& intensity_colormap() {
  static const auto table = [] {
    std::array<std::array<std::uint8_t, 3>, 256> t{};
    for (int i = 0; i < 256; ++i) {
      const double x = i / 255.0;
      const double ks[3] = {3.0, 2.0, 1.0};
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(1.5 - std::abs(4.0 * x - ks[c]), 0.0, 1.0);
        t[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
    return t;
  }();
  return table;
}

/// Draws every point valid under `extrinsic` as a `splat` x `splat` square
/// colored by intensity, in cloud order.
inline RgbImage render_overlay(const RgbImage& image, const PointCloud& cloud, const SE3Transform& extrinsic,
                               const CameraIntrinsics& k, int splat = 1) {
  if (splat < 1) throw InvalidArgument("splat size must be >= 1");
  RgbImage out = image;
  const auto& cmap = intensity_colormap();
  const auto proj = project_points(cloud, extrinsic, k);
  for (std::size_t i = 0; i < proj.size(); ++i) {
    if (!proj[i].valid) continue;
    const int idx = static_cast<int>(std::clamp(std::lround(cloud.points[i].intensity), 0L, 255L));
    const auto& color = cmap[static_cast<std::size_t>(idx)];
    const int px = static_cast<int>(proj[i].u), py = static_cast<int>(proj[i].v);
    for (int dy = 0; dy < splat; ++dy)
      for (int dx = 0; dx < splat; ++dx) {
        const int x = px - splat / 2 + dx, y = py - splat / 2 + dy;
        if (x < 0 || y < 0 || x >= out.width || y >= out.height) continue;
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = color[static_cast<std::size_t>(c)];
      }
  }
  return out;
}

}  // namespace lccal
