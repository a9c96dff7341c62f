// Copyright 2026 The htr Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "htr/error.hpp"

namespace htr {

// Grayscale raster with ink = 1 and background = 0. Files on disk use the
// opposite convention (0 = black ink, 255 = white paper); the inversion
// happens in read_pgm / write_pgm.
struct LineImage {
  std::size_t width = 1;
  std::size_t height = 1;
  std::vector<float> pixels = std::vector<float>(1, 0.0f);  // row-major
  std::optional<double> skew_angle;  // degrees, when known

  static LineImage blank(std::size_t width, std::size_t height) {
    if (width == 0 || height == 0)
      throw ContractError("image extents must be positive");
    LineImage img;
    img.width = width;
    img.height = height;
    img.pixels.assign(width * height, 0.0f);
    return img;
  }

  float at(std::size_t row, std::size_t col) const {
    return pixels[row * width + col];
  }
  float& at(std::size_t row, std::size_t col) {
    return pixels[row * width + col];
  }

  double ink_mass() const {
    double s = 0;
    for (float p : pixels) s += p;
    return s;
  }

  bool operator==(const LineImage& o) const {
    return width == o.width && height == o.height && pixels == o.pixels;
  }
};

namespace detail {

inline void skip_pgm_space(std::istream& in) {
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string discard;
      std::getline(in, discard);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

}  // namespace detail

// Binary PGM (P5), maxval up to 65535.
inline LineImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5") throw IoError(path.string() + ": not a binary PGM (P5)");
  std::size_t w = 0, h = 0, maxval = 0;
  detail::skip_pgm_space(in);
  in >> w;
  detail::skip_pgm_space(in);
  in >> h;
  detail::skip_pgm_space(in);
  in >> maxval;
  if (!in || w == 0 || h == 0 || maxval == 0 || maxval > 65535)
    throw IoError(path.string() + ": malformed PGM header");
  in.get();  // single whitespace after maxval
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(w * h * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw IoError(path.string() + ": truncated PGM data");
  LineImage img = LineImage::blank(w, h);
  for (std::size_t i = 0; i < w * h; ++i) {
    const double v = bytes_per == 1
                         ? raw[i]
                         : static_cast<double>((raw[2 * i] << 8) | raw[2 * i + 1]);
    img.pixels[i] = static_cast<float>(1.0 - v / static_cast<double>(maxval));
  }
  return img;
}

inline std::vector<unsigned char> encode_pgm(const LineImage& img) {
  std::ostringstream header;
  header << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  const std::string h = header.str();
  std::vector<unsigned char> out(h.begin(), h.end());
  out.reserve(h.size() + img.pixels.size());
  for (float p : img.pixels) {
    const float ink = std::clamp(p, 0.0f, 1.0f);
    out.push_back(static_cast<unsigned char>(std::lround(255.0f * (1.0f - ink))));
  }
  return out;
}

inline void write_pgm(const LineImage& img, const std::filesystem::path& path) {
  const auto bytes = encode_pgm(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing image " + path.string());
}

// Bilinear sample at continuous pixel coordinates (x = column, y = row, pixel
// centers on integers). Points outside the raster read as background.
inline float sample_bilinear(const LineImage& img, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
  const double ax = x - fx, ay = y - fy;
  auto px = [&](long r, long c) -> double {
    if (r < 0 || c < 0 || r >= static_cast<long>(img.height) ||
        c >= static_cast<long>(img.width))
      return 0.0;
    return img.pixels[static_cast<std::size_t>(r) * img.width +
                      static_cast<std::size_t>(c)];
  };
  double v = 0;
  if ((1 - ax) * (1 - ay) > 0) v += (1 - ax) * (1 - ay) * px(y0, x0);
  if (ax * (1 - ay) > 0) v += ax * (1 - ay) * px(y0, x0 + 1);
  if ((1 - ax) * ay > 0) v += (1 - ax) * ay * px(y0 + 1, x0);
  if (ax * ay > 0) v += ax * ay * px(y0 + 1, x0 + 1);
  return static_cast<float>(v);
}

// Rotates content counterclockwise (as displayed) by `degrees` about the
// image center. The canvas grows to hold the rotated content; exposed areas
// are background.
inline LineImage rotate(const LineImage& img, double degrees) {
  const double th = degrees * 3.14159265358979323846 / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double w = static_cast<double>(img.width), h = static_cast<double>(img.height);
  const auto nw = static_cast<std::size_t>(
      std::ceil(std::abs(w * c) + std::abs(h * s) - 1e-9));
  const auto nh = static_cast<std::size_t>(
      std::ceil(std::abs(w * s) + std::abs(h * c) - 1e-9));
  LineImage out = LineImage::blank(std::max<std::size_t>(nw, 1),
                                   std::max<std::size_t>(nh, 1));
  const double cxs = (w - 1) / 2.0, cys = (h - 1) / 2.0;
  const double cxo = (static_cast<double>(out.width) - 1) / 2.0;
  const double cyo = (static_cast<double>(out.height) - 1) / 2.0;
  for (std::size_t r = 0; r < out.height; ++r) {
    for (std::size_t col = 0; col < out.width; ++col) {
      const double dx = static_cast<double>(col) - cxo;
      const double dy = static_cast<double>(r) - cyo;
      const double sx = dx * c - dy * s + cxs;
      const double sy = dx * s + dy * c + cys;
      out.at(r, col) = sample_bilinear(img, sx, sy);
    }
  }
  out.skew_angle = img.skew_angle;
  return out;
}

// Horizontal shear x' = x + slope * (y - center); canvas widened to fit.
inline LineImage shear(const LineImage& img, double slope) {
  const double h = static_cast<double>(img.height);
  const double extra = std::abs(slope) * (h - 1);
  const auto nw = img.width + static_cast<std::size_t>(std::ceil(extra));
  LineImage out = LineImage::blank(nw, img.height);
  const double cy = (h - 1) / 2.0;
  const double offset = extra / 2.0;
  for (std::size_t r = 0; r < img.height; ++r) {
    const double shift = slope * (static_cast<double>(r) - cy) + offset;
    for (std::size_t c = 0; c < nw; ++c)
      out.at(r, c) = sample_bilinear(img, static_cast<double>(c) - shift,
                                     static_cast<double>(r));
  }
  return out;
}

}  // namespace htr
