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
#include <optional>
#include <span>
#include <vector>

#include "htr/error.hpp"
#include "htr/image.hpp"

namespace htr {

struct FrontendSpec {
  std::size_t height = 64;       // normalized line height = patch height
  std::size_t patch_width = 12;
  double ink_threshold = 0.5;
  bool deskew = true;
  // When nonzero, every batch is padded to this many pixels of width (the
  // fixed 2400-pixel input length); otherwise to the longest line in the
  // batch.
  std::size_t fixed_width = 0;
  double max_skew_degrees = 15.0;
  double skew_step_degrees = 0.5;

  std::size_t patch_dim() const { return height * patch_width; }
};

// Projection-profile skew estimate: the angle in [-max, +max] (grid of
// `step`) that maximizes the energy (sum of squares) of the ink profile taken
// perpendicular to that direction. Positive = text rises to the right.
inline double estimate_skew(const LineImage& img, double max_degrees = 15.0,
                            double step_degrees = 0.5) {
  struct Ink {
    double x, y, v;
  };
  std::vector<Ink> ink;
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c)
      if (img.at(r, c) > 0.0f)
        ink.push_back({static_cast<double>(c), static_cast<double>(r), img.at(r, c)});
  if (ink.empty()) return 0.0;
  const int steps = static_cast<int>(std::lround(max_degrees / step_degrees));
  const double span = static_cast<double>(img.width + img.height);
  const auto bins = static_cast<std::size_t>(2 * span + 3);
  std::vector<double> profile(bins);
  double best_angle = 0.0, best_energy = -1.0;
  // Visit 0 first, then +-step, +-2step, ...: ties resolve toward 0.
  for (int k = 0; k <= 2 * steps; ++k) {
    const int idx = (k % 2 == 1) ? (k + 1) / 2 : -(k / 2);
    const double a = idx * step_degrees;
    const double th = a * 3.14159265358979323846 / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    std::fill(profile.begin(), profile.end(), 0.0);
    for (const auto& p : ink) {
      // Constant along a line rising at angle a (rows grow downward).
      const double coord = p.y * c + p.x * s + span + 1;
      const double f = std::floor(coord);
      const double frac = coord - f;
      const auto b = static_cast<std::size_t>(f);
      profile[b] += p.v * (1 - frac);
      profile[b + 1] += p.v * frac;
    }
    double energy = 0;
    for (double v : profile) energy += v * v;
    if (energy > best_energy * (1 + 1e-12)) {
      best_energy = energy;
      best_angle = a;
    }
  }
  return best_angle;
}

// Rotates the line by minus its estimated skew. Blank or unskewed images are
// returned unchanged with skew 0 recorded.
inline LineImage deskew(const LineImage& img, double max_degrees = 15.0,
                        double step_degrees = 0.5) {
  const double angle = estimate_skew(img, max_degrees, step_degrees);
  if (angle == 0.0) {
    LineImage out = img;
    out.skew_angle = 0.0;
    return out;
  }
  LineImage out = rotate(img, -angle);
  out.skew_angle = angle;
  return out;
}

// Crops to the bounding box of pixels above the threshold. A blank image
// becomes a single background pixel.
inline LineImage trim_whitespace(const LineImage& img, double ink_threshold = 0.5) {
  if (!(ink_threshold > 0.0 && ink_threshold < 1.0))
    throw ContractError("ink_threshold must lie in (0, 1)");
  std::size_t top = img.height, bottom = 0, left = img.width, right = 0;
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c)
      if (img.at(r, c) > ink_threshold) {
        top = std::min(top, r);
        bottom = std::max(bottom, r);
        left = std::min(left, c);
        right = std::max(right, c);
      }
  if (top == img.height) {
    LineImage out = LineImage::blank(1, 1);
    out.skew_angle = img.skew_angle;
    return out;
  }
  LineImage out = LineImage::blank(right - left + 1, bottom - top + 1);
  for (std::size_t r = top; r <= bottom; ++r)
    for (std::size_t c = left; c <= right; ++c)
      out.at(r - top, c - left) = img.at(r, c);
  out.skew_angle = img.skew_angle;
  return out;
}

// Bilinear resize to target_h rows, width round(w * target_h / h) (min 1).
inline LineImage normalize_height(const LineImage& img, std::size_t target_h = 64) {
  if (target_h < 8) throw ContractError("target height must be at least 8");
  const double scale = static_cast<double>(target_h) / static_cast<double>(img.height);
  const auto nw = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(static_cast<double>(img.width) * scale)));
  if (nw == img.width && target_h == img.height) return img;
  LineImage out = LineImage::blank(nw, target_h);
  const double sx_scale = static_cast<double>(img.width) / static_cast<double>(nw);
  const double sy_scale = static_cast<double>(img.height) / static_cast<double>(target_h);
  const double maxx = static_cast<double>(img.width - 1);
  const double maxy = static_cast<double>(img.height - 1);
  for (std::size_t r = 0; r < target_h; ++r) {
    const double sy = std::clamp((static_cast<double>(r) + 0.5) * sy_scale - 0.5, 0.0, maxy);
    for (std::size_t c = 0; c < nw; ++c) {
      const double sx = std::clamp((static_cast<double>(c) + 0.5) * sx_scale - 0.5, 0.0, maxx);
      out.at(r, c) = sample_bilinear(img, sx, sy);
    }
  }
  out.skew_angle = img.skew_angle;
  return out;
}

// Non-overlapping vertical strips, each flattened row-major (height x
// patch_w). Strips are listed left to right.
struct PatchSequence {
  std::size_t height = 0;
  std::size_t patch_width = 0;
  std::size_t length = 0;  // number of strips including padding strips
  std::size_t original_width = 0;
  std::vector<float> values;          // length * height * patch_width
  std::vector<std::uint8_t> pad_mask;  // nonzero = padding strip

  std::size_t patch_dim() const { return height * patch_width; }
  std::size_t real_length() const {
    return static_cast<std::size_t>(std::count(pad_mask.begin(), pad_mask.end(), 0));
  }
};

inline PatchSequence to_patches(const LineImage& img, std::size_t patch_height,
                                std::size_t patch_w = 12,
                                std::optional<std::size_t> batch_len = std::nullopt) {
  if (img.height != patch_height) {
    throw ContractError("image height " + std::to_string(img.height) +
                        " differs from patch height " + std::to_string(patch_height));
  }
  if (patch_w == 0) throw ContractError("patch width must be positive");
  const std::size_t needed = (img.width + patch_w - 1) / patch_w;
  std::size_t length = needed;
  if (batch_len) {
    if (*batch_len < needed)
      throw CapacityError("line needs " + std::to_string(needed) +
                          " patches, batch length is " + std::to_string(*batch_len));
    length = *batch_len;
  }
  PatchSequence seq;
  seq.height = img.height;
  seq.patch_width = patch_w;
  seq.length = length;
  seq.original_width = img.width;
  seq.values.assign(length * img.height * patch_w, 0.0f);
  seq.pad_mask.assign(length, 0);
  for (std::size_t l = needed; l < length; ++l) seq.pad_mask[l] = 1;
  for (std::size_t l = 0; l < needed; ++l)
    for (std::size_t r = 0; r < img.height; ++r)
      for (std::size_t c = 0; c < patch_w; ++c) {
        const std::size_t x = l * patch_w + c;
        if (x < img.width)
          seq.values[(l * img.height + r) * patch_w + c] = img.at(r, x);
      }
  return seq;
}

// Concatenates the strips back into a (right-padded) image.
inline LineImage reassemble(const PatchSequence& seq) {
  LineImage img = LineImage::blank(seq.length * seq.patch_width, seq.height);
  for (std::size_t l = 0; l < seq.length; ++l)
    for (std::size_t r = 0; r < seq.height; ++r)
      for (std::size_t c = 0; c < seq.patch_width; ++c)
        img.at(r, l * seq.patch_width + c) =
            seq.values[(l * seq.height + r) * seq.patch_width + c];
  return img;
}

// deskew -> trim -> height normalization.
inline LineImage preprocess(const LineImage& raw, const FrontendSpec& spec) {
  LineImage img = spec.deskew
                      ? deskew(raw, spec.max_skew_degrees, spec.skew_step_degrees)
                      : raw;
  img = trim_whitespace(img, spec.ink_threshold);
  return normalize_height(img, spec.height);
}

// Several lines padded to a common number of patches.
struct PatchBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::size_t patch_dim = 0;
  std::vector<float> values;             // batch * length * patch_dim
  std::vector<std::uint8_t> key_valid;   // batch * length, nonzero = real
  std::vector<std::size_t> lengths;      // real patches per line
};

inline PatchBatch collate(std::span<const LineImage> lines, const FrontendSpec& spec) {
  if (lines.empty()) throw ContractError("collate: empty batch");
  std::size_t longest = 0;
  for (const auto& img : lines)
    longest = std::max(longest, (img.width + spec.patch_width - 1) / spec.patch_width);
  if (spec.fixed_width) {
    const std::size_t fixed = (spec.fixed_width + spec.patch_width - 1) / spec.patch_width;
    if (fixed < longest)
      throw CapacityError("line wider than the fixed input width of " +
                          std::to_string(spec.fixed_width) + " pixels");
    longest = fixed;
  }
  PatchBatch out;
  out.batch = lines.size();
  out.length = longest;
  out.patch_dim = spec.patch_dim();
  for (const auto& img : lines) {
    PatchSequence seq = to_patches(img, spec.height, spec.patch_width, longest);
    out.values.insert(out.values.end(), seq.values.begin(), seq.values.end());
    for (auto m : seq.pad_mask) out.key_valid.push_back(m ? 0 : 1);
    out.lengths.push_back(seq.real_length());
  }
  return out;
}

}  // namespace htr
