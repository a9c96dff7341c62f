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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "htr/frontend.hpp"
#include "htr/rng.hpp"

namespace htr {
namespace {

// A text-like line: ink blobs of varying width and height sitting on a common
// baseline, with a thin rule underneath.
LineImage synthetic_line(std::size_t width = 240, std::size_t height = 48,
                         std::uint64_t seed = 5) {
  LineImage img = LineImage::blank(width, height);
  CounterRng rng(seed, 0);
  const std::size_t base = height * 2 / 3;
  std::size_t x = 12;
  while (x + 12 < width) {
    const std::size_t w = 3 + rng.below(5), h = 6 + rng.below(8);
    for (std::size_t r = base - h; r < base; ++r)
      for (std::size_t c = x; c < x + w; ++c) img.at(r, c) = 1.0f;
    x += w + 2 + rng.below(4);
  }
  for (std::size_t c = 10; c + 10 < width; ++c) img.at(base + 1, c) = 1.0f;
  return img;
}

LineImage random_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  LineImage img = LineImage::blank(w, h);
  CounterRng rng(seed, 1);
  for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
  return img;
}

double mean_abs_diff(const LineImage& a, const LineImage& b) {
  EXPECT_EQ(a.width, b.width);
  EXPECT_EQ(a.height, b.height);
  double s = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(a.pixels[i] - b.pixels[i]);
  return s / static_cast<double>(a.pixels.size());
}

TEST(Deskew, HorizontalRuledLineIsUnchanged) {
  LineImage img = LineImage::blank(120, 30);
  for (std::size_t c = 5; c < 115; ++c) img.at(15, c) = img.at(16, c) = 1.0f;
  EXPECT_EQ(estimate_skew(img), 0.0);
  LineImage out = deskew(img);
  ASSERT_EQ(out.width, img.width);
  ASSERT_EQ(out.height, img.height);
  EXPECT_LT(mean_abs_diff(out, img), 1e-6);
  EXPECT_EQ(out.skew_angle.value_or(-1), 0.0);
}

TEST(Deskew, RotatedLineIsRecovered) {
  const LineImage line = synthetic_line();
  for (double angle : {5.0, -5.0, 9.5}) {
    LineImage tilted = rotate(line, angle);
    EXPECT_NEAR(estimate_skew(tilted), angle, 0.5) << angle;
    LineImage fixed = deskew(tilted);
    EXPECT_LE(std::abs(estimate_skew(fixed)), 0.5) << angle;
  }
}

TEST(Deskew, BlankImageIsIdentity) {
  LineImage img = LineImage::blank(50, 20);
  LineImage out = deskew(img);
  EXPECT_EQ(out, img);
  EXPECT_EQ(out.skew_angle.value_or(-1), 0.0);
}

TEST(Deskew, SecondApplicationIsInterpolationOnly) {
  LineImage once = deskew(rotate(synthetic_line(), 4.0));
  LineImage twice = deskew(once);
  EXPECT_LT(mean_abs_diff(once, twice), 0.02);
}

TEST(Rotate, ExposedCornersAreBackgroundAndCanvasGrows) {
  LineImage img = LineImage::blank(40, 10);
  for (auto& p : img.pixels) p = 1.0f;
  LineImage r = rotate(img, 10.0);
  EXPECT_GT(r.width, img.width - 1);
  EXPECT_GT(r.height, img.height);
  EXPECT_EQ(r.at(0, 0), 0.0f);
  EXPECT_EQ(r.at(r.height - 1, r.width - 1), 0.0f);
  for (float p : r.pixels) {
    EXPECT_GE(p, 0.0f);
    EXPECT_LE(p, 1.0f + 1e-6f);
  }
}

TEST(Trim, RemovesMarginsAndPreservesContent) {
  LineImage content = random_image(30, 12, 3);
  content.at(0, 0) = content.at(11, 29) = 0.9f;  // tight corners
  LineImage framed = LineImage::blank(50, 32);
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t c = 0; c < 30; ++c) framed.at(r + 10, c + 10) = content.at(r, c);
  EXPECT_EQ(trim_whitespace(framed), content);
  EXPECT_EQ(trim_whitespace(content), content);
}

TEST(Trim, SingleInkPixelAndBlankSentinel) {
  LineImage img = LineImage::blank(20, 9);
  img.at(4, 13) = 0.8f;
  LineImage t = trim_whitespace(img);
  EXPECT_EQ(t.width, 1u);
  EXPECT_EQ(t.height, 1u);
  EXPECT_EQ(t.at(0, 0), 0.8f);
  LineImage blank = trim_whitespace(LineImage::blank(7, 7));
  EXPECT_EQ(blank.width, 1u);
  EXPECT_EQ(blank.height, 1u);
  EXPECT_EQ(blank.at(0, 0), 0.0f);
}

TEST(Trim, EdgesCarryInkAndTrimIsIdempotent) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    LineImage img = random_image(25, 15, seed);
    for (auto& p : img.pixels) p = p > 0.9f ? p : p * 0.4f;
    LineImage t = trim_whitespace(img);
    auto row_has = [&](std::size_t r) {
      for (std::size_t c = 0; c < t.width; ++c)
        if (t.at(r, c) > 0.5f) return true;
      return false;
    };
    auto col_has = [&](std::size_t c) {
      for (std::size_t r = 0; r < t.height; ++r)
        if (t.at(r, c) > 0.5f) return true;
      return false;
    };
    EXPECT_TRUE(row_has(0) && row_has(t.height - 1));
    EXPECT_TRUE(col_has(0) && col_has(t.width - 1));
    EXPECT_EQ(trim_whitespace(t), t);
  }
}

TEST(Trim, ThresholdOutsideOpenIntervalIsRejected) {
  LineImage img = LineImage::blank(3, 3);
  EXPECT_THROW(trim_whitespace(img, 0.0), ContractError);
  EXPECT_THROW(trim_whitespace(img, 1.0), ContractError);
}

TEST(NormalizeHeight, OutputDimensions) {
  LineImage a = random_image(300, 64, 1);
  EXPECT_EQ(normalize_height(a, 64), a);
  LineImage b = normalize_height(random_image(600, 128, 2), 64);
  EXPECT_EQ(b.height, 64u);
  EXPECT_EQ(b.width, 300u);
  LineImage c = normalize_height(random_image(333, 100, 3), 64);
  EXPECT_EQ(c.height, 64u);
  EXPECT_EQ(c.width, 213u);
  LineImage d = normalize_height(random_image(1, 200, 4), 64);
  EXPECT_EQ(d.width, 1u);
  EXPECT_THROW(normalize_height(a, 7), ContractError);
}

TEST(NormalizeHeight, ExactHalvingAveragesPixelPairs) {
  LineImage img = random_image(8, 16, 9);
  LineImage half = normalize_height(img, 8);
  ASSERT_EQ(half.width, 4u);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 4; ++c) {
      const double want = (img.at(2 * r, 2 * c) + img.at(2 * r, 2 * c + 1) +
                           img.at(2 * r + 1, 2 * c) + img.at(2 * r + 1, 2 * c + 1)) /
                          4.0;
      EXPECT_NEAR(half.at(r, c), want, 1e-6);
    }
}

TEST(Patches, CountsAndEdgePadding) {
  LineImage a = random_image(24, 64, 5);
  PatchSequence pa = to_patches(a, 64, 12);
  EXPECT_EQ(pa.length, 2u);
  EXPECT_EQ(pa.real_length(), 2u);
  EXPECT_EQ(pa.patch_dim(), 768u);
  EXPECT_EQ(pa.values.size(), 2u * 768u);

  LineImage b = random_image(25, 64, 6);
  PatchSequence pb = to_patches(b, 64, 12);
  ASSERT_EQ(pb.length, 3u);
  for (std::size_t r = 0; r < 64; ++r) {
    EXPECT_EQ(pb.values[(2 * 64 + r) * 12 + 0], b.at(r, 24));
    for (std::size_t c = 1; c < 12; ++c) EXPECT_EQ(pb.values[(2 * 64 + r) * 12 + c], 0.0f);
  }
}

TEST(Patches, StripsAreRowMajorVerticalSlices) {
  LineImage img = random_image(36, 10, 7);
  PatchSequence seq = to_patches(img, 10, 12);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t r = 0; r < 10; ++r)
      for (std::size_t c = 0; c < 12; ++c)
        EXPECT_EQ(seq.values[l * 120 + r * 12 + c], img.at(r, l * 12 + c));
}

TEST(Patches, ReassemblyIsLosslessUpToRightPadding) {
  for (std::size_t w : {1u, 11u, 12u, 13u, 50u}) {
    LineImage img = random_image(w, 16, w);
    PatchSequence seq = to_patches(img, 16, 12, 6);
    EXPECT_EQ(seq.length, 6u);
    EXPECT_EQ(seq.original_width, w);
    EXPECT_GE(seq.real_length() * 12, w > 12 ? w - 12 : 0);
    LineImage back = reassemble(seq);
    ASSERT_EQ(back.width, 72u);
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t c = 0; c < 72; ++c)
        EXPECT_EQ(back.at(r, c), c < w ? img.at(r, c) : 0.0f);
  }
}

TEST(Patches, ContractErrors) {
  LineImage img = random_image(40, 16, 8);
  EXPECT_THROW(to_patches(img, 64, 12), ContractError);
  EXPECT_THROW(to_patches(img, 16, 12, 3), CapacityError);
  PatchSequence seq = to_patches(img, 16, 12, 5);
  EXPECT_EQ(seq.pad_mask, (std::vector<std::uint8_t>{0, 0, 0, 0, 1}));
}

TEST(Collate, PadsToLongestOrFixedWidth) {
  FrontendSpec spec;
  spec.height = 16;
  spec.patch_width = 4;
  std::vector<LineImage> lines{random_image(10, 16, 1), random_image(21, 16, 2)};
  PatchBatch b = collate(lines, spec);
  EXPECT_EQ(b.length, 6u);
  EXPECT_EQ(b.lengths, (std::vector<std::size_t>{3, 6}));
  EXPECT_EQ(b.key_valid, (std::vector<std::uint8_t>{1, 1, 1, 0, 0, 0, 1, 1, 1, 1, 1, 1}));
  EXPECT_EQ(b.values.size(), 2u * 6u * 64u);
  spec.fixed_width = 40;
  EXPECT_EQ(collate(lines, spec).length, 10u);
  spec.fixed_width = 16;
  EXPECT_THROW(collate(lines, spec), CapacityError);
}

TEST(Pipeline, DeterministicAndNormalized) {
  FrontendSpec spec;
  spec.height = 32;
  LineImage raw = rotate(synthetic_line(300, 60, 9), 3.0);
  LineImage a = preprocess(raw, spec), b = preprocess(raw, spec);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.height, 32u);
  for (float p : a.pixels) {
    EXPECT_GE(p, 0.0f);
    EXPECT_LE(p, 1.0f);
  }
  EXPECT_NEAR(a.skew_angle.value_or(99), 3.0, 0.5);
}

TEST(Pgm, RoundTripAndPolarity) {
  const auto dir = std::filesystem::temp_directory_path() / "htr_test_pgm";
  std::filesystem::create_directories(dir);
  LineImage img = random_image(13, 7, 4);
  img.at(0, 0) = 1.0f;
  img.at(0, 1) = 0.0f;
  write_pgm(img, dir / "a.pgm");
  auto bytes = encode_pgm(img);
  const std::string header = "P5\n13 7\n255\n";
  EXPECT_EQ(bytes[header.size()], 0);      // full ink is black on disk
  EXPECT_EQ(bytes[header.size() + 1], 255);  // background is white
  LineImage back = read_pgm(dir / "a.pgm");
  ASSERT_EQ(back.width, 13u);
  ASSERT_EQ(back.height, 7u);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    EXPECT_NEAR(back.pixels[i], img.pixels[i], 0.5 / 255 + 1e-6);

  {
    std::ofstream out(dir / "wide.pgm", std::ios::binary);
    out << "P5\n# comment\n2 1\n65535\n";
    const unsigned char px[4] = {0xFF, 0xFF, 0x00, 0x00};
    out.write(reinterpret_cast<const char*>(px), 4);
  }
  LineImage wide = read_pgm(dir / "wide.pgm");
  EXPECT_EQ(wide.at(0, 0), 0.0f);
  EXPECT_EQ(wide.at(0, 1), 1.0f);

  EXPECT_THROW(read_pgm(dir / "missing.pgm"), IoError);
  {
    std::ofstream out(dir / "short.pgm", std::ios::binary);
    out << "P5\n4 4\n255\nab";
  }
  EXPECT_THROW(read_pgm(dir / "short.pgm"), IoError);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace htr
