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

#include <filesystem>
#include <fstream>
#include <iterator>

#include "htr/frontend.hpp"
#include "htr/synth.hpp"
#include "htr/tokenizer.hpp"

namespace htr {
namespace {

namespace fs = std::filesystem;

const std::u32string kAlphabet = U"abcdefghijklmnopqrstuvwxyz ";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

TEST(Atlas, ProceduralGlyphsAreDistinctAndFullHeight) {
  GlyphAtlas a = GlyphAtlas::procedural(kAlphabet);
  EXPECT_EQ(a.size(), kAlphabet.size());
  std::set<std::pair<std::size_t, std::vector<std::uint8_t>>> seen;
  for (char32_t c : kAlphabet) {
    const Glyph& g = a.glyph(c);
    EXPECT_EQ(g.bits.size(), g.width * a.height);
    if (c != U' ') {
      EXPECT_GE(g.width, 5u);
      EXPECT_LE(g.width, 9u);
    }
    EXPECT_TRUE(seen.insert({g.width, g.bits}).second);
  }
  GlyphAtlas b = GlyphAtlas::procedural(kAlphabet);
  for (char32_t c : kAlphabet) EXPECT_EQ(a.glyph(c).bits, b.glyph(c).bits);
}

TEST(Atlas, SaveLoadRoundTrip) {
  TempDir dir("htr_atlas_test");
  GlyphAtlas a = GlyphAtlas::procedural(U"xyz ");
  a.right_to_left = true;
  a.margin = 3;
  a.save(dir.path);
  GlyphAtlas b = GlyphAtlas::load(dir.path);
  EXPECT_TRUE(b.right_to_left);
  EXPECT_EQ(b.margin, 3u);
  EXPECT_EQ(b.alphabet(), a.alphabet());
  EXPECT_EQ(render_line("xz y", a).image, render_line("xz y", b).image);
  EXPECT_THROW(GlyphAtlas::load(dir.path / "missing"), IoError);
}

TEST(Render, EmptyTextIsBackground) {
  GlyphAtlas a = GlyphAtlas::procedural(kAlphabet);
  RenderedLine r = render_line("", a);
  EXPECT_EQ(r.transcript, "");
  EXPECT_EQ(r.image.width, 2 * a.margin);
  EXPECT_EQ(r.image.height, a.height + 2 * a.margin);
  EXPECT_EQ(r.image.ink_mass(), 0.0);
}

TEST(Render, SingleGlyphPlusMarginsBitExact) {
  GlyphAtlas a = GlyphAtlas::procedural(kAlphabet);
  const Glyph& g = a.glyph(U'a');
  LineImage expect = LineImage::blank(g.width + 2 * a.margin, a.height + 2 * a.margin);
  for (std::size_t r = 0; r < a.height; ++r)
    for (std::size_t c = 0; c < g.width; ++c)
      expect.at(r + a.margin, c + a.margin) = g.bits[r * g.width + c] ? 1.0f : 0.0f;
  EXPECT_EQ(render_line("a", a).image, expect);
}

TEST(Render, CompositingArithmeticAndDirection) {
  GlyphAtlas a = GlyphAtlas::procedural(kAlphabet);
  const std::size_t wa = a.glyph(U'a').width, wb = a.glyph(U'b').width;
  RenderedLine ab = render_line("ab", a);
  EXPECT_EQ(ab.image.width, wa + a.spacing + wb + 2 * a.margin);
  EXPECT_GT(ab.image.ink_mass(), 0.0);
  GlyphAtlas rtl = a;
  rtl.right_to_left = true;
  RenderedLine r = render_line("ab", rtl);
  EXPECT_EQ(r.transcript, "ab");
  EXPECT_EQ(r.image, render_line("ba", a).image);
}

TEST(Render, UnknownCharacterIsNamed) {
  GlyphAtlas a = GlyphAtlas::procedural(U"ab");
  try {
    render_line("aQb", a);
    FAIL() << "expected a contract error";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("'Q'"), std::string::npos) << e.what();
  }
}

LineImage ruled_pattern() {
  LineImage img = LineImage::blank(200, 40);
  for (std::size_t c = 10; c < 190; ++c) {
    img.at(12, c) = img.at(13, c) = 1.0f;
    img.at(26, c) = img.at(27, c) = 1.0f;
  }
  return img;
}

TEST(Augment, ZeroProbabilitiesAreIdentity) {
  GlyphAtlas a = GlyphAtlas::procedural(kAlphabet);
  LineImage img = render_line("hello world", a).image;
  EXPECT_EQ(augment(img, AugmentSpec::none(), 17), img);
}

TEST(Augment, KeyedDrawsAreDeterministic) {
  GlyphAtlas a = GlyphAtlas::procedural(kAlphabet);
  LineImage img = render_line("quick brown fox", a).image;
  AugmentSpec spec;
  spec.seed = 99;
  spec.p_shear = spec.p_rotation = spec.p_elastic = spec.p_morph = spec.p_blur =
      spec.p_noise = spec.p_quantize = 1.0;
  LineImage x = augment(img, spec, 5), y = augment(img, spec, 5), z = augment(img, spec, 6);
  EXPECT_EQ(x, y);
  EXPECT_FALSE(x == z);
  for (float p : x.pixels) {
    EXPECT_GE(p, 0.0f);
    EXPECT_LE(p, 1.0f);
  }
  spec.seed = 100;
  EXPECT_FALSE(augment(img, spec, 5) == x);
}

TEST(Augment, FixedRotationIsRecoveredByTheSkewEstimator) {
  AugmentSpec spec = AugmentSpec::none();
  spec.p_rotation = 1.0;
  spec.rotation_min = spec.rotation_max = 3.0;
  LineImage out = augment(ruled_pattern(), spec, 0);
  EXPECT_NEAR(estimate_skew(out), 3.0, 0.5);
}

TEST(Augment, ShearAndRotationPreserveInkMass) {
  GlyphAtlas a = GlyphAtlas::procedural(kAlphabet);
  LineImage img = render_line("preserve the ink", a).image;
  const double mass = img.ink_mass();
  for (std::uint64_t i = 0; i < 20; ++i) {
    AugmentSpec s = AugmentSpec::none();
    s.seed = 3;
    s.p_shear = 1.0;
    EXPECT_NEAR(augment(img, s, i).ink_mass(), mass, 0.1 * mass);
    s = AugmentSpec::none();
    s.seed = 3;
    s.p_rotation = 1.0;
    EXPECT_NEAR(augment(img, s, i).ink_mass(), mass, 0.1 * mass);
  }
}

TEST(Augment, QuantizationAndMorphology) {
  LineImage img = ruled_pattern();
  AugmentSpec s = AugmentSpec::none();
  s.p_blur = 1.0;
  s.blur_min = s.blur_max = 1.0;
  s.p_quantize = 1.0;
  s.quantize_min = s.quantize_max = 4;
  for (float p : augment(img, s, 0).pixels) {
    const float q = p * 3.0f;
    EXPECT_NEAR(q, std::round(q), 1e-5);
  }
  s = AugmentSpec::none();
  s.p_morph = 1.0;
  double lo = 1e9, hi = 0;
  for (std::uint64_t i = 0; i < 16; ++i) {
    const double m = augment(img, s, i).ink_mass();
    lo = std::min(lo, m);
    hi = std::max(hi, m);
  }
  EXPECT_LT(lo, img.ink_mass());  // some draws erode
  EXPECT_GT(hi, img.ink_mass());  // some dilate
  s.p_morph = 1.5;
  EXPECT_THROW(augment(img, s, 0), ContractError);
}

TEST(Generate, SingleSampleAndReproducibility) {
  TempDir d1("htr_gen_a"), d2("htr_gen_b");
  GlyphAtlas atlas = GlyphAtlas::procedural(kAlphabet);
  const auto corpus = synthetic_corpus(kAlphabet, 5, 1);
  GenerateSpec spec;
  spec.count = 1;
  auto one = generate_dataset(corpus, atlas, spec, d1.path);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_TRUE(fs::exists(d1.path / "images/000000.pgm"));
  EXPECT_EQ(read_manifest(d1.path / "manifest.tsv").size(), 1u);

  fs::remove_all(d1.path);
  spec.count = 12;
  spec.seed = 4;
  generate_dataset(corpus, atlas, spec, d1.path);
  spec.threads = 3;
  generate_dataset(corpus, atlas, spec, d2.path);
  EXPECT_EQ(slurp(d1.path / "manifest.tsv"), slurp(d2.path / "manifest.tsv"));
  for (const auto& e : read_manifest(d1.path / "manifest.tsv"))
    EXPECT_EQ(slurp(e.image), slurp(d2.path / e.relative)) << e.relative;

  // Resume: a deleted image is regenerated identically.
  const std::string before = slurp(d1.path / "images/000007.pgm");
  fs::remove(d1.path / "images/000007.pgm");
  generate_dataset(corpus, atlas, spec, d1.path);
  EXPECT_EQ(slurp(d1.path / "images/000007.pgm"), before);
}

TEST(Generate, TranscriptsRoundTripThroughTokenizer) {
  TempDir dir("htr_gen_tok");
  GlyphAtlas atlas = GlyphAtlas::procedural(kAlphabet);
  const auto corpus = synthetic_corpus(kAlphabet, 20, 2);
  GenerateSpec spec;
  spec.count = 20;
  generate_dataset(corpus, atlas, spec, dir.path);
  const auto entries = read_manifest(dir.path / "manifest.tsv");
  std::vector<std::string> lines;
  for (const auto& e : entries) lines.push_back(e.transcript);
  EXPECT_EQ(lines, corpus);
  Vocabulary vocab = Vocabulary::build_char(lines);
  for (const auto& e : entries) {
    const auto ids = vocab.encode(e.transcript);
    EXPECT_EQ(vocab.decode(ids), e.transcript);
    LineImage img = read_pgm(e.image);
    EXPECT_GT(img.ink_mass(), 0.0);
  }
}

TEST(Generate, Errors) {
  TempDir dir("htr_gen_err");
  GlyphAtlas atlas = GlyphAtlas::procedural(U"ab");
  GenerateSpec spec;
  spec.count = 0;
  EXPECT_THROW(generate_dataset({"ab"}, atlas, spec, dir.path), ContractError);
  spec.count = 1;
  EXPECT_THROW(generate_dataset({"abc"}, atlas, spec, dir.path), ContractError);
  EXPECT_THROW(generate_dataset({"a\tb"}, atlas, spec, dir.path), ContractError);
  fs::create_directories(dir.path);
  std::ofstream(dir.path / "blocker") << "x";
  try {
    generate_dataset({"ab"}, atlas, spec, dir.path / "blocker");
    FAIL() << "expected an I/O error";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("blocker"), std::string::npos);
  }
  EXPECT_THROW(read_manifest(dir.path / "none.tsv"), IoError);
}

}  // namespace
}  // namespace htr
