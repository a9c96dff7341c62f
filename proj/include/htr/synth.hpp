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
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "htr/error.hpp"
#include "htr/image.hpp"
#include "htr/rng.hpp"
#include "htr/utf8.hpp"

namespace htr {

struct Glyph {
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;  // height x width, row-major, nonzero = ink
};

// Character -> bitmap table with a shared nominal height.
class GlyphAtlas {
 public:
  std::size_t height = 16;
  std::size_t spacing = 1;
  std::size_t margin = 4;
  bool right_to_left = false;

  bool has(char32_t c) const { return glyphs_.count(c) > 0; }
  const Glyph& glyph(char32_t c) const {
    auto it = glyphs_.find(c);
    if (it == glyphs_.end())
      throw ContractError("character '" + utf8::encode(c) + "' (U+" + hex(c) +
                          ") is not in the glyph atlas");
    return it->second;
  }
  void add(char32_t c, Glyph g) {
    if (g.bits.size() != g.width * height)
      throw ContractError("glyph for U+" + hex(c) + " does not match the atlas height");
    glyphs_[c] = std::move(g);
  }
  std::u32string alphabet() const {
    std::u32string out;
    for (const auto& [c, g] : glyphs_) out.push_back(c);
    return out;
  }
  std::size_t size() const { return glyphs_.size(); }

  // Segment-style glyphs: each character gets a width in [5, 9] and a
  // distinct subset of strokes, both derived from its code point. Space is
  // an empty 4-column glyph.
  static GlyphAtlas procedural(std::u32string_view alphabet, std::uint64_t seed = 0) {
    GlyphAtlas atlas;
    std::set<std::vector<std::uint8_t>> used;
    for (char32_t c : alphabet) {
      if (atlas.has(c)) continue;
      if (c == U' ') {
        atlas.add(c, {4, std::vector<std::uint8_t>(4 * atlas.height, 0)});
        continue;
      }
      for (std::uint64_t attempt = 0;; ++attempt) {
        CounterRng rng(hash_combine(seed, c), attempt);
        Glyph g = procedural_glyph(atlas.height, 5 + rng.below(5), rng);
        std::vector<std::uint8_t> key = g.bits;
        key.push_back(static_cast<std::uint8_t>(g.width));
        if (used.insert(key).second) {
          atlas.add(c, std::move(g));
          break;
        }
      }
    }
    return atlas;
  }

  // Directory layout: index.tsv with "char TAB filename TAB width" rows plus
  // one PGM per glyph. A leading "#" line may set height/spacing/margin/rtl.
  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream idx(dir / "index.tsv", std::ios::trunc);
    if (!idx) throw IoError("cannot write " + (dir / "index.tsv").string());
    idx << "#height=" << height << " spacing=" << spacing << " margin=" << margin
        << " rtl=" << (right_to_left ? 1 : 0) << "\n";
    for (const auto& [c, g] : glyphs_) {
      const std::string file = "glyph_" + hex(c) + ".pgm";
      LineImage img = LineImage::blank(std::max<std::size_t>(g.width, 1), height);
      for (std::size_t i = 0; i < g.bits.size(); ++i) img.pixels[i] = g.bits[i] ? 1.0f : 0.0f;
      write_pgm(img, dir / file);
      idx << utf8::encode(c) << '\t' << file << '\t' << g.width << '\n';
    }
    if (!idx) throw IoError("failed writing " + (dir / "index.tsv").string());
  }

  static GlyphAtlas load(const std::filesystem::path& dir) {
    std::ifstream idx(dir / "index.tsv");
    if (!idx) throw IoError("cannot open atlas index " + (dir / "index.tsv").string());
    GlyphAtlas atlas;
    std::string line;
    bool first = true;
    while (std::getline(idx, line)) {
      if (line.empty()) continue;
      if (first && line[0] == '#') {
        std::istringstream in(line.substr(1));
        std::string kv;
        while (in >> kv) {
          const auto eq = kv.find('=');
          if (eq == std::string::npos) continue;
          const std::string k = kv.substr(0, eq);
          const std::size_t v = std::stoul(kv.substr(eq + 1));
          if (k == "height") atlas.height = v;
          else if (k == "spacing") atlas.spacing = v;
          else if (k == "margin") atlas.margin = v;
          else if (k == "rtl") atlas.right_to_left = v != 0;
        }
        first = false;
        continue;
      }
      first = false;
      const auto t1 = line.find('\t'), t2 = line.find('\t', t1 + 1);
      if (t1 == std::string::npos || t2 == std::string::npos)
        throw IntegrityError("malformed atlas index row: " + line);
      const std::u32string ch = utf8::decode(line.substr(0, t1));
      if (ch.size() != 1) throw IntegrityError("atlas index row must name one character: " + line);
      const std::size_t width = std::stoul(line.substr(t2 + 1));
      Glyph g{width, std::vector<std::uint8_t>(width * atlas.height, 0)};
      if (width > 0) {
        LineImage img = read_pgm(dir / line.substr(t1 + 1, t2 - t1 - 1));
        if (img.height != atlas.height || img.width != width)
          throw IntegrityError("glyph bitmap size disagrees with the index: " + line);
        for (std::size_t i = 0; i < g.bits.size(); ++i) g.bits[i] = img.pixels[i] > 0.5f;
      }
      atlas.add(ch[0], std::move(g));
    }
    return atlas;
  }

  static std::string hex(char32_t c) {
    std::ostringstream s;
    s << std::hex << std::uppercase;
    s.width(4);
    s.fill('0');
    s << static_cast<std::uint32_t>(c);
    return s.str();
  }

 private:
  static Glyph procedural_glyph(std::size_t h, std::size_t w, CounterRng& rng) {
    Glyph g{w, std::vector<std::uint8_t>(w * h, 0)};
    auto put = [&](long r, long c) {
      if (r >= 0 && c >= 0 && r < static_cast<long>(h) && c < static_cast<long>(w))
        g.bits[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)] = 1;
    };
    const long W = static_cast<long>(w), top = 3, mid = static_cast<long>(h) / 2,
               bot = static_cast<long>(h) - 4;
    auto hline = [&](long r) {
      for (long c = 0; c < W; ++c) put(r, c), put(r + 1, c);
    };
    auto vline = [&](long c, long r0, long r1) {
      for (long r = r0; r <= r1; ++r) put(r, c), put(r, c + 1);
    };
    auto diag = [&](long r0, long r1, bool down) {
      for (long r = r0; r <= r1; ++r) {
        const long c = (r - r0) * (W - 2) / std::max(1L, r1 - r0);
        put(r, down ? c : W - 2 - c);
        put(r, (down ? c : W - 2 - c) + 1);
      }
    };
    unsigned mask = 0;
    while (mask == 0 || __builtin_popcount(mask) < 2) mask = static_cast<unsigned>(rng.below(1u << 11));
    if (mask & 1u) hline(top);
    if (mask & 2u) hline(mid);
    if (mask & 4u) hline(bot);
    if (mask & 8u) vline(0, top, mid);
    if (mask & 16u) vline(0, mid, bot + 1);
    if (mask & 32u) vline(W - 2, top, mid);
    if (mask & 64u) vline(W - 2, mid, bot + 1);
    if (mask & 128u) diag(top, bot + 1, true);
    if (mask & 256u) diag(top, bot + 1, false);
    if (mask & 512u) vline(W / 2 - 1, 0, top + 1);       // ascender
    if (mask & 1024u) vline(W / 2 - 1, bot, static_cast<long>(h) - 1);  // descender
    return g;
  }

  std::map<char32_t, Glyph> glyphs_;
};

struct RenderedLine {
  LineImage image;
  std::string transcript;  // logical order
};

// Glyphs side by side along a common top line, `spacing` columns apart,
// with `margin` background pixels on all sides. Right-to-left atlases place
// the first logical character at the right edge.
inline RenderedLine render_line(std::string_view text, const GlyphAtlas& atlas) {
  const std::u32string cps = utf8::decode(text);
  std::vector<const Glyph*> glyphs;
  for (char32_t c : cps) glyphs.push_back(&atlas.glyph(c));
  std::size_t width = 2 * atlas.margin;
  for (std::size_t i = 0; i < glyphs.size(); ++i)
    width += glyphs[i]->width + (i ? atlas.spacing : 0);
  RenderedLine out;
  out.transcript = std::string(text);
  out.image = LineImage::blank(std::max<std::size_t>(width, 1), atlas.height + 2 * atlas.margin);
  std::size_t x = atlas.margin;
  for (std::size_t n = 0; n < glyphs.size(); ++n) {
    const Glyph& g = *glyphs[atlas.right_to_left ? glyphs.size() - 1 - n : n];
    for (std::size_t r = 0; r < atlas.height; ++r)
      for (std::size_t c = 0; c < g.width; ++c)
        if (g.bits[r * g.width + c]) out.image.at(atlas.margin + r, x + c) = 1.0f;
    x += g.width + atlas.spacing;
  }
  return out;
}

// Each op fires with its probability; its parameter is drawn uniformly from
// [min, max].
struct AugmentSpec {
  std::uint64_t seed = 0;
  double p_shear = 0.5, shear_min = -0.3, shear_max = 0.3;
  double p_rotation = 0.5, rotation_min = -3.0, rotation_max = 3.0;
  double p_elastic = 0.3, elastic_amplitude = 1.0, elastic_radius = 4.0;
  double p_morph = 0.3;  // erosion or dilation, equally likely
  std::size_t morph_radius = 1;
  double p_blur = 0.3, blur_min = 0.0, blur_max = 1.5;
  double p_noise = 0.3, noise_min = 0.0, noise_max = 0.05;
  double p_quantize = 0.3;
  std::size_t quantize_min = 8, quantize_max = 32;

  static AugmentSpec none() {
    AugmentSpec s;
    s.p_shear = s.p_rotation = s.p_elastic = s.p_morph = s.p_blur = s.p_noise = s.p_quantize = 0;
    return s;
  }

  void validate() const {
    for (double p : {p_shear, p_rotation, p_elastic, p_morph, p_blur, p_noise, p_quantize})
      if (!(p >= 0.0 && p <= 1.0)) throw ContractError("augmentation probability outside [0, 1]");
    for (double v : {shear_min, shear_max, rotation_min, rotation_max, elastic_amplitude,
                     elastic_radius, blur_min, blur_max, noise_min, noise_max})
      if (!std::isfinite(v)) throw ContractError("augmentation range is not finite");
    if (shear_min > shear_max || rotation_min > rotation_max || blur_min > blur_max ||
        noise_min > noise_max || quantize_min > quantize_max || quantize_min < 2)
      throw ContractError("augmentation range is empty");
    if (blur_min < 0 || noise_min < 0 || elastic_amplitude < 0 || elastic_radius < 0)
      throw ContractError("augmentation magnitudes must be non-negative");
  }
};

namespace detail {

inline void box_blur(std::vector<float>& v, std::size_t w, std::size_t h, std::size_t r) {
  if (r == 0) return;
  std::vector<float> tmp(v.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0;
      std::size_t n = 0;
      for (std::size_t k = x >= r ? x - r : 0; k <= std::min(w - 1, x + r); ++k, ++n) s += v[y * w + k];
      tmp[y * w + x] = static_cast<float>(s / static_cast<double>(n));
    }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0;
      std::size_t n = 0;
      for (std::size_t k = y >= r ? y - r : 0; k <= std::min(h - 1, y + r); ++k, ++n) s += tmp[k * w + x];
      v[y * w + x] = static_cast<float>(s / static_cast<double>(n));
    }
}

inline LineImage gaussian_blur(const LineImage& img, double sigma) {
  if (sigma < 0.05) return img;
  const auto r = static_cast<long>(std::ceil(3 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double z = 0;
  for (long i = -r; i <= r; ++i) z += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& x : k) x /= z;
  const long W = static_cast<long>(img.width), H = static_cast<long>(img.height);
  LineImage tmp = img, out = img;
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      double s = 0;
      for (long i = -r; i <= r; ++i)
        if (x + i >= 0 && x + i < W) s += k[static_cast<std::size_t>(i + r)] * img.pixels[static_cast<std::size_t>(y * W + x + i)];
      tmp.pixels[static_cast<std::size_t>(y * W + x)] = static_cast<float>(s);
    }
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      double s = 0;
      for (long i = -r; i <= r; ++i)
        if (y + i >= 0 && y + i < H) s += k[static_cast<std::size_t>(i + r)] * tmp.pixels[static_cast<std::size_t>((y + i) * W + x)];
      out.pixels[static_cast<std::size_t>(y * W + x)] = static_cast<float>(s);
    }
  return out;
}

inline LineImage morphology(const LineImage& img, std::size_t radius, bool dilate) {
  LineImage out = img;
  const long R = static_cast<long>(radius), W = static_cast<long>(img.width),
             H = static_cast<long>(img.height);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      float v = dilate ? 0.0f : 1.0f;
      for (long dy = -R; dy <= R; ++dy)
        for (long dx = -R; dx <= R; ++dx) {
          const long yy = y + dy, xx = x + dx;
          const float p = (yy < 0 || xx < 0 || yy >= H || xx >= W)
                              ? 0.0f
                              : img.pixels[static_cast<std::size_t>(yy * W + xx)];
          v = dilate ? std::max(v, p) : std::min(v, p);
        }
      out.pixels[static_cast<std::size_t>(y * W + x)] = v;
    }
  return out;
}

inline LineImage elastic(const LineImage& img, double amplitude, double radius, CounterRng& rng) {
  const std::size_t n = img.pixels.size();
  std::vector<float> dx(n), dy(n);
  for (std::size_t i = 0; i < n; ++i) {
    dx[i] = static_cast<float>(rng.uniform(-1, 1));
    dy[i] = static_cast<float>(rng.uniform(-1, 1));
  }
  const auto r = static_cast<std::size_t>(std::lround(radius));
  for (int pass = 0; pass < 2; ++pass) {
    box_blur(dx, img.width, img.height, r);
    box_blur(dy, img.width, img.height, r);
  }
  float peak = 1e-12f;
  for (std::size_t i = 0; i < n; ++i) peak = std::max({peak, std::abs(dx[i]), std::abs(dy[i])});
  const double s = amplitude / peak;
  LineImage out = img;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::size_t i = y * img.width + x;
      out.pixels[i] = sample_bilinear(img, static_cast<double>(x) + s * dx[i],
                                      static_cast<double>(y) + s * dy[i]);
    }
  return out;
}

}  // namespace detail

// Applies the augmentation family in a fixed order (shear, rotation, elastic,
// erosion/dilation, blur, noise, quantization). Every draw comes from a
// stream keyed by (spec.seed, draw_index), and each op consumes its draws
// whether or not it fires, so toggling one op leaves the others' parameters
// unchanged.
inline LineImage augment(const LineImage& img, const AugmentSpec& spec, std::uint64_t draw_index) {
  spec.validate();
  CounterRng rng(hash_combine(spec.seed, draw_index), 0);
  LineImage out = img;
  auto fires = [&](double p) { return rng.uniform() < p; };

  bool on = fires(spec.p_shear);
  double v = rng.uniform(spec.shear_min, spec.shear_max);
  if (on && v != 0.0) out = shear(out, v);

  on = fires(spec.p_rotation);
  v = rng.uniform(spec.rotation_min, spec.rotation_max);
  if (on && v != 0.0) out = rotate(out, v);

  on = fires(spec.p_elastic);
  CounterRng field(hash_combine(hash_combine(spec.seed, draw_index), 0xE1A5), 0);
  if (on && spec.elastic_amplitude > 0)
    out = detail::elastic(out, spec.elastic_amplitude, spec.elastic_radius, field);

  on = fires(spec.p_morph);
  const bool dilate = rng.uniform() < 0.5;
  if (on && spec.morph_radius > 0) out = detail::morphology(out, spec.morph_radius, dilate);

  on = fires(spec.p_blur);
  v = rng.uniform(spec.blur_min, spec.blur_max);
  if (on) out = detail::gaussian_blur(out, v);

  on = fires(spec.p_noise);
  v = rng.uniform(spec.noise_min, spec.noise_max);
  CounterRng noise(hash_combine(hash_combine(spec.seed, draw_index), 0x401E), 0);
  if (on && v > 0)
    for (auto& p : out.pixels) p += static_cast<float>(v * noise.normal());

  on = fires(spec.p_quantize);
  const std::size_t levels =
      spec.quantize_min + rng.below(spec.quantize_max - spec.quantize_min + 1);
  for (auto& p : out.pixels) p = std::clamp(p, 0.0f, 1.0f);
  if (on) {
    const float k = static_cast<float>(levels - 1);
    for (auto& p : out.pixels) p = std::round(p * k) / k;
  }
  out.skew_angle.reset();
  return out;
}

struct ManifestEntry {
  std::filesystem::path image;  // resolved against the manifest directory
  std::string relative;
  std::string transcript;
};

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw IntegrityError(path.string() + ":" + std::to_string(row) + ": expected path<TAB>transcript");
    ManifestEntry e;
    e.relative = line.substr(0, tab);
    e.transcript = line.substr(tab + 1);
    e.image = path.parent_path() / e.relative;
    out.push_back(std::move(e));
  }
  return out;
}

// Writes to a sibling temporary and renames, so a crash never leaves a
// half-written file under the final name.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path.string() + ": " + ec.message());
}

struct GenerateSpec {
  std::size_t count = 1;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentSpec augmentation;  // its seed is replaced by `seed`
  std::size_t threads = 1;
};

// Sample i renders corpus[i mod |corpus|] and augments it with draw index i.
// Images already present from an interrupted run are kept, so a rerun only
// fills gaps; the output depends on (seed, corpus, spec) alone.
inline std::vector<ManifestEntry> generate_dataset(const std::vector<std::string>& corpus,
                                                   const GlyphAtlas& atlas,
                                                   const GenerateSpec& spec,
                                                   const std::filesystem::path& out_dir) {
  if (spec.count == 0) throw ContractError("count must be at least 1");
  if (corpus.empty()) throw ContractError("corpus is empty");
  for (const auto& line : corpus) {
    if (line.find_first_of("\t\n\r") != std::string::npos)
      throw ContractError("transcripts may not contain tabs or line breaks");
    for (char32_t c : utf8::decode(line)) atlas.glyph(c);  // reject unknown characters early
  }
  AugmentSpec aug = spec.augmentation;
  aug.seed = spec.seed;
  aug.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  std::vector<ManifestEntry> entries(spec.count);
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(spec.count);
  auto work = [&] {
    for (std::size_t i = next++; i < spec.count; i = next++) {
      std::ostringstream name;
      name.width(6);
      name.fill('0');
      name << i;
      ManifestEntry& e = entries[i];
      e.relative = "images/" + name.str() + ".pgm";
      e.image = out_dir / e.relative;
      e.transcript = corpus[i % corpus.size()];
      if (std::filesystem::exists(e.image)) continue;
      try {
        LineImage img = render_line(e.transcript, atlas).image;
        if (spec.augment) img = augment(img, aug, i);
        const auto bytes = encode_pgm(img);
        write_file_atomic(e.image, std::string(bytes.begin(), bytes.end()));
      } catch (const std::exception& ex) {
        errors[i] = ex.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::max<std::size_t>(1, spec.threads); ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (const auto& err : errors)
    if (!err.empty()) throw IoError(err);

  std::string manifest;
  for (const auto& e : entries) manifest += e.relative + "\t" + e.transcript + "\n";
  write_file_atomic(out_dir / "manifest.tsv", manifest);
  return entries;
}

// Pseudo-words over an alphabet, for corpora when none is supplied.
inline std::vector<std::string> synthetic_corpus(std::u32string_view alphabet, std::size_t lines,
                                                 std::uint64_t seed, std::size_t min_len = 4,
                                                 std::size_t max_len = 12) {
  std::u32string letters;
  for (char32_t c : alphabet)
    if (c != U' ') letters.push_back(c);
  if (letters.empty()) throw ContractError("alphabet has no letters");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < lines; ++i) {
    CounterRng rng(hash_combine(seed, 0xC0A9), i);
    const std::size_t n = min_len + rng.below(max_len - min_len + 1);
    std::u32string s;
    std::size_t word = 0;
    while (s.size() < n) {
      if (word >= 2 && s.size() + 1 < n && rng.uniform() < 0.2 && alphabet.find(U' ') != std::u32string::npos) {
        s.push_back(U' ');
        word = 0;
        continue;
      }
      s.push_back(letters[rng.below(letters.size())]);
      ++word;
    }
    out.push_back(utf8::encode(s));
  }
  return out;
}

}  // namespace htr
