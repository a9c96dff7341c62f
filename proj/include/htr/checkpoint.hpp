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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "htr/config.hpp"
#include "htr/error.hpp"
#include "htr/model.hpp"
#include "htr/optim.hpp"
#include "htr/synth.hpp"
#include "htr/tokenizer.hpp"

namespace htr {

// Binary layout, all integers little-endian:
//   "HTRCKPT\0" | u32 version | str config | str vocabulary
//   | u64 step | u64 seed | u64 data_position | u64 adam_updates
//   | u32 count | count x (str name | u32 rank | u64 dims[rank]
//                          | f32 value[n] | f32 m[n] | f32 v[n])
//   | u64 FNV-1a of everything before it
// where str = u64 length + UTF-8 bytes.
struct Checkpoint {
  static constexpr char kMagic[8] = {'H', 'T', 'R', 'C', 'K', 'P', 'T', '\0'};
  static constexpr std::uint32_t kVersion = 1;

  struct Entry {
    std::string name;
    Shape shape;
    std::vector<float> value, m, v;
  };

  RunConfig config;
  Vocabulary vocabulary;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::uint64_t data_position = 0;  // samples drawn so far by the batch stream
  std::uint64_t adam_updates = 0;
  std::vector<Entry> entries;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.value.size();
    return n;
  }

  std::string serialize() const {
    std::string out(kMagic, sizeof kMagic);
    put32(out, kVersion);
    put_str(out, config.to_ini());
    put_str(out, vocabulary.serialize());
    put64(out, step);
    put64(out, seed);
    put64(out, data_position);
    put64(out, adam_updates);
    put32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
      put_str(out, e.name);
      put32(out, static_cast<std::uint32_t>(e.shape.size()));
      for (auto d : e.shape) put64(out, d);
      for (const auto* vec : {&e.value, &e.m, &e.v})
        for (float f : *vec) put32(out, std::bit_cast<std::uint32_t>(f));
    }
    put64(out, fnv1a(out));
    return out;
  }

  static Checkpoint parse(const std::string& bytes, const std::string& origin = "checkpoint") {
    Reader r{bytes, 0, origin};
    if (bytes.size() < sizeof kMagic + 12 || std::memcmp(bytes.data(), kMagic, sizeof kMagic))
      throw IntegrityError(origin + ": not a checkpoint (bad magic)");
    const std::uint64_t stored = r.at64(bytes.size() - 8);
    if (stored != fnv1a(std::string_view(bytes).substr(0, bytes.size() - 8)))
      throw IntegrityError(origin + ": checksum mismatch, file is corrupt");
    r.pos = sizeof kMagic;
    if (const auto v = r.u32(); v != kVersion)
      throw IntegrityError(origin + ": unsupported format version " + std::to_string(v));
    Checkpoint c;
    try {
      c.config = RunConfig::from_ini(r.str());
      c.vocabulary = Vocabulary::parse(r.str());
    } catch (const IntegrityError&) {
      throw;
    } catch (const Error& e) {
      throw IntegrityError(origin + ": embedded configuration is invalid: " + e.what());
    }
    c.step = r.u64();
    c.seed = r.u64();
    c.data_position = r.u64();
    c.adam_updates = r.u64();
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      Entry e;
      e.name = r.str();
      const std::uint32_t rank = r.u32();
      if (rank > 8) throw IntegrityError(origin + ": implausible tensor rank");
      for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.u64());
      const std::size_t n = shape_numel(e.shape);
      if (n > (bytes.size() - r.pos) / 12) throw IntegrityError(origin + ": truncated tensor " + e.name);
      for (auto* vec : {&e.value, &e.m, &e.v}) {
        vec->resize(n);
        for (auto& f : *vec) f = std::bit_cast<float>(r.u32());
      }
      c.entries.push_back(std::move(e));
    }
    if (r.pos != bytes.size() - 8) throw IntegrityError(origin + ": trailing bytes");
    return c;
  }

  void save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::string bytes{std::istreambuf_iterator<char>(in), {}};
    return parse(bytes, path.string());
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  static void put32(std::string& o, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) o.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  static void put64(std::string& o, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) o.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  static void put_str(std::string& o, const std::string& s) {
    put64(o, s.size());
    o += s;
  }

  struct Reader {
    const std::string& b;
    std::size_t pos;
    const std::string& origin;

    void need(std::size_t n) const {
      if (n > b.size() - 8 - pos) throw IntegrityError(origin + ": truncated");
    }
    std::uint64_t at64(std::size_t p) const {
      std::uint64_t v = 0;
      for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[p + i]);
      return v;
    }
    std::uint32_t u32() {
      need(4);
      std::uint32_t v = 0;
      for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[pos + i]);
      pos += 4;
      return v;
    }
    std::uint64_t u64() {
      need(8);
      const std::uint64_t v = at64(pos);
      pos += 8;
      return v;
    }
    std::string str() {
      const std::uint64_t n = u64();
      need(n);
      std::string s = b.substr(pos, n);
      pos += n;
      return s;
    }
  };
};

template <typename T>
Checkpoint capture(const Recognizer<T>& model, const Adam<T>& adam, const RunConfig& config,
                   const Vocabulary& vocab, std::uint64_t step, std::uint64_t data_position) {
  Checkpoint c;
  c.config = config;
  c.vocabulary = vocab;
  c.step = step;
  c.seed = config.train.seed;
  c.data_position = data_position;
  c.adam_updates = adam.updates();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Checkpoint::Entry e;
    e.name = params[i].name;
    e.shape = params[i].tensor.shape();
    auto d = params[i].tensor.data();
    e.value.assign(d.begin(), d.end());
    if (i < adam.moments().size()) {
      e.m.assign(adam.moments()[i].m.begin(), adam.moments()[i].m.end());
      e.v.assign(adam.moments()[i].v.begin(), adam.moments()[i].v.end());
    } else {
      e.m.assign(e.value.size(), 0.0f);
      e.v.assign(e.value.size(), 0.0f);
    }
    c.entries.push_back(std::move(e));
  }
  return c;
}

// Copies stored tensors into a model built from the same configuration,
// and moments into the optimizer when given.
template <typename T>
void restore(const Checkpoint& c, const Recognizer<T>& model, Adam<T>* adam = nullptr) {
  const auto params = model.parameters();
  if (params.size() != c.entries.size())
    throw IntegrityError("checkpoint holds " + std::to_string(c.entries.size()) +
                         " tensors, model has " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = c.entries[i];
    Tensor<T> t = params[i].tensor;
    if (e.name != params[i].name || e.shape != t.shape())
      throw IntegrityError("checkpoint tensor " + e.name + " " + shape_str(e.shape) +
                           " does not match model tensor " + params[i].name + " " +
                           shape_str(t.shape()));
    auto w = t.mutable_data();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = static_cast<T>(e.value[k]);
    if (adam) {
      auto& mo = adam->moments()[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        mo.m[k] = static_cast<T>(e.m[k]);
        mo.v[k] = static_cast<T>(e.v[k]);
      }
    }
  }
  if (adam) adam->set_updates(c.adam_updates);
}

template <typename T>
Recognizer<T> model_from_checkpoint(const Checkpoint& c) {
  Recognizer<T> model(c.config.model, c.vocabulary.size());
  restore(c, model);
  return model;
}

}  // namespace htr
