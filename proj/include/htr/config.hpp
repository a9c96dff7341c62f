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

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include "htr/encoder.hpp"
#include "htr/decoder_stack.hpp"
#include "htr/error.hpp"
#include "htr/frontend.hpp"
#include "htr/schedule.hpp"
#include "htr/synth.hpp"

namespace htr {

enum class Architecture { transducer, cross_attention };

inline std::string to_string(Architecture a) {
  return a == Architecture::transducer ? "transducer" : "cross_attention";
}

inline Architecture parse_architecture(const std::string& s) {
  if (s == "transducer") return Architecture::transducer;
  if (s == "cross_attention") return Architecture::cross_attention;
  throw ContractError("architecture must be 'transducer' or 'cross_attention', got '" + s + "'");
}

struct SublayerConfig {
  std::size_t layers = 0;
  std::size_t hidden = 0;
  std::size_t intermediate = 0;
  std::size_t heads = 0;
  std::size_t max_positions = 0;
  double dropout = 0.1;

  LayerDims dims(bool pre_norm) const { return {hidden, intermediate, heads, pre_norm}; }
};

// Defaults are the full-scale parameter setup.
struct ModelConfig {
  Architecture architecture = Architecture::transducer;
  SublayerConfig encoder{12, 768, 3072, 12, 256, 0.1};
  SublayerConfig decoder{8, 512, 2048, 8, 512, 0.1};
  bool pre_norm = false;
  std::size_t height = 64;
  std::size_t patch_width = 12;
  std::size_t fixed_width = 0;
  bool deskew = true;
  double ink_threshold = 0.5;
  std::string vocabulary_path;
  std::uint64_t init_seed = 0;

  // Desk-scale overfit configuration: 64-wide, two layers on each side.
  static ModelConfig tiny(Architecture a) {
    ModelConfig c;
    c.architecture = a;
    c.encoder = {2, 64, 128, 4, 256, 0.0};
    c.decoder = {2, 64, 128, 4, 128, 0.0};
    c.height = 16;
    c.patch_width = 4;
    c.deskew = false;
    return c;
  }

  void validate() const {
    for (const auto* s : {&encoder, &decoder}) {
      const char* side = s == &encoder ? "encoder" : "decoder";
      if (s->hidden == 0 || s->heads == 0 || s->intermediate == 0 || s->max_positions == 0)
        throw ContractError(std::string(side) + " dimensions must be positive");
      if (s->hidden % s->heads)
        throw ContractError(std::string(side) + " hidden size " + std::to_string(s->hidden) +
                            " is not divisible by " + std::to_string(s->heads) + " heads");
      if (!(s->dropout >= 0.0 && s->dropout < 1.0))
        throw ContractError(std::string(side) + " dropout must lie in [0, 1)");
    }
    if (encoder.layers == 0) throw ContractError("encoder needs at least one layer");
    if (height == 0 || patch_width == 0) throw ContractError("patch geometry must be positive");
  }

  EncoderSpec encoder_spec() const {
    EncoderSpec s;
    s.patch_dim = height * patch_width;
    s.dims = encoder.dims(pre_norm);
    s.layers = encoder.layers;
    s.max_positions = encoder.max_positions;
    s.output_dim = decoder.hidden;
    return s;
  }

  DecoderStackSpec decoder_spec(std::size_t vocab) const {
    return {vocab, decoder.dims(pre_norm), decoder.layers, decoder.max_positions};
  }

  FrontendSpec frontend() const {
    FrontendSpec f;
    f.height = height;
    f.patch_width = patch_width;
    f.fixed_width = fixed_width;
    f.deskew = deskew;
    f.ink_threshold = ink_threshold;
    return f;
  }
};

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t steps = 3000;
  std::uint64_t seed = 0;
  LrSchedule schedule;
  double clip_norm = 1.0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  double label_smoothing = 0.0;
  std::size_t checkpoint_interval = 500;
  bool augment = false;
  AugmentSpec augmentation;
  // Early stop once training-set greedy CER falls below the target, checked
  // every eval_interval steps (0 = never).
  std::size_t eval_interval = 0;
  double target_cer = 0.0;

  void validate() const {
    if (batch_size == 0) throw ContractError("batch size must be positive");
    if (!(clip_norm >= 0)) throw ContractError("clip norm must be non-negative");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && epsilon > 0))
      throw ContractError("invalid Adam coefficients");
    if (!(label_smoothing >= 0 && label_smoothing < 1))
      throw ContractError("label smoothing must lie in [0, 1)");
    schedule.validate();
    augmentation.validate();
  }
};

namespace detail {

namespace pt = boost::property_tree;

template <typename V>
void read_key(const pt::ptree& tree, const std::string& key, V& value) {
  const auto node = tree.get_child_optional(pt::ptree::path_type(key, '.'));
  if (!node) return;
  try {
    if constexpr (std::is_same_v<V, bool>) {
      const std::string s = node->get_value<std::string>();
      if (s == "true" || s == "1") value = true;
      else if (s == "false" || s == "0") value = false;
      else throw ContractError("");
    } else {
      value = node->get_value<V>();
    }
  } catch (const std::exception&) {
    throw ContractError("config key " + key + " has an invalid value '" +
                        node->get_value<std::string>() + "'");
  }
}

template <typename V>
void write_key(pt::ptree& tree, const std::string& key, const V& value) {
  std::ostringstream os;
  os.precision(17);
  if constexpr (std::is_same_v<V, bool>) os << (value ? "true" : "false");
  else os << value;
  tree.put(pt::ptree::path_type(key, '.'), os.str());
}

// Single table of every key, used by both directions.
template <typename Visit>
void visit_keys(ModelConfig& m, TrainConfig& t, Visit&& f) {
  for (auto [side, s] : {std::pair{"encoder", &m.encoder}, std::pair{"decoder", &m.decoder}}) {
    const std::string p = side;
    f(p + ".layers", s->layers);
    f(p + ".hidden_size", s->hidden);
    f(p + ".intermediate_size", s->intermediate);
    f(p + ".attention_heads", s->heads);
    f(p + ".max_positions", s->max_positions);
    f(p + ".dropout", s->dropout);
  }
  f("model.pre_norm", m.pre_norm);
  f("model.init_seed", m.init_seed);
  f("frontend.height", m.height);
  f("frontend.patch_width", m.patch_width);
  f("frontend.fixed_width", m.fixed_width);
  f("frontend.deskew", m.deskew);
  f("frontend.ink_threshold", m.ink_threshold);
  f("vocabulary.path", m.vocabulary_path);
  f("train.batch_size", t.batch_size);
  f("train.steps", t.steps);
  f("train.seed", t.seed);
  f("train.clip_norm", t.clip_norm);
  f("train.beta1", t.beta1);
  f("train.beta2", t.beta2);
  f("train.epsilon", t.epsilon);
  f("train.label_smoothing", t.label_smoothing);
  f("train.checkpoint_interval", t.checkpoint_interval);
  f("train.eval_interval", t.eval_interval);
  f("train.target_cer", t.target_cer);
  f("train.augment", t.augment);
  f("schedule.warmup_steps", t.schedule.warmup_steps);
  f("schedule.constant_steps", t.schedule.constant_steps);
  f("schedule.decay_steps", t.schedule.decay_steps);
  f("schedule.start_lr", t.schedule.start_lr);
  f("schedule.peak_lr", t.schedule.peak_lr);
  f("schedule.floor_lr", t.schedule.floor_lr);
  auto& a = t.augmentation;
  f("augment.p_shear", a.p_shear);
  f("augment.shear_min", a.shear_min);
  f("augment.shear_max", a.shear_max);
  f("augment.p_rotation", a.p_rotation);
  f("augment.rotation_min", a.rotation_min);
  f("augment.rotation_max", a.rotation_max);
  f("augment.p_elastic", a.p_elastic);
  f("augment.elastic_amplitude", a.elastic_amplitude);
  f("augment.elastic_radius", a.elastic_radius);
  f("augment.p_morph", a.p_morph);
  f("augment.morph_radius", a.morph_radius);
  f("augment.p_blur", a.p_blur);
  f("augment.blur_min", a.blur_min);
  f("augment.blur_max", a.blur_max);
  f("augment.p_noise", a.p_noise);
  f("augment.noise_min", a.noise_min);
  f("augment.noise_max", a.noise_max);
  f("augment.p_quantize", a.p_quantize);
  f("augment.quantize_min", a.quantize_min);
  f("augment.quantize_max", a.quantize_max);
}

}  // namespace detail

// Both configurations as one INI document. Unknown keys are rejected so that
// a typo cannot silently fall back to a default.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  void validate() const {
    model.validate();
    train.validate();
  }

  std::string to_ini() const {
    detail::pt::ptree tree;
    RunConfig copy = *this;
    tree.put("model.architecture", to_string(model.architecture));
    detail::visit_keys(copy.model, copy.train, [&](const std::string& k, auto& v) {
      detail::write_key(tree, k, v);
    });
    std::ostringstream os;
    detail::pt::write_ini(os, tree);
    return os.str();
  }

  static RunConfig from_ini(const std::string& text, const RunConfig& defaults = {}) {
    detail::pt::ptree tree;
    std::istringstream is(text);
    try {
      detail::pt::read_ini(is, tree);
    } catch (const detail::pt::ini_parser_error& e) {
      throw ContractError(std::string("config: ") + e.what());
    }
    RunConfig c = defaults;
    std::set<std::string> known{"model.architecture"};
    detail::visit_keys(c.model, c.train, [&](const std::string& k, auto& v) {
      known.insert(k);
      detail::read_key(tree, k, v);
    });
    for (const auto& [section, body] : tree) {
      if (body.empty()) throw ContractError("config key '" + section + "' is outside a section");
      for (const auto& kv : body)
        if (!known.count(section + "." + kv.first))
          throw ContractError("unknown config key " + section + "." + kv.first);
    }
    if (auto a = tree.get_optional<std::string>("model.architecture"))
      c.model.architecture = parse_architecture(*a);
    c.validate();
    return c;
  }

  // Applies "section.key=value" assignments, validated like file keys.
  RunConfig with_overrides(const std::vector<std::string>& assignments) const {
    detail::pt::ptree tree;
    std::istringstream is(to_ini());
    detail::pt::read_ini(is, tree);
    for (const auto& a : assignments) {
      const auto eq = a.find('=');
      if (eq == std::string::npos || eq == 0)
        throw ContractError("override '" + a + "' is not of the form section.key=value");
      const std::string key = a.substr(0, eq);
      if (key.find('.') == std::string::npos)
        throw ContractError("override key '" + key + "' needs a section prefix");
      tree.put(detail::pt::ptree::path_type(key, '.'), a.substr(eq + 1));
    }
    std::ostringstream os;
    detail::pt::write_ini(os, tree);
    return from_ini(os.str());
  }

  static RunConfig load(const std::filesystem::path& path, const RunConfig& defaults = {}) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return from_ini(os.str(), defaults);
  }
};

// Closed-form parameter count; must equal the sum of tensor sizes collected
// from a constructed model.
namespace params {
inline std::size_t linear(std::size_t in, std::size_t out) { return in * out + out; }
inline std::size_t layer_norm(std::size_t d) { return 2 * d; }
inline std::size_t attention(std::size_t d) { return 4 * linear(d, d); }
inline std::size_t feed_forward(std::size_t d, std::size_t i) {
  return linear(d, i) + linear(i, d);
}
inline std::size_t transformer_layer(std::size_t d, std::size_t i, bool cross) {
  std::size_t n = attention(d) + layer_norm(d) + feed_forward(d, i) + layer_norm(d);
  if (cross) n += attention(d) + layer_norm(d);
  return n;
}
}  // namespace params

inline std::size_t encoder_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.encoder.hidden;
  std::size_t n = params::linear(c.height * c.patch_width, d) + c.encoder.max_positions * d +
                  c.encoder.layers * params::transformer_layer(d, c.encoder.intermediate, false);
  if (c.decoder.hidden != d) n += params::linear(d, c.decoder.hidden);
  return n;
}

inline std::size_t decoder_parameter_count(const ModelConfig& c, std::size_t vocab) {
  const std::size_t d = c.decoder.hidden;
  const bool cross = c.architecture == Architecture::cross_attention;
  return vocab * d + c.decoder.max_positions * d +
         c.decoder.layers * params::transformer_layer(d, c.decoder.intermediate, cross) +
         params::linear(d, vocab);
}

inline std::size_t analytic_parameter_count(const ModelConfig& c, std::size_t vocab) {
  return encoder_parameter_count(c) + decoder_parameter_count(c, vocab);
}

// Weights of the cross-attention sublayers alone: the difference between the
// two architectures at an equal layer split.
inline std::size_t cross_attention_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.decoder.hidden;
  return c.decoder.layers * (params::attention(d) + params::layer_norm(d));
}

}  // namespace htr
