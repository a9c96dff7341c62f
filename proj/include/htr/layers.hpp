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

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "htr/attention.hpp"
#include "htr/ops.hpp"
#include "htr/rng.hpp"

namespace htr {

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

// Deterministic parameter initialization: every tensor's values depend only on
// (seed, parameter name), never on construction order.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : seed_(seed) {}

  template <typename T>
  Tensor<T> xavier(const std::string& name, std::size_t fan_in,
                   std::size_t fan_out) const {
    CounterRng rng(seed_, hash_string(name));
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<T> v(fan_in * fan_out);
    for (auto& x : v) x = static_cast<T>(rng.uniform(-a, a));
    return Tensor<T>({fan_in, fan_out}, std::move(v), true);
  }

  template <typename T>
  Tensor<T> normal(const std::string& name, Shape shape, double stddev) const {
    CounterRng rng(seed_, hash_string(name));
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(stddev * rng.normal());
    return Tensor<T>(std::move(shape), std::move(v), true);
  }

  template <typename T>
  Tensor<T> constant(Shape shape, T value) const {
    Tensor<T> t = Tensor<T>::full(std::move(shape), value);
    t.set_requires_grad(true);
    return t;
  }

 private:
  std::uint64_t seed_;
};

// Per-forward-pass state: training flag and the dropout random stream.
// Dropout draw n in step s is keyed by (seed, s, n), so a resumed run
// replays the same masks.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t draws = 0;

  CounterRng next_stream() {
    return CounterRng(hash_combine(seed, step), draws++);
  }

  template <typename T>
  Tensor<T> drop(const Tensor<T>& x) {
    if (!training || dropout <= 0.0) return x;
    CounterRng rng = next_stream();
    return htr::dropout(x, dropout, rng, true);
  }
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, const Initializer& init,
         const std::string& name)
      : weight_(init.xavier<T>(name + ".weight", in, out)),
        bias_(init.constant<T>({out}, T(0))) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    return linear(x, weight_, bias_);
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".weight", weight_});
    out.push_back({prefix + ".bias", bias_});
  }

  const Tensor<T>& weight() const { return weight_; }
  const Tensor<T>& bias() const { return bias_; }
  std::size_t in_features() const { return weight_.size(0); }
  std::size_t out_features() const { return weight_.size(1); }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(std::size_t d, const Initializer& init)
      : gain_(init.constant<T>({d}, T(1))), bias_(init.constant<T>({d}, T(0))) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    return layer_norm(x, gain_, bias_, T(1e-5));
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".gain", gain_});
    out.push_back({prefix + ".bias", bias_});
  }

 private:
  Tensor<T> gain_;
  Tensor<T> bias_;
};

// d_model -> intermediate -> d_model with GELU.
template <typename T>
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(std::size_t d, std::size_t hidden, const Initializer& init,
              const std::string& name)
      : up_(d, hidden, init, name + ".up"), down_(hidden, d, init, name + ".down") {}

  Tensor<T> operator()(const Tensor<T>& x) const { return down_(gelu(up_(x))); }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    up_.collect(prefix + ".up", out);
    down_.collect(prefix + ".down", out);
  }

 private:
  Linear<T> up_;
  Linear<T> down_;
};

// Concat(head_1..head_h) W^O with head_i = Attention(Q W_i^Q, K W_i^K,
// V W_i^V). The per-head projections are stored side by side: columns
// [i*d_head, (i+1)*d_head) of the query weight are W_i^Q, and likewise for
// keys and values.
template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t d_model, std::size_t heads,
                     const Initializer& init, const std::string& name)
      : heads_(heads),
        query_(d_model, d_model, init, name + ".query"),
        key_(d_model, d_model, init, name + ".key"),
        value_(d_model, d_model, init, name + ".value"),
        output_(d_model, d_model, init, name + ".output") {
    if (heads == 0 || d_model % heads != 0) {
      throw ContractError("d_model " + std::to_string(d_model) +
                          " is not divisible by " + std::to_string(heads) +
                          " heads");
    }
  }

  Tensor<T> operator()(const Tensor<T>& xq, const Tensor<T>& xkv,
                       const AttentionMask& mask) const {
    return output_(attention_heads(query_(xq), key_(xkv), value_(xkv), heads_,
                                   mask));
  }

  Tensor<T> project_query(const Tensor<T>& x) const { return query_(x); }
  Tensor<T> project_key(const Tensor<T>& x) const { return key_(x); }
  Tensor<T> project_value(const Tensor<T>& x) const { return value_(x); }
  Tensor<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                   const AttentionMask& mask) const {
    return output_(attention_heads(q, k, v, heads_, mask));
  }

  std::size_t heads() const { return heads_; }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    query_.collect(prefix + ".query", out);
    key_.collect(prefix + ".key", out);
    value_.collect(prefix + ".value", out);
    output_.collect(prefix + ".output", out);
  }

 private:
  std::size_t heads_ = 1;
  Linear<T> query_, key_, value_, output_;
};

struct LayerDims {
  std::size_t d_model = 64;
  std::size_t intermediate = 256;
  std::size_t heads = 4;
  bool pre_norm = false;
};

// Growing key/value rows of one self-attention layer during incremental
// decoding.
template <typename T>
struct KeyValueCache {
  std::vector<T> keys;
  std::vector<T> values;
  std::size_t length = 0;
};

// Keys and values of a fixed memory (encoder output) projected once.
template <typename T>
struct CrossMemory {
  Tensor<T> keys;
  Tensor<T> values;
  AttentionMask mask;
};

// Self-attention, optional cross-attention over a memory, feed-forward. Each
// sublayer is wrapped in residual + layer norm, post-norm by default.
template <typename T>
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(const LayerDims& dims, bool cross, const Initializer& init,
                   const std::string& name)
      : dims_(dims),
        has_cross_(cross),
        self_attn_(dims.d_model, dims.heads, init, name + ".self_attn"),
        self_norm_(dims.d_model, init),
        ff_(dims.d_model, dims.intermediate, init, name + ".ff"),
        ff_norm_(dims.d_model, init) {
    if (cross) {
      cross_attn_ = MultiHeadAttention<T>(dims.d_model, dims.heads, init,
                                          name + ".cross_attn");
      cross_norm_ = LayerNorm<T>(dims.d_model, init);
    }
  }

  bool has_cross() const { return has_cross_; }

  Tensor<T> forward(const Tensor<T>& x, const AttentionMask& self_mask,
                    const Tensor<T>* memory, const AttentionMask* memory_mask,
                    ForwardContext& ctx) const {
    Tensor<T> h = sublayer(x, self_norm_, ctx, [&](const Tensor<T>& in) {
      return self_attn_(in, in, self_mask);
    });
    if (has_cross_) {
      if (!memory || !memory_mask)
        throw ContractError("cross-attention layer needs a memory");
      h = sublayer(h, cross_norm_, ctx, [&](const Tensor<T>& in) {
        return cross_attn_(in, *memory, *memory_mask);
      });
    }
    return sublayer(h, ff_norm_, ctx,
                    [&](const Tensor<T>& in) { return ff_(in); });
  }

  CrossMemory<T> prepare_memory(const Tensor<T>& memory,
                                AttentionMask mask) const {
    return {cross_attn_.project_key(memory), cross_attn_.project_value(memory),
            std::move(mask)};
  }

  // One new position x[1, d] given the cached keys/values of all earlier
  // positions. Evaluation mode only.
  Tensor<T> step(const Tensor<T>& x, KeyValueCache<T>& cache,
                 const CrossMemory<T>* memory) const {
    ForwardContext eval;
    Tensor<T> h = sublayer(x, self_norm_, eval, [&](const Tensor<T>& in) {
      const Tensor<T> q = self_attn_.project_query(in);
      const Tensor<T> k = self_attn_.project_key(in);
      const Tensor<T> v = self_attn_.project_value(in);
      cache.keys.insert(cache.keys.end(), k.data().begin(), k.data().end());
      cache.values.insert(cache.values.end(), v.data().begin(), v.data().end());
      ++cache.length;
      const std::size_t d = dims_.d_model;
      Tensor<T> keys({cache.length, d}, cache.keys);
      Tensor<T> values({cache.length, d}, cache.values);
      return self_attn_.attend(q, keys, values, AttentionMask{});
    });
    if (has_cross_) {
      h = sublayer(h, cross_norm_, eval, [&](const Tensor<T>& in) {
        return cross_attn_.attend(cross_attn_.project_query(in), memory->keys,
                                  memory->values, memory->mask);
      });
    }
    return sublayer(h, ff_norm_, eval,
                    [&](const Tensor<T>& in) { return ff_(in); });
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    self_attn_.collect(prefix + ".self_attn", out);
    self_norm_.collect(prefix + ".self_norm", out);
    if (has_cross_) {
      cross_attn_.collect(prefix + ".cross_attn", out);
      cross_norm_.collect(prefix + ".cross_norm", out);
    }
    ff_.collect(prefix + ".ff", out);
    ff_norm_.collect(prefix + ".ff_norm", out);
  }

 private:
  template <typename F>
  Tensor<T> sublayer(const Tensor<T>& x, const LayerNorm<T>& norm,
                     ForwardContext& ctx, F&& body) const {
    if (dims_.pre_norm) return add(x, ctx.drop(body(norm(x))));
    return norm(add(x, ctx.drop(body(x))));
  }

  LayerDims dims_;
  bool has_cross_ = false;
  MultiHeadAttention<T> self_attn_;
  LayerNorm<T> self_norm_;
  MultiHeadAttention<T> cross_attn_;
  LayerNorm<T> cross_norm_;
  FeedForward<T> ff_;
  LayerNorm<T> ff_norm_;
};

}  // namespace htr
