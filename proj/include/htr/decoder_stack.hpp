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

#include <span>
#include <string>
#include <vector>

#include "htr/layers.hpp"

namespace htr {

struct DecoderStackSpec {
  std::size_t vocab = 0;
  LayerDims dims{32, 128, 4, false};
  std::size_t layers = 2;
  std::size_t max_positions = 512;
};

// Token embedding + learned positions + causal transformer layers, with or
// without cross-attention. The transducer's label encoder is the variant
// without cross-attention.
template <typename T>
class DecoderStack {
 public:
  struct State {
    std::vector<KeyValueCache<T>> caches;
    std::size_t length = 0;  // tokens consumed
    std::vector<T> feature;  // output at the latest position
  };

  DecoderStack() = default;
  DecoderStack(const DecoderStackSpec& spec, bool cross, const Initializer& init,
               const std::string& name)
      : spec_(spec),
        embed_(init.normal<T>(name + ".embed", {spec.vocab, spec.dims.d_model}, 0.02)),
        positions_(init.normal<T>(name + ".positions",
                                  {spec.max_positions, spec.dims.d_model}, 0.02)) {
    if (spec.vocab == 0) throw ContractError("decoder vocabulary is empty");
    for (std::size_t i = 0; i < spec.layers; ++i)
      layers_.emplace_back(spec.dims, cross, init, name + ".layers." + std::to_string(i));
  }

  const DecoderStackSpec& spec() const { return spec_; }
  std::size_t width() const { return spec_.dims.d_model; }

  // ids holds `batch` blocks of equal length; returns one feature row per id.
  Tensor<T> forward(std::span<const int> ids, std::size_t batch, const Tensor<T>* memory,
                    const AttentionMask* memory_mask, ForwardContext& ctx) const {
    if (batch == 0 || ids.size() % batch)
      throw DimensionError("decoder: ids not divisible into " + std::to_string(batch) + " blocks");
    const std::size_t length = ids.size() / batch;
    if (length > spec_.max_positions)
      throw CapacityError("sequence of " + std::to_string(length) + " tokens exceeds " +
                          std::to_string(spec_.max_positions) + " positions");
    AttentionMask causal;
    causal.batch = batch;
    causal.causal = true;
    Tensor<T> x = add_tiled(embedding(embed_, ids), slice_rows(positions_, 0, length));
    x = ctx.drop(x);
    for (const auto& layer : layers_) x = layer.forward(x, causal, memory, memory_mask, ctx);
    return x;
  }

  std::vector<CrossMemory<T>> prepare_memory(const Tensor<T>& memory,
                                             const AttentionMask& mask) const {
    std::vector<CrossMemory<T>> out;
    for (const auto& layer : layers_) out.push_back(layer.prepare_memory(memory, mask));
    return out;
  }

  // Consumes one more token. Evaluation mode; memory is empty for the
  // variant without cross-attention.
  State step(const State& prev, int token,
             const std::vector<CrossMemory<T>>& memory = {}) const {
    if (prev.length >= spec_.max_positions)
      throw CapacityError("decoder state is full at " + std::to_string(spec_.max_positions) +
                          " positions");
    NoGradGuard no_grad;
    State next = prev;
    next.caches.resize(layers_.size());
    const int ids[1] = {token};
    Tensor<T> x = add(embedding(embed_, std::span<const int>(ids)),
                      slice_rows(positions_, prev.length, prev.length + 1));
    for (std::size_t i = 0; i < layers_.size(); ++i)
      x = layers_[i].step(x, next.caches[i], memory.empty() ? nullptr : &memory[i]);
    next.length = prev.length + 1;
    next.feature.assign(x.data().begin(), x.data().end());
    return next;
  }

  bool full(const State& s) const { return s.length >= spec_.max_positions; }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".embed", embed_});
    out.push_back({prefix + ".positions", positions_});
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].collect(prefix + ".layers." + std::to_string(i), out);
  }

 private:
  DecoderStackSpec spec_;
  Tensor<T> embed_;
  Tensor<T> positions_;
  std::vector<TransformerLayer<T>> layers_;
};

// Each sample's ids with `prefix` in front, right-padded with `pad` to the
// longest sample: the row layout DecoderStack::forward expects.
inline std::vector<int> pad_batch(const std::vector<std::vector<int>>& seqs, int prefix, int pad,
                                  std::size_t* block = nullptr) {
  std::size_t longest = 0;
  for (const auto& s : seqs) longest = std::max(longest, s.size());
  const std::size_t len = longest + 1;
  std::vector<int> out;
  out.reserve(seqs.size() * len);
  for (const auto& s : seqs) {
    out.push_back(prefix);
    out.insert(out.end(), s.begin(), s.end());
    out.insert(out.end(), len - 1 - s.size(), pad);
  }
  if (block) *block = len;
  return out;
}

}  // namespace htr
