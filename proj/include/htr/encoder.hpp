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

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "htr/layers.hpp"

namespace htr {

struct EncoderSpec {
  std::size_t patch_dim = 64 * 12;
  LayerDims dims{768, 3072, 12, false};
  std::size_t layers = 12;
  std::size_t max_positions = 256;
  // Width of the produced features; a linear projection is appended when it
  // differs from dims.d_model.
  std::size_t output_dim = 768;
};

// Patch embedding + learned absolute positions + stacked self-attention
// layers (+ projection to the decoder width).
template <typename T>
class VisualEncoder {
 public:
  VisualEncoder() = default;
  VisualEncoder(const EncoderSpec& spec, const Initializer& init,
                const std::string& name = "encoder")
      : spec_(spec),
        patch_embed_(spec.patch_dim, spec.dims.d_model, init,
                     name + ".patch_embed"),
        positions_(init.normal<T>(name + ".positions",
                                  {spec.max_positions, spec.dims.d_model},
                                  0.02)) {
    for (std::size_t i = 0; i < spec.layers; ++i)
      layers_.emplace_back(spec.dims, false, init,
                           name + ".layers." + std::to_string(i));
    if (spec.output_dim != spec.dims.d_model)
      projection_.emplace(spec.dims.d_model, spec.output_dim, init,
                          name + ".projection");
  }

  const EncoderSpec& spec() const { return spec_; }
  std::size_t output_dim() const { return spec_.output_dim; }

  // patches holds `batch` consecutive blocks of L rows each; key_valid
  // (batch*L, empty = all real) excludes padding patches from attention.
  // Returns [batch*L, output_dim].
  Tensor<T> encode(const Tensor<T>& patches, std::size_t batch,
                   std::span<const std::uint8_t> key_valid,
                   ForwardContext& ctx) const {
    if (patches.rank() != 2 || patches.cols() != spec_.patch_dim) {
      throw DimensionError("encoder expects [L, " +
                           std::to_string(spec_.patch_dim) + "] patches, got " +
                           shape_str(patches.shape()));
    }
    if (batch == 0 || patches.rows() % batch)
      throw DimensionError("encoder: rows not divisible by batch");
    const std::size_t length = patches.rows() / batch;
    if (length > spec_.max_positions) {
      throw CapacityError("sequence of " + std::to_string(length) +
                          " patches exceeds " +
                          std::to_string(spec_.max_positions) + " positions");
    }
    AttentionMask mask;
    mask.batch = batch;
    mask.key_valid.assign(key_valid.begin(), key_valid.end());
    Tensor<T> x = add_tiled(patch_embed_(patches),
                            slice_rows(positions_, 0, length));
    x = ctx.drop(x);
    for (const auto& layer : layers_)
      x = layer.forward(x, mask, nullptr, nullptr, ctx);
    if (projection_) x = (*projection_)(x);
    return x;
  }

  // Single sequence [L, patch_dim] -> [L, output_dim], evaluation mode.
  Tensor<T> encode(const Tensor<T>& patch_sequence) const {
    ForwardContext eval;
    return encode(patch_sequence, 1, {}, eval);
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    patch_embed_.collect(prefix + ".patch_embed", out);
    out.push_back({prefix + ".positions", positions_});
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].collect(prefix + ".layers." + std::to_string(i), out);
    if (projection_) projection_->collect(prefix + ".projection", out);
  }

 private:
  EncoderSpec spec_;
  Linear<T> patch_embed_;
  Tensor<T> positions_;
  std::vector<TransformerLayer<T>> layers_;
  std::optional<Linear<T>> projection_;
};

}  // namespace htr
