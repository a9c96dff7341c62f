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
#include <string>
#include <vector>

#include "htr/config.hpp"
#include "htr/crossattn.hpp"
#include "htr/encoder.hpp"
#include "htr/frontend.hpp"
#include "htr/transducer.hpp"

namespace htr {

struct DecodeOptions {
  std::size_t beam = 1;
  std::size_t max_symbols = 10;  // transducer: labels per frame
  bool length_norm = false;      // cross-attention only
};

// Visual encoder plus the configured decoder.
template <typename T>
class Recognizer {
 public:
  Recognizer(const ModelConfig& cfg, std::size_t vocab) : cfg_(cfg), vocab_(vocab) {
    cfg.validate();
    if (vocab <= static_cast<std::size_t>(Vocabulary::kReserved))
      throw ContractError("vocabulary has no ordinary tokens");
    const Initializer init(cfg.init_seed);
    encoder_ = VisualEncoder<T>(cfg.encoder_spec(), init);
    if (cfg.architecture == Architecture::transducer)
      transducer_.emplace(cfg.decoder_spec(vocab), init);
    else
      crossattn_.emplace(cfg.decoder_spec(vocab), init);
  }

  const ModelConfig& config() const { return cfg_; }
  std::size_t vocab() const { return vocab_; }
  const VisualEncoder<T>& encoder() const { return encoder_; }

  ParameterList<T> parameters() const {
    ParameterList<T> out;
    encoder_.collect("encoder", out);
    if (transducer_) transducer_->collect(out);
    if (crossattn_) crossattn_->collect(out);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

  static Tensor<T> patch_tensor(const PatchBatch& b) {
    std::vector<T> v(b.values.begin(), b.values.end());
    return Tensor<T>({b.batch * b.length, b.patch_dim}, std::move(v));
  }

  // Training objective for one padded batch: transducer NLL averaged over
  // samples, or token cross-entropy averaged over non-pad positions.
  Tensor<T> loss(const PatchBatch& batch, const std::vector<std::vector<int>>& targets,
                 std::uint64_t seed, std::uint64_t step, double smoothing = 0.0) const {
    if (targets.size() != batch.batch) throw DimensionError("loss: one target per line required");
    ForwardContext enc{true, cfg_.encoder.dropout, hash_combine(seed, 1), step, 0};
    ForwardContext dec{true, cfg_.decoder.dropout, hash_combine(seed, 2), step, 0};
    Tensor<T> visual = encoder_.encode(patch_tensor(batch), batch.batch, batch.key_valid, enc);
    if (transducer_) {
      Tensor<T> total = transducer_->loss(visual, batch.length, batch.lengths, targets, dec);
      return scale(total, T(1) / static_cast<T>(batch.batch));
    }
    return crossattn_->loss(visual, batch.length, batch.key_valid, targets, dec, smoothing);
  }

  // Evaluation-mode features [batch*length, decoder width].
  Tensor<T> encode(const PatchBatch& batch) const {
    NoGradGuard no_grad;
    ForwardContext eval;
    return encoder_.encode(patch_tensor(batch), batch.batch, batch.key_valid, eval);
  }

  // Decodes line b of an encoded batch. Only its real frames are used, so
  // the result does not depend on how the batch was padded.
  Hypothesis decode(const Tensor<T>& visual, const PatchBatch& batch, std::size_t b,
                    const DecodeOptions& opt = {}) const {
    NoGradGuard no_grad;
    const std::size_t begin = b * batch.length;
    Tensor<T> frames = slice_rows(visual, begin, begin + batch.lengths.at(b));
    if (transducer_) {
      TransducerSearchOptions o;
      o.beam = opt.beam;
      o.max_symbols = opt.max_symbols;
      o.blank = Vocabulary::kBlank;
      return transducer_decode(*transducer_, frames, o);
    }
    SequenceSearchOptions o;
    o.beam = opt.beam;
    o.max_len = cfg_.decoder.max_positions - 1;
    o.length_norm = opt.length_norm;
    o.eos = Vocabulary::kEos;
    return crossattn_decode(*crossattn_, frames, o);
  }

 private:
  ModelConfig cfg_;
  std::size_t vocab_;
  VisualEncoder<T> encoder_;
  std::optional<TransducerDecoder<T>> transducer_;
  std::optional<CrossAttnDecoder<T>> crossattn_;
};

}  // namespace htr
