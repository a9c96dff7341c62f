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
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "htr/decoder_stack.hpp"
#include "htr/search.hpp"
#include "htr/tokenizer.hpp"

namespace htr {

// Mean negative log-likelihood of `reference` over the rows whose pad flag is
// zero. With smoothing e the target distribution is (1-e) one-hot + e uniform.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> reference,
                        std::span<const std::uint8_t> is_pad, double smoothing = 0.0) {
  if (logits.rank() != 2 || logits.rows() != reference.size() ||
      (!is_pad.empty() && is_pad.size() != reference.size()))
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(reference.size()) + " targets");
  std::size_t count = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) count += is_pad.empty() || !is_pad[i];
  if (count == 0) throw ContractError("cross_entropy: every position is padding");
  Tensor<T> logp = log_softmax(logits, -1);
  std::vector<int> ids(reference.begin(), reference.end());
  std::vector<T> w(reference.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const bool real = is_pad.empty() || !is_pad[i];
    w[i] = real ? static_cast<T>(-(1.0 - smoothing) / static_cast<double>(count)) : T(0);
    if (!real) ids[i] = 0;
  }
  Tensor<T> loss = weighted_sum(pick(logp, ids), std::span<const T>(w));
  if (smoothing > 0.0) {
    const std::size_t v = logits.cols();
    std::vector<T> u(logits.numel(), T(0));
    for (std::size_t i = 0; i < reference.size(); ++i)
      if (is_pad.empty() || !is_pad[i])
        for (std::size_t k = 0; k < v; ++k)
          u[i * v + k] = static_cast<T>(-smoothing / static_cast<double>(count * v));
    loss = add(loss, weighted_sum(logp, std::span<const T>(u)));
  }
  return loss;
}

// Causal self-attention + cross-attention over the visual features + output
// projection to the vocabulary.
template <typename T>
class CrossAttnDecoder {
 public:
  CrossAttnDecoder() = default;
  CrossAttnDecoder(const DecoderStackSpec& spec, const Initializer& init)
      : stack_(spec, true, init, "decoder"),
        output_(spec.dims.d_model, spec.vocab, init, "decoder.output") {}

  std::size_t width() const { return stack_.width(); }
  std::size_t vocab() const { return stack_.spec().vocab; }
  const DecoderStack<T>& stack() const { return stack_; }
  const Linear<T>& output() const { return output_; }

  // visual: batch blocks of `block` rows, key_valid flags (empty = all real);
  // ids: batch blocks of input tokens (BOS first). One logit row per id.
  Tensor<T> logits(const Tensor<T>& visual, std::size_t block,
                   std::span<const std::uint8_t> key_valid, std::span<const int> ids,
                   std::size_t batch, ForwardContext& ctx) const {
    if (visual.rank() != 2 || visual.cols() != width() || visual.rows() != batch * block)
      throw DimensionError("cross-attention decoder: visual features " +
                           shape_str(visual.shape()) + " do not match the batch layout");
    AttentionMask mm;
    mm.batch = batch;
    mm.key_valid.assign(key_valid.begin(), key_valid.end());
    return output_(stack_.forward(ids, batch, &visual, &mm, ctx));
  }

  // Single line, evaluation mode: an input that begins with BOS.
  Tensor<T> teacher_forced_logits(const Tensor<T>& visual, std::span<const int> input) const {
    if (input.empty() || input[0] != Vocabulary::kBos)
      throw ContractError("decoder input must begin with BOS");
    ForwardContext eval;
    return logits(visual, visual.rows(), {}, input, 1, eval);
  }

  // Mean token NLL of [y_1..y_U, EOS] given [BOS, y_1..y_U] over every
  // sample, padding excluded.
  Tensor<T> loss(const Tensor<T>& visual, std::size_t block,
                 std::span<const std::uint8_t> key_valid,
                 const std::vector<std::vector<int>>& targets, ForwardContext& ctx,
                 double smoothing = 0.0) const {
    std::size_t len = 0;
    const std::vector<int> input = pad_batch(targets, Vocabulary::kBos, Vocabulary::kPad, &len);
    std::vector<int> reference(input.size(), Vocabulary::kPad);
    std::vector<std::uint8_t> pad(input.size(), 1);
    for (std::size_t b = 0; b < targets.size(); ++b) {
      for (std::size_t i = 0; i < targets[b].size(); ++i) {
        reference[b * len + i] = targets[b][i];
        pad[b * len + i] = 0;
      }
      reference[b * len + targets[b].size()] = Vocabulary::kEos;
      pad[b * len + targets[b].size()] = 0;
    }
    Tensor<T> z = logits(visual, block, key_valid, input, targets.size(), ctx);
    return cross_entropy(z, reference, pad, smoothing);
  }

  void collect(ParameterList<T>& out) const {
    stack_.collect("decoder", out);
    output_.collect("decoder.output", out);
  }

 private:
  DecoderStack<T> stack_;
  Linear<T> output_;
};

// Incremental scorer: cross-attention keys/values are projected once per
// layer, self-attention keys/values are cached per hypothesis.
template <typename T>
class CrossAttnScorer {
 public:
  struct Node {
    typename DecoderStack<T>::State stack;
    std::vector<double> log_probs;
  };
  using State = std::shared_ptr<const Node>;

  CrossAttnScorer(const CrossAttnDecoder<T>& dec, const Tensor<T>& visual,
                  std::span<const std::uint8_t> key_valid = {})
      : dec_(&dec) {
    NoGradGuard no_grad;
    if (visual.rank() != 2 || visual.cols() != dec.width())
      throw DimensionError("scorer: visual features " + shape_str(visual.shape()) +
                           " do not match decoder width " + std::to_string(dec.width()));
    AttentionMask mask;
    mask.key_valid.assign(key_valid.begin(), key_valid.end());
    memory_ = dec.stack().prepare_memory(visual, mask);
  }

  State initial() const { return make(dec_->stack().step({}, Vocabulary::kBos, memory_)); }
  State advance(const State& s, int token) const {
    return make(dec_->stack().step(s->stack, token, memory_));
  }
  bool can_extend(const State& s) const { return !dec_->stack().full(s->stack); }
  std::vector<double> log_probs(const State& s) const { return s->log_probs; }

 private:
  State make(typename DecoderStack<T>::State st) const {
    NoGradGuard no_grad;
    Tensor<T> f({1, st.feature.size()}, st.feature);
    Tensor<T> z = dec_->output()(f);
    auto node = std::make_shared<Node>();
    const std::size_t v = z.numel();
    node->log_probs.resize(v);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < v; ++k) mx = std::max(mx, static_cast<double>(z[k]));
    double sum = 0;
    for (std::size_t k = 0; k < v; ++k) sum += std::exp(static_cast<double>(z[k]) - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t k = 0; k < v; ++k) node->log_probs[k] = static_cast<double>(z[k]) - lse;
    node->stack = std::move(st);
    return node;
  }

  const CrossAttnDecoder<T>* dec_;
  std::vector<CrossMemory<T>> memory_;
};

template <typename T>
Hypothesis crossattn_decode(const CrossAttnDecoder<T>& dec, const Tensor<T>& visual,
                            const SequenceSearchOptions& opt = {},
                            std::span<const std::uint8_t> key_valid = {}) {
  CrossAttnScorer<T> scorer(dec, visual, key_valid);
  return opt.beam <= 1 ? sequence_greedy(scorer, opt) : sequence_beam(scorer, opt);
}

}  // namespace htr
