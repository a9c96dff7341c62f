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
#include "htr/lattice.hpp"
#include "htr/search.hpp"
#include "htr/tokenizer.hpp"

namespace htr {

// Label encoder (causal, no access to visual features) + additive joiner:
// joint logits [t, u] = W (visual_t + label_u) + b, where label_0 is the
// feature of the BOS start token.
template <typename T>
class TransducerDecoder {
 public:
  TransducerDecoder() = default;
  TransducerDecoder(const DecoderStackSpec& spec, const Initializer& init)
      : labels_(spec, false, init, "label_encoder"),
        joiner_(spec.dims.d_model, spec.vocab, init, "joiner.output") {}

  std::size_t width() const { return labels_.width(); }
  std::size_t vocab() const { return labels_.spec().vocab; }
  const DecoderStack<T>& label_encoder() const { return labels_; }
  const Linear<T>& joiner() const { return joiner_; }

  // [U+1, d] label features for one target (BOS prepended internally).
  Tensor<T> label_features(std::span<const int> labels, ForwardContext& ctx) const {
    std::vector<int> ids{Vocabulary::kBos};
    ids.insert(ids.end(), labels.begin(), labels.end());
    return labels_.forward(ids, 1, nullptr, nullptr, ctx);
  }

  // visual [T, d] x label features [U+1, d] -> [T*(U+1), |V|].
  Tensor<T> joint_logits(const Tensor<T>& visual, const Tensor<T>& label_feats) const {
    if (visual.rank() != 2 || label_feats.rank() != 2 || visual.cols() != width() ||
        label_feats.cols() != width())
      throw DimensionError("joiner expects width " + std::to_string(width()) + ", got " +
                           shape_str(visual.shape()) + " and " + shape_str(label_feats.shape()));
    return joiner_(outer_add(visual, label_feats));
  }

  Tensor<T> joint_logits(const Tensor<T>& visual, std::span<const int> labels) const {
    ForwardContext eval;
    return joint_logits(visual, label_features(labels, eval));
  }

  // Sum over the batch of -log P(y_b | x_b). visual holds batch blocks of
  // `block` rows; only the first frames[b] rows of block b are real.
  Tensor<T> loss(const Tensor<T>& visual, std::size_t block, std::span<const std::size_t> frames,
                 const std::vector<std::vector<int>>& targets, ForwardContext& ctx) const {
    const std::size_t batch = targets.size();
    if (frames.size() != batch || visual.rows() != batch * block)
      throw DimensionError("transducer loss: batch layout mismatch");
    std::size_t label_block = 0;
    const std::vector<int> ids = pad_batch(targets, Vocabulary::kBos, Vocabulary::kPad, &label_block);
    Tensor<T> feats = labels_.forward(ids, batch, nullptr, nullptr, ctx);
    Tensor<T> total;
    for (std::size_t b = 0; b < batch; ++b) {
      if (frames[b] == 0 || frames[b] > block)
        throw ContractError("transducer loss: sample has no frames");
      Tensor<T> v = slice_rows(visual, b * block, b * block + frames[b]);
      Tensor<T> l = slice_rows(feats, b * label_block, b * label_block + targets[b].size() + 1);
      Tensor<T> nll = transducer_loss(joint_logits(v, l), frames[b], targets[b]);
      total = b == 0 ? nll : add(total, nll);
    }
    return total;
  }

  void collect(ParameterList<T>& out) const {
    labels_.collect("label_encoder", out);
    joiner_.collect("joiner.output", out);
  }

 private:
  DecoderStack<T> labels_;
  Linear<T> joiner_;
};

// Search adapter over one encoded line. The joiner is linear, so its visual
// half W v_t + b is computed once per frame and its label half W l_u once per
// label-encoder state.
template <typename T>
class TransducerScorer {
 public:
  struct Node {
    typename DecoderStack<T>::State stack;
    std::vector<double> label_logits;
  };
  using State = std::shared_ptr<const Node>;

  TransducerScorer(const TransducerDecoder<T>& dec, const Tensor<T>& visual) : dec_(&dec) {
    NoGradGuard no_grad;
    if (visual.rank() != 2 || visual.cols() != dec.width())
      throw DimensionError("scorer: visual features " + shape_str(visual.shape()) +
                           " do not match decoder width " + std::to_string(dec.width()));
    frames_ = visual.rows();
    Tensor<T> z = dec.joiner()(visual);
    visual_logits_.assign(z.data().begin(), z.data().end());
  }

  std::size_t frames() const { return frames_; }

  State initial() const { return make(dec_->label_encoder().step({}, Vocabulary::kBos)); }

  State advance(const State& s, int token) const {
    return make(dec_->label_encoder().step(s->stack, token));
  }

  bool can_emit(const State& s) const { return !dec_->label_encoder().full(s->stack); }

  std::vector<double> log_probs(std::size_t t, const State& s) const {
    const std::size_t v = dec_->vocab();
    std::vector<double> z(v);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < v; ++k) {
      z[k] = visual_logits_[t * v + k] + s->label_logits[k];
      mx = std::max(mx, z[k]);
    }
    double sum = 0;
    for (double x : z) sum += std::exp(x - mx);
    const double lse = mx + std::log(sum);
    for (double& x : z) x -= lse;
    return z;
  }

 private:
  State make(typename DecoderStack<T>::State st) const {
    auto node = std::make_shared<Node>();
    const Tensor<T>& w = dec_->joiner().weight();
    const std::size_t d = w.rows(), v = w.cols();
    node->label_logits.assign(v, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      const double f = st.feature[i];
      for (std::size_t k = 0; k < v; ++k) node->label_logits[k] += f * w.data()[i * v + k];
    }
    node->stack = std::move(st);
    return node;
  }

  const TransducerDecoder<T>* dec_;
  std::size_t frames_ = 0;
  std::vector<double> visual_logits_;
};

template <typename T>
Hypothesis transducer_decode(const TransducerDecoder<T>& dec, const Tensor<T>& visual,
                             const TransducerSearchOptions& opt = {}) {
  TransducerScorer<T> scorer(dec, visual);
  return opt.beam <= 1 ? transducer_greedy(scorer, scorer.frames(), opt)
                       : transducer_beam(scorer, scorer.frames(), opt);
}

}  // namespace htr
