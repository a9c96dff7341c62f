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
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "htr/error.hpp"
#include "htr/ops.hpp"

namespace htr {

namespace detail {

inline double log_add(double a, double b) {
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  if (a == ninf) return b;
  if (b == ninf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

}  // namespace detail

// The frames x (labels+1) grid of a transducer alignment. Node (t, u) means
// "u labels emitted, frame t being read". From (t, u) a blank moves to
// (t+1, u), the next label y_{u+1} moves to (t, u+1); the blank out of
// (T-1, U) terminates every alignment.
//
// alpha[t,u]: log-probability of reaching (t, u).
// beta[t,u]:  log-probability of finishing from (t, u), final blank included.
class AlignmentLattice {
 public:
  AlignmentLattice(std::size_t frames, std::size_t labels)
      : frames_(frames),
        labels_(labels),
        log_blank_(frames * (labels + 1), 0.0),
        log_label_(frames * (labels + 1), -std::numeric_limits<double>::infinity()) {
    if (frames == 0) throw ContractError("lattice needs at least one frame");
  }

  std::size_t frames() const { return frames_; }
  std::size_t labels() const { return labels_; }

  double& log_blank(std::size_t t, std::size_t u) { return log_blank_[index(t, u)]; }
  double log_blank(std::size_t t, std::size_t u) const { return log_blank_[index(t, u)]; }
  // Defined for u < labels().
  double& log_label(std::size_t t, std::size_t u) { return log_label_[index(t, u)]; }
  double log_label(std::size_t t, std::size_t u) const { return log_label_[index(t, u)]; }

  double alpha(std::size_t t, std::size_t u) const { return alpha_[index(t, u)]; }
  double beta(std::size_t t, std::size_t u) const { return beta_[index(t, u)]; }

  // Runs both recursions. Reuses every partial sum instead of enumerating
  // the C(T+U-1, U) alignments.
  void compute() {
    validate();
    constexpr double ninf = -std::numeric_limits<double>::infinity();
    const std::size_t T = frames_, U = labels_;
    alpha_.assign(T * (U + 1), ninf);
    beta_.assign(T * (U + 1), ninf);
    alpha_[index(0, 0)] = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t u = 0; u <= U; ++u) {
        if (t == 0 && u == 0) continue;
        double a = ninf;
        if (t > 0) a = alpha_[index(t - 1, u)] + log_blank(t - 1, u);
        if (u > 0) a = detail::log_add(a, alpha_[index(t, u - 1)] + log_label(t, u - 1));
        alpha_[index(t, u)] = a;
      }
    }
    for (std::size_t t = T; t-- > 0;) {
      for (std::size_t u = U + 1; u-- > 0;) {
        if (t == T - 1 && u == U) {
          beta_[index(t, u)] = log_blank(t, u);
          continue;
        }
        double b = ninf;
        if (t + 1 < T) b = beta_[index(t + 1, u)] + log_blank(t, u);
        if (u < U) b = detail::log_add(b, beta_[index(t, u + 1)] + log_label(t, u));
        beta_[index(t, u)] = b;
      }
    }
    computed_ = true;
  }

  bool computed() const { return computed_; }

  // alpha[T-1,U] + log_blank[T-1,U]
  double forward_log_likelihood() const {
    return alpha_[index(frames_ - 1, labels_)] + log_blank(frames_ - 1, labels_);
  }
  // beta[0,0]
  double backward_log_likelihood() const { return beta_[0]; }

  // log of the total probability of alignments through nodes with t + u = d.
  double diagonal_occupancy(std::size_t d) const {
    double acc = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < frames_; ++t) {
      if (d < t || d - t > labels_) continue;
      const std::size_t u = d - t;
      acc = detail::log_add(acc, alpha_[index(t, u)] + beta_[index(t, u)]);
    }
    return acc;
  }

 private:
  std::size_t index(std::size_t t, std::size_t u) const { return t * (labels_ + 1) + u; }

  void validate() const {
    for (double v : log_blank_)
      if (std::isnan(v)) throw NumericError("lattice contains NaN");
    for (std::size_t t = 0; t < frames_; ++t)
      for (std::size_t u = 0; u < labels_; ++u)
        if (std::isnan(log_label(t, u))) throw NumericError("lattice contains NaN");
  }

  std::size_t frames_;
  std::size_t labels_;
  std::vector<double> log_blank_;
  std::vector<double> log_label_;
  std::vector<double> alpha_;
  std::vector<double> beta_;
  bool computed_ = false;
};

struct TransducerLoss {
  double loss = 0.0;  // -log P(y|x)
  // d loss / d log_blank[t,u] and d loss / d log_label[t,u], same layout
  // as the lattice (frames x (labels+1)).
  std::vector<double> grad_log_blank;
  std::vector<double> grad_log_label;
};

// -log P(y|x) and its gradient with respect to every transition
// log-probability: minus the posterior probability of taking that
// transition, exp(alpha + transition + beta_next - log P).
inline TransducerLoss transducer_loss(AlignmentLattice& lattice) {
  lattice.compute();
  const double log_p = lattice.backward_log_likelihood();
  if (!std::isfinite(log_p))
    throw NumericError("target sequence is unreachable in the lattice");
  const std::size_t T = lattice.frames(), U = lattice.labels();
  TransducerLoss out;
  out.loss = -log_p;
  out.grad_log_blank.assign(T * (U + 1), 0.0);
  out.grad_log_label.assign(T * (U + 1), 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= U; ++u) {
      const double a = lattice.alpha(t, u);
      if (a == -std::numeric_limits<double>::infinity()) continue;
      const std::size_t i = t * (U + 1) + u;
      double next_blank = -std::numeric_limits<double>::infinity();
      if (t + 1 < T) next_blank = lattice.beta(t + 1, u);
      else if (u == U) next_blank = 0.0;
      out.grad_log_blank[i] = -std::exp(a + lattice.log_blank(t, u) + next_blank - log_p);
      if (u < U)
        out.grad_log_label[i] =
            -std::exp(a + lattice.log_label(t, u) + lattice.beta(t, u + 1) - log_p);
    }
  }
  return out;
}

struct TransducerLogitLoss {
  double loss = 0.0;
  std::vector<double> grad_logits;  // [frames*(labels+1), vocab]
};

// Transducer loss straight from unnormalized joint logits laid out
// [t*(U+1) + u, k]. Each node is log-softmax normalized; the transition
// gradients are chained through that softmax.
inline TransducerLogitLoss transducer_loss_from_logits(std::span<const double> logits,
                                                       std::size_t frames,
                                                       std::span<const int> labels,
                                                       std::size_t vocab, int blank = 0) {
  const std::size_t U = labels.size();
  if (logits.size() != frames * (U + 1) * vocab)
    throw DimensionError("joint logits do not match frames x (labels+1) x vocab");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= vocab || y == blank)
      throw ContractError("invalid transducer target label " + std::to_string(y));
  AlignmentLattice lattice(frames, U);
  std::vector<double> logp(logits.size());
  for (std::size_t node = 0; node < frames * (U + 1); ++node) {
    const double* z = logits.data() + node * vocab;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < vocab; ++k) {
      if (std::isnan(z[k])) throw NumericError("joint logits contain NaN");
      mx = std::max(mx, z[k]);
    }
    double s = 0;
    for (std::size_t k = 0; k < vocab; ++k) s += std::exp(z[k] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t k = 0; k < vocab; ++k) logp[node * vocab + k] = z[k] - lse;
    const std::size_t t = node / (U + 1), u = node % (U + 1);
    lattice.log_blank(t, u) = logp[node * vocab + static_cast<std::size_t>(blank)];
    if (u < U) lattice.log_label(t, u) = logp[node * vocab + static_cast<std::size_t>(labels[u])];
  }
  TransducerLoss tl = transducer_loss(lattice);
  TransducerLogitLoss out;
  out.loss = tl.loss;
  out.grad_logits.assign(logits.size(), 0.0);
  for (std::size_t node = 0; node < frames * (U + 1); ++node) {
    const std::size_t u = node % (U + 1);
    const double gb = tl.grad_log_blank[node];
    const double gl = u < U ? tl.grad_log_label[node] : 0.0;
    const double outflow = gb + gl;
    double* g = out.grad_logits.data() + node * vocab;
    for (std::size_t k = 0; k < vocab; ++k) g[k] = -std::exp(logp[node * vocab + k]) * outflow;
    g[blank] += gb;
    if (u < U) g[labels[u]] += gl;
  }
  return out;
}

// Differentiable node: joint logits [frames*(U+1), V] -> scalar -log P(y|x).
// The adjoint is the closed-form posterior gradient computed alongside the
// loss, so no per-cell operation is taped.
template <typename T>
Tensor<T> transducer_loss(const Tensor<T>& logits, std::size_t frames,
                          std::span<const int> labels, int blank = 0) {
  if (logits.rank() != 2 || logits.rows() != frames * (labels.size() + 1))
    throw DimensionError("transducer_loss: logits " + shape_str(logits.shape()) +
                         " do not match " + std::to_string(frames) + " frames and " +
                         std::to_string(labels.size()) + " labels");
  const std::vector<double> z(logits.data().begin(), logits.data().end());
  auto res = transducer_loss_from_logits(z, frames, labels, logits.cols(), blank);
  std::vector<T> grad(res.grad_logits.begin(), res.grad_logits.end());
  return custom_op<T>(Shape{}, {static_cast<T>(res.loss)}, {logits},
                      [grad = std::move(grad)](
                          std::span<const T> g,
                          const std::vector<std::shared_ptr<TensorStorage<T>>>& ins) {
                        if (!ins[0]->requires_grad) return;
                        T* d = ins[0]->grad_buffer().data();
                        for (std::size_t i = 0; i < grad.size(); ++i) d[i] += g[0] * grad[i];
                      });
}

}  // namespace htr
