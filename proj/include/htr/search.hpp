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
#include <cstddef>
#include <limits>
#include <map>
#include <vector>

#include "htr/error.hpp"
#include "htr/lattice.hpp"

namespace htr {

// Decoders only talk to models through a scorer. A transducer scorer offers
//   State initial() const;
//   std::vector<double> log_probs(std::size_t t, const State&) const;  // |V|, normalized
//   State advance(const State&, int token) const;
//   bool can_emit(const State&) const;
// and a sequence scorer the same without the frame index.

struct Hypothesis {
  std::vector<int> tokens;
  double score = 0.0;  // log-probability
};

struct TransducerSearchOptions {
  std::size_t beam = 1;
  std::size_t max_symbols = 10;  // labels per frame before a forced advance
  int blank = 0;
};

namespace detail {

inline std::size_t argmax_first(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

}  // namespace detail

template <typename Scorer>
Hypothesis transducer_greedy(const Scorer& scorer, std::size_t frames,
                             const TransducerSearchOptions& opt = {}) {
  if (opt.max_symbols == 0) throw ContractError("max_symbols must be at least 1");
  Hypothesis h;
  auto state = scorer.initial();
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t emitted = 0;; ++emitted) {
      const std::vector<double> lp = scorer.log_probs(t, state);
      const auto k = static_cast<int>(detail::argmax_first(lp));
      if (k == opt.blank || emitted == opt.max_symbols || !scorer.can_emit(state)) {
        h.score += lp[static_cast<std::size_t>(opt.blank)];
        break;
      }
      h.score += lp[static_cast<std::size_t>(k)];
      h.tokens.push_back(k);
      state = scorer.advance(state, k);
    }
  }
  return h;
}

// Frame-synchronous beam search. Within frame t the hypotheses still reading
// t either take a blank (moving to t+1) or emit a label (staying). After each
// sub-step the union of advanced and staying hypotheses is merged (equal
// label sequences of the same kind combine by log-sum-exp) and pruned to the
// beam. A hypothesis that has emitted max_symbols labels in the frame is
// forced to advance, paying its blank log-probability.
template <typename Scorer>
Hypothesis transducer_beam(const Scorer& scorer, std::size_t frames,
                           const TransducerSearchOptions& opt = {}) {
  if (opt.beam == 0) throw ContractError("beam width must be at least 1");
  if (opt.max_symbols == 0) throw ContractError("max_symbols must be at least 1");
  using State = decltype(scorer.initial());
  struct Node {
    std::vector<int> tokens;
    double score;
    double local;  // log-prob of the last step, for tie-breaking
    std::size_t order;
    bool advanced;
    State state;
  };
  std::vector<Node> beam{{{}, 0.0, 0.0, 0, true, scorer.initial()}};

  auto merge_and_prune = [&](std::vector<Node>& pool) {
    std::map<std::pair<bool, std::vector<int>>, std::size_t> seen;
    std::vector<Node> merged;
    for (auto& n : pool) {
      auto [it, fresh] = seen.try_emplace({n.advanced, n.tokens}, merged.size());
      if (fresh) {
        merged.push_back(std::move(n));
      } else {
        Node& m = merged[it->second];
        m.score = detail::log_add(m.score, n.score);
      }
    }
    std::stable_sort(merged.begin(), merged.end(), [](const Node& a, const Node& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.local != b.local) return a.local > b.local;
      return a.order < b.order;
    });
    if (merged.size() > opt.beam) merged.resize(opt.beam);
    pool = std::move(merged);
  };

  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<Node> active, done;
    for (auto& n : beam) {
      n.advanced = false;
      active.push_back(std::move(n));
    }
    for (std::size_t s = 0; !active.empty(); ++s) {
      std::vector<Node> pool = std::move(done);
      std::size_t order = 0;
      for (auto& n : pool) n.order = order++;
      for (const auto& n : active) {
        const std::vector<double> lp = scorer.log_probs(t, n.state);
        const double lb = lp[static_cast<std::size_t>(opt.blank)];
        pool.push_back({n.tokens, n.score + lb, lb, order++, true, n.state});
        if (s == opt.max_symbols || !scorer.can_emit(n.state)) continue;
        for (std::size_t k = 0; k < lp.size(); ++k) {
          if (static_cast<int>(k) == opt.blank) continue;
          Node child{n.tokens, n.score + lp[k], lp[k], order++, false, n.state};
          child.tokens.push_back(static_cast<int>(k));
          pool.push_back(std::move(child));
        }
      }
      merge_and_prune(pool);
      active.clear();
      done.clear();
      for (auto& n : pool) {
        if (n.advanced) {
          done.push_back(std::move(n));
        } else {
          // The state for an emitted label is built only for survivors.
          n.state = scorer.advance(n.state, n.tokens.back());
          active.push_back(std::move(n));
        }
      }
    }
    beam = std::move(done);
  }
  const auto best = std::max_element(beam.begin(), beam.end(), [](const Node& a, const Node& b) {
    return a.score < b.score;
  });
  return {best->tokens, best->score};
}

struct SequenceSearchOptions {
  std::size_t beam = 1;
  std::size_t max_len = 256;
  bool length_norm = false;
  int eos = 3;
};

// Autoregressive argmax decoding. EOS ends the sequence and is not returned;
// its log-probability is part of the score.
template <typename Scorer>
Hypothesis sequence_greedy(const Scorer& scorer, const SequenceSearchOptions& opt = {}) {
  if (opt.max_len == 0) throw ContractError("max_len must be at least 1");
  Hypothesis h;
  auto state = scorer.initial();
  for (std::size_t step = 0; step < opt.max_len; ++step) {
    const std::vector<double> lp = scorer.log_probs(state);
    const auto k = static_cast<int>(detail::argmax_first(lp));
    h.score += lp[static_cast<std::size_t>(k)];
    if (k == opt.eos) break;
    h.tokens.push_back(k);
    if (step + 1 == opt.max_len || !scorer.can_extend(state)) break;
    state = scorer.advance(state, k);
  }
  return h;
}

// Step-synchronous beam search: every live hypothesis is extended by every
// token and the best `beam` candidates survive. Candidates ending in EOS are
// frozen; unfinished hypotheses still alive at max_len compete with them.
template <typename Scorer>
Hypothesis sequence_beam(const Scorer& scorer, const SequenceSearchOptions& opt = {}) {
  if (opt.beam == 0) throw ContractError("beam width must be at least 1");
  if (opt.max_len == 0) throw ContractError("max_len must be at least 1");
  using State = decltype(scorer.initial());
  struct Live {
    std::vector<int> tokens;
    double score;
    State state;
  };
  auto final_score = [&](const Hypothesis& h, bool with_eos) {
    if (!opt.length_norm) return h.score;
    return h.score / static_cast<double>(std::max<std::size_t>(1, h.tokens.size() + with_eos));
  };
  std::vector<Live> live{{{}, 0.0, scorer.initial()}};
  std::vector<std::pair<Hypothesis, double>> finished;  // hypothesis, ranking score
  double best_finished = -std::numeric_limits<double>::infinity();
  for (std::size_t step = 0; step < opt.max_len && !live.empty(); ++step) {
    struct Cand {
      std::size_t parent;
      int token;
      double score;
    };
    std::vector<Cand> cands;
    for (std::size_t i = 0; i < live.size(); ++i) {
      const std::vector<double> lp = scorer.log_probs(live[i].state);
      for (std::size_t k = 0; k < lp.size(); ++k)
        cands.push_back({i, static_cast<int>(k), live[i].score + lp[k]});
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.score > b.score; });
    if (cands.size() > opt.beam) cands.resize(opt.beam);
    std::vector<Live> next;
    const bool last = step + 1 == opt.max_len;
    for (const auto& c : cands) {
      const Live& p = live[c.parent];
      Hypothesis h{p.tokens, c.score};
      if (c.token == opt.eos) {
        const double r = final_score(h, true);
        best_finished = std::max(best_finished, r);
        finished.emplace_back(std::move(h), r);
        continue;
      }
      h.tokens.push_back(c.token);
      if (last || !scorer.can_extend(p.state)) {
        const double r = final_score(h, false);
        best_finished = std::max(best_finished, r);
        finished.emplace_back(std::move(h), r);
        continue;
      }
      next.push_back({std::move(h.tokens), c.score, scorer.advance(p.state, c.token)});
    }
    live = std::move(next);
    // Scores only fall as hypotheses grow, so without normalization no live
    // hypothesis can overtake a better finished one.
    if (!opt.length_norm && !live.empty()) {
      double best_live = -std::numeric_limits<double>::infinity();
      for (const auto& l : live) best_live = std::max(best_live, l.score);
      if (best_finished > best_live) break;
    }
  }
  const auto best = std::max_element(
      finished.begin(), finished.end(),
      [](const auto& a, const auto& b) { return a.second < b.second; });
  return best->first;
}

}  // namespace htr
