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

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "htr/rng.hpp"
#include "htr/search.hpp"

namespace htr {
namespace {

// Normalized random distributions that depend on (seed, frame, history).
std::vector<double> keyed_log_probs(std::uint64_t seed, std::size_t t,
                                    const std::vector<int>& history, std::size_t vocab,
                                    double spread = 3.0) {
  std::uint64_t key = hash_combine(seed, t);
  for (int y : history) key = hash_combine(key, static_cast<std::uint64_t>(y) + 1);
  CounterRng rng(key, history.size());
  std::vector<double> z(vocab);
  double mx = -1e300;
  for (auto& x : z) {
    x = rng.uniform(-spread, spread);
    mx = std::max(mx, x);
  }
  double s = 0;
  for (double x : z) s += std::exp(x - mx);
  for (auto& x : z) x -= mx + std::log(s);
  return z;
}

struct TableTransducer {
  using State = std::vector<int>;
  std::uint64_t seed;
  std::size_t vocab;
  std::size_t capacity = 1000;
  State initial() const { return {}; }
  State advance(const State& s, int k) const {
    State n = s;
    n.push_back(k);
    return n;
  }
  bool can_emit(const State& s) const { return s.size() < capacity; }
  std::vector<double> log_probs(std::size_t t, const State& s) const {
    return keyed_log_probs(seed, t, s, vocab);
  }
};

// Fixed per-frame distributions that ignore the history.
struct FixedTransducer {
  using State = std::vector<int>;
  std::vector<std::vector<double>> frames;
  State initial() const { return {}; }
  State advance(const State& s, int k) const {
    State n = s;
    n.push_back(k);
    return n;
  }
  bool can_emit(const State&) const { return true; }
  std::vector<double> log_probs(std::size_t t, const State&) const { return frames[t]; }
};

struct TableSequence {
  using State = std::vector<int>;
  std::uint64_t seed;
  std::size_t vocab;
  State initial() const { return {}; }
  State advance(const State& s, int k) const {
    State n = s;
    n.push_back(k);
    return n;
  }
  bool can_extend(const State&) const { return true; }
  std::vector<double> log_probs(const State& s) const {
    return keyed_log_probs(seed, 0, s, vocab);
  }
};

double log_add(double a, double b) { return detail::log_add(a, b); }

// All alignments with at most m labels per frame; the probability of each
// label sequence is summed over its alignments.
std::map<std::vector<int>, double> transducer_sequence_scores(const TableTransducer& s,
                                                              std::size_t frames,
                                                              std::size_t m) {
  std::map<std::vector<int>, double> out;
  std::function<void(std::size_t, std::vector<int>&, std::size_t, double)> walk =
      [&](std::size_t t, std::vector<int>& y, std::size_t emitted, double lp) {
        const auto p = s.log_probs(t, y);
        if (t + 1 == frames) {
          auto [it, fresh] = out.try_emplace(y, lp + p[0]);
          if (!fresh) it->second = log_add(it->second, lp + p[0]);
        } else {
          walk(t + 1, y, 0, lp + p[0]);
        }
        if (emitted == m) return;
        for (std::size_t k = 1; k < s.vocab; ++k) {
          y.push_back(static_cast<int>(k));
          walk(t, y, emitted + 1, lp + p[k]);
          y.pop_back();
        }
      };
  std::vector<int> y;
  walk(0, y, 0, 0.0);
  return out;
}

TEST(TransducerGreedy, BlankEverywhereGivesEmptyOutput) {
  FixedTransducer s{{{-0.1, -2.5, -3.0}, {-0.2, -1.8, -3.0}, {-0.05, -3.5, -4.0}}};
  Hypothesis h = transducer_greedy(s, 3);
  EXPECT_TRUE(h.tokens.empty());
  EXPECT_NEAR(h.score, -0.35, 1e-12);
}

TEST(TransducerGreedy, EmitsThenBlank) {
  // One frame: label 1 is the argmax on the empty history, blank afterwards.
  struct S : FixedTransducer {
    std::vector<double> log_probs(std::size_t, const State& st) const {
      return st.empty() ? std::vector<double>{std::log(0.3), std::log(0.6), std::log(0.1)}
                        : std::vector<double>{std::log(0.7), std::log(0.2), std::log(0.1)};
    }
  } s;
  Hypothesis h = transducer_greedy(s, 1);
  EXPECT_EQ(h.tokens, (std::vector<int>{1}));
  EXPECT_NEAR(h.score, std::log(0.6) + std::log(0.7), 1e-12);
}

TEST(TransducerGreedy, HardAdvanceAfterMaxSymbols) {
  FixedTransducer s{{{-3.0, -0.1, -3.0}, {-3.0, -0.1, -3.0}}};
  TransducerSearchOptions opt;
  opt.max_symbols = 3;
  Hypothesis h = transducer_greedy(s, 2, opt);
  EXPECT_EQ(h.tokens.size(), 6u);
  EXPECT_NEAR(h.score, 6 * -0.1 + 2 * -3.0, 1e-12);
  // A wider beam keeps the all-blank path, which is better here (-6 > -6.6).
  opt.beam = 4;
  Hypothesis b = transducer_beam(s, 2, opt);
  EXPECT_TRUE(b.tokens.empty());
  EXPECT_NEAR(b.score, -6.0, 1e-12);
  opt.max_symbols = 0;
  EXPECT_THROW(transducer_greedy(s, 2, opt), ContractError);
}

TEST(TransducerGreedy, StopsEmittingAtCapacity) {
  TableTransducer s{4, 3};
  s.capacity = 2;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    s.seed = seed;
    EXPECT_LE(transducer_greedy(s, 5).tokens.size(), 2u);
    TransducerSearchOptions opt;
    opt.beam = 3;
    EXPECT_LE(transducer_beam(s, 5, opt).tokens.size(), 2u);
  }
}

TEST(TransducerBeam, WidthOneEqualsGreedy) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    TableTransducer s{seed, 2 + seed % 4};
    TransducerSearchOptions opt;
    opt.max_symbols = 1 + seed % 3;
    Hypothesis g = transducer_greedy(s, 1 + seed % 5, opt);
    Hypothesis b = transducer_beam(s, 1 + seed % 5, opt);
    EXPECT_EQ(g.tokens, b.tokens) << seed;
    EXPECT_NEAR(g.score, b.score, 1e-12) << seed;
  }
}

TEST(TransducerBeam, UnprunedSearchFindsExhaustiveArgmax) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    TableTransducer s{1000 + seed, 3};
    const std::size_t frames = 2, m = 2;
    const auto all = transducer_sequence_scores(s, frames, m);
    auto best = all.begin();
    for (auto it = all.begin(); it != all.end(); ++it)
      if (it->second > best->second) best = it;
    TransducerSearchOptions opt;
    opt.beam = 1000;
    opt.max_symbols = m;
    Hypothesis h = transducer_beam(s, frames, opt);
    EXPECT_EQ(h.tokens, best->first) << seed;
    EXPECT_NEAR(h.score, best->second, 1e-10) << seed;
  }
}

TEST(TransducerBeam, ExhaustiveWidthDominatesNarrowerBeams) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    TableTransducer s{5000 + seed, 3};
    TransducerSearchOptions opt;
    opt.max_symbols = 2;
    opt.beam = 1000;
    const double top = transducer_beam(s, 2, opt).score;
    for (std::size_t k : {1u, 2u, 3u, 5u}) {
      opt.beam = k;
      EXPECT_LE(transducer_beam(s, 2, opt).score, top + 1e-12) << seed << " K=" << k;
    }
  }
}

TEST(TransducerBeam, PrunedScoreIsNotMonotoneInWidth) {
  // Pruning can discard the prefix the greedy path later profits from; a
  // wider beam is therefore not guaranteed to score higher.
  TableTransducer s{5082, 4};
  TransducerSearchOptions one, five;
  five.beam = 5;
  EXPECT_LT(transducer_beam(s, 3, five).score, transducer_beam(s, 3, one).score);
}

TEST(SequenceGreedy, FirstArgmaxEosGivesEmpty) {
  struct S : TableSequence {
    std::vector<double> log_probs(const State&) const {
      return {std::log(0.1), std::log(0.2), std::log(0.1), std::log(0.6)};
    }
  } s;
  Hypothesis h = sequence_greedy(s);
  EXPECT_TRUE(h.tokens.empty());
  EXPECT_NEAR(h.score, std::log(0.6), 1e-12);
}

TEST(SequenceGreedy, StopsAtMaxLen) {
  struct S : TableSequence {
    std::vector<double> log_probs(const State&) const {
      return {std::log(0.1), std::log(0.7), std::log(0.1), std::log(0.1)};
    }
  } s;
  SequenceSearchOptions opt;
  opt.max_len = 5;
  EXPECT_EQ(sequence_greedy(s, opt).tokens, (std::vector<int>(5, 1)));
  opt.beam = 3;
  EXPECT_EQ(sequence_beam(s, opt).tokens, (std::vector<int>(5, 1)));
}

TEST(SequenceBeam, WidthOneEqualsGreedy) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    TableSequence s{seed, 3 + seed % 4};
    SequenceSearchOptions opt;
    opt.max_len = 1 + seed % 6;
    opt.eos = static_cast<int>(seed % s.vocab);
    Hypothesis g = sequence_greedy(s, opt), b = sequence_beam(s, opt);
    EXPECT_EQ(g.tokens, b.tokens) << seed;
    EXPECT_NEAR(g.score, b.score, 1e-12) << seed;
  }
}

TEST(SequenceBeam, WideBeamFindsExhaustiveArgmax) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    TableSequence s{9000 + seed, 4};
    SequenceSearchOptions opt;
    opt.max_len = 3;
    opt.beam = 64;
    std::vector<int> best_y;
    double best = -INFINITY;
    std::function<void(std::vector<int>&, double)> walk = [&](std::vector<int>& y, double lp) {
      const auto p = s.log_probs(y);
      for (int k = 0; k < 4; ++k) {
        const double score = lp + p[k];
        if (k == opt.eos || y.size() + 1 == opt.max_len) {
          std::vector<int> done = y;
          if (k != opt.eos) done.push_back(k);
          if (score > best) {
            best = score;
            best_y = done;
          }
          continue;
        }
        y.push_back(k);
        walk(y, score);
        y.pop_back();
      }
    };
    std::vector<int> y;
    walk(y, 0.0);
    Hypothesis h = sequence_beam(s, opt);
    EXPECT_EQ(h.tokens, best_y) << seed;
    EXPECT_NEAR(h.score, best, 1e-12) << seed;
  }
}

TEST(SequenceBeam, ExhaustiveWidthDominatesNarrowerBeams) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    TableSequence s{20000 + seed, 5};
    SequenceSearchOptions opt;
    opt.max_len = 4;
    opt.beam = 5 * 5 * 5 * 5;
    const double top = sequence_beam(s, opt).score;
    for (std::size_t k : {1u, 2u, 3u, 5u, 8u}) {
      opt.beam = k;
      EXPECT_LE(sequence_beam(s, opt).score, top + 1e-12) << seed << " K=" << k;
    }
  }
}

TEST(SequenceBeam, PrunedScoreIsNotMonotoneInWidth) {
  TableSequence s{20135, 5};
  SequenceSearchOptions opt;
  opt.max_len = 4;
  const double greedy = sequence_beam(s, opt).score;
  opt.beam = 2;
  EXPECT_LT(sequence_beam(s, opt).score, greedy);
}

TEST(SequenceBeam, LengthNormalizationRanksByMeanLogProb) {
  // EOS right away costs log 0.55; "1 EOS" costs log 0.45 + log 0.9, which
  // is worse in total but better per token.
  struct S : TableSequence {
    std::vector<double> log_probs(const State& st) const {
      if (st.empty()) return {std::log(0.0001), std::log(0.45), std::log(0.0001), std::log(0.5498)};
      return {std::log(0.05), std::log(0.03), std::log(0.02), std::log(0.9)};
    }
  } s;
  SequenceSearchOptions opt;
  opt.beam = 4;
  opt.max_len = 4;
  EXPECT_TRUE(sequence_beam(s, opt).tokens.empty());
  opt.length_norm = true;
  EXPECT_EQ(sequence_beam(s, opt).tokens, (std::vector<int>{1}));
}

}  // namespace
}  // namespace htr
