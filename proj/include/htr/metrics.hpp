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
#include <string>
#include <string_view>
#include <vector>

#include "htr/error.hpp"
#include "htr/utf8.hpp"

namespace htr {

// Edit operations turning the reference into the hypothesis: deletions drop
// reference characters, insertions add hypothesis characters.
struct EditStats {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t reference_length = 0;

  std::size_t distance() const { return substitutions + insertions + deletions; }

  EditStats& operator+=(const EditStats& o) {
    substitutions += o.substitutions;
    insertions += o.insertions;
    deletions += o.deletions;
    reference_length += o.reference_length;
    return *this;
  }
};

// Unit-cost Levenshtein over code points, counts recovered by backtrace.
inline EditStats levenshtein(std::u32string_view hyp, std::u32string_view ref) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> cost((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return cost[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0u : 1u),
                           at(i - 1, j) + 1, at(i, j - 1) + 1});
  EditStats st;
  st.reference_length = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0u : 1u)) {
      if (ref[i - 1] != hyp[j - 1]) ++st.substitutions;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++st.deletions;
      --i;
    } else {
      ++st.insertions;
      --j;
    }
  }
  return st;
}

inline EditStats levenshtein(std::string_view hyp, std::string_view ref) {
  return levenshtein(utf8::decode(hyp), utf8::decode(ref));
}

// (s + i + d) / n; may exceed 1 when the hypothesis is much longer.
inline double cer(const EditStats& st) {
  if (st.reference_length == 0) throw ContractError("CER is undefined for an empty reference");
  return static_cast<double>(st.distance()) / static_cast<double>(st.reference_length);
}

inline double cer(std::string_view hyp, std::string_view ref) {
  return cer(levenshtein(hyp, ref));
}

// Length-weighted corpus CER: sum of edits over sum of reference lengths.
class CerAccumulator {
 public:
  void add(std::string_view hyp, std::string_view ref) { total_ += levenshtein(hyp, ref); ++lines_; }
  void add(const EditStats& st) { total_ += st; ++lines_; }
  double value() const { return cer(total_); }
  const EditStats& totals() const { return total_; }
  std::size_t lines() const { return lines_; }

 private:
  EditStats total_;
  std::size_t lines_ = 0;
};

}  // namespace htr
