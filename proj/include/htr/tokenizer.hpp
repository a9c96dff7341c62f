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
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "htr/error.hpp"
#include "htr/utf8.hpp"

namespace htr {

// Bidirectional token table. Ids 0..4 are reserved; character tokens follow
// in code-point order, then tokens created by byte-pair merges.
class Vocabulary {
 public:
  static constexpr int kBlank = 0;
  static constexpr int kPad = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kUnk = 4;
  static constexpr int kReserved = 5;

  static const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> tokens{"<blank>", "<pad>", "<bos>",
                                                 "<eos>", "<unk>"};
    return tokens;
  }

  static Vocabulary build_char(std::span<const std::string> corpus) {
    if (corpus.empty()) throw ContractError("cannot build a vocabulary from an empty corpus");
    std::set<char32_t> chars;
    for (const auto& line : corpus)
      for (char32_t cp : utf8::decode(line)) chars.insert(cp);
    Vocabulary v;
    for (char32_t cp : chars) v.add_token(utf8::encode(cp));
    return v;
  }

  // Greedy byte-pair merges over character sequences: the most frequent
  // adjacent pair wins, ties go to the lexicographically smallest
  // (left, right). Pairs whose concatenation is already a token are passed
  // over, so every merge adds exactly one token; training stops early only
  // when no mergeable pair remains.
  static Vocabulary train_bpe(std::span<const std::string> corpus, std::size_t num_merges) {
    Vocabulary v = build_char(corpus);
    std::vector<std::vector<int>> seqs;
    for (const auto& line : corpus) seqs.push_back(v.char_ids(line));
    for (std::size_t m = 0; m < num_merges; ++m) {
      std::map<std::pair<int, int>, std::size_t> counts;
      for (const auto& s : seqs)
        for (std::size_t i = 0; i + 1 < s.size(); ++i) ++counts[{s[i], s[i + 1]}];
      const std::pair<int, int>* best = nullptr;
      std::size_t best_count = 0;
      for (const auto& [pair, count] : counts) {
        if (pair.first == kUnk || pair.second == kUnk) continue;
        if (v.index_.count(v.tokens_[pair.first] + v.tokens_[pair.second])) continue;
        if (!best || count > best_count ||
            (count == best_count && v.pair_less(pair, *best))) {
          best = &pair;
          best_count = count;
        }
      }
      if (!best) break;
      const auto rule = *best;
      const int merged = v.add_token(v.tokens_[rule.first] + v.tokens_[rule.second]);
      v.merges_.push_back(rule);
      v.merge_result_.push_back(merged);
      for (auto& s : seqs) apply_merge(s, rule, merged);
    }
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const {
    check_id(id);
    return tokens_[static_cast<std::size_t>(id)];
  }
  int id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? -1 : it->second;
  }
  std::size_t num_merges() const { return merges_.size(); }
  std::vector<std::pair<std::string, std::string>> merge_rules() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (auto [l, r] : merges_) out.emplace_back(tokens_[l], tokens_[r]);
    return out;
  }

  // Characters outside the vocabulary map to UNK; never emits other
  // reserved ids.
  std::vector<int> encode(std::string_view s) const {
    std::vector<int> ids = char_ids(s);
    for (std::size_t m = 0; m < merges_.size(); ++m) apply_merge(ids, merges_[m], merge_result_[m]);
    return ids;
  }

  // Concatenates token strings. BLANK, PAD, BOS and EOS render as nothing;
  // UNK renders as U+FFFD.
  std::string decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
      check_id(id);
      if (id < kReserved) {
        if (id == kUnk) utf8::append(out, utf8::kReplacement);
        continue;
      }
      out += tokens_[static_cast<std::size_t>(id)];
    }
    return out;
  }

  // One escaped token per line (line number = id), an empty separator line,
  // then one "left<TAB>right" merge rule per line.
  std::string serialize() const {
    std::string out;
    for (const auto& t : tokens_) out += escape(t) + "\n";
    out += "\n";
    for (auto [l, r] : merges_) out += escape(tokens_[l]) + "\t" + escape(tokens_[r]) + "\n";
    return out;
  }

  static Vocabulary parse(std::string_view text) {
    Vocabulary v;
    v.tokens_.clear();
    v.index_.clear();
    std::size_t pos = 0;
    bool in_merges = false;
    while (pos < text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      const std::string_view line = text.substr(pos, end - pos);
      pos = end + 1;
      if (!in_merges) {
        if (line.empty()) {
          in_merges = true;
          continue;
        }
        const std::string tok = unescape(line);
        if (v.index_.count(tok)) throw IntegrityError("vocabulary: duplicate token '" + tok + "'");
        v.add_token(tok);
      } else {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string_view::npos) throw IntegrityError("vocabulary: malformed merge rule");
        const std::string l = unescape(line.substr(0, tab));
        const std::string r = unescape(line.substr(tab + 1));
        const int li = v.id_of(l), ri = v.id_of(r), mi = v.id_of(l + r);
        if (li < 0 || ri < 0 || mi < 0) throw IntegrityError("vocabulary: merge references unknown token");
        v.merges_.emplace_back(li, ri);
        v.merge_result_.push_back(mi);
      }
    }
    const auto& reserved = reserved_tokens();
    if (v.tokens_.size() < reserved.size() ||
        !std::equal(reserved.begin(), reserved.end(), v.tokens_.begin()))
      throw IntegrityError("vocabulary: reserved tokens missing or out of order");
    return v;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write vocabulary " + path.string());
    out << serialize();
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open vocabulary " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  bool operator==(const Vocabulary& o) const {
    return tokens_ == o.tokens_ && merges_ == o.merges_;
  }

  // Reserved tokens only.
  Vocabulary() {
    for (const auto& t : reserved_tokens()) add_token(t);
  }

 private:
  int add_token(const std::string& t) {
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(t);
    index_.emplace(t, id);
    return id;
  }

  void check_id(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw ContractError("token id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(tokens_.size()));
  }

  std::vector<int> char_ids(std::string_view s) const {
    std::vector<int> ids;
    for (char32_t cp : utf8::decode(s)) {
      auto it = index_.find(utf8::encode(cp));
      ids.push_back(it == index_.end() || it->second < kReserved ? kUnk : it->second);
    }
    return ids;
  }

  bool pair_less(std::pair<int, int> a, std::pair<int, int> b) const {
    return std::tie(tokens_[a.first], tokens_[a.second]) <
           std::tie(tokens_[b.first], tokens_[b.second]);
  }

  static void apply_merge(std::vector<int>& s, std::pair<int, int> rule, int merged) {
    std::size_t w = 0;
    for (std::size_t i = 0; i < s.size();) {
      if (i + 1 < s.size() && s[i] == rule.first && s[i + 1] == rule.second) {
        s[w++] = merged;
        i += 2;
      } else {
        s[w++] = s[i++];
      }
    }
    s.resize(w);
  }

  static std::string escape(std::string_view t) {
    std::string out;
    for (char c : t) {
      switch (c) {
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        case '\r': out += "\\r"; break;
        default: out.push_back(c);
      }
    }
    return out;
  }

  static std::string unescape(std::string_view t) {
    std::string out;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] == '\\' && i + 1 < t.size()) {
        const char n = t[++i];
        out.push_back(n == 'n' ? '\n' : n == 't' ? '\t' : n == 'r' ? '\r' : n);
      } else {
        out.push_back(t[i]);
      }
    }
    return out;
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::pair<int, int>> merges_;
  std::vector<int> merge_result_;
};

}  // namespace htr
