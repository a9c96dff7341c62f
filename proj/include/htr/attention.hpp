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

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "htr/ops.hpp"

namespace htr {

// Which key positions each query may attend to. Rows of q/k/v are grouped in
// `batch` consecutive blocks; attention never crosses blocks.
struct AttentionMask {
  std::size_t batch = 1;
  // Query i may see key j only if j <= i + (kv_len - q_len). With a key/value
  // cache the latest query sits at the end of the key sequence.
  bool causal = false;
  // batch * kv_len flags, nonzero = real position. Empty means all valid.
  std::vector<std::uint8_t> key_valid;
  // q_len * kv_len flags shared by all blocks, nonzero = attend allowed.
  // Empty means no explicit restriction.
  std::vector<std::uint8_t> allowed;
};

// Rows whose every key is masked out. Such rows produce zeros.
inline std::atomic<std::uint64_t>& fully_masked_rows() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

// Multi-head scaled dot-product attention over already-projected inputs:
// q[B*m, h*dk], k[B*n, h*dk], v[B*n, h*dv] -> [B*m, h*dv]. Head i uses the
// i-th block of dk (resp. dv) columns. Softmax weights are kept for the
// adjoint; nothing else is taped.
template <typename T>
Tensor<T> attention_heads(const Tensor<T>& q, const Tensor<T>& k,
                          const Tensor<T>& v, std::size_t heads,
                          const AttentionMask& mask = {}) {
  detail::require_rank(q, 2, "attention");
  detail::require_rank(k, 2, "attention");
  detail::require_rank(v, 2, "attention");
  const std::size_t batch = mask.batch;
  if (heads == 0 || batch == 0) throw ContractError("attention: zero heads/batch");
  if (q.rows() % batch || k.rows() % batch || k.rows() != v.rows()) {
    throw DimensionError("attention: rows of q " + shape_str(q.shape()) +
                         ", k " + shape_str(k.shape()) + ", v " +
                         shape_str(v.shape()) + " incompatible with batch " +
                         std::to_string(batch));
  }
  if (q.cols() != k.cols() || q.cols() % heads || v.cols() % heads) {
    throw DimensionError("attention: widths of q " + shape_str(q.shape()) +
                         ", k " + shape_str(k.shape()) + ", v " +
                         shape_str(v.shape()) + " incompatible with " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t m = q.rows() / batch, n = k.rows() / batch;
  const std::size_t dq = q.cols(), dvw = v.cols();
  const std::size_t dk = dq / heads, dv = dvw / heads;
  if (!mask.key_valid.empty() && mask.key_valid.size() != batch * n)
    throw DimensionError("attention: key_valid size mismatch");
  if (!mask.allowed.empty() && mask.allowed.size() != m * n)
    throw DimensionError("attention: explicit mask must be q_len x kv_len");
  if (mask.causal && n < m)
    throw DimensionError("attention: causal mask needs kv_len >= q_len");

  const T scale_factor = T(1) / std::sqrt(T(dk));
  const std::size_t shift = n - m;  // only meaningful when causal
  std::vector<T> probs(batch * heads * m * n, T(0));
  std::vector<T> out(batch * m * dvw, T(0));
  const T* pq = q.data().data();
  const T* pk = k.data().data();
  const T* pv = v.data().data();
  std::vector<T> scores(n);
  std::vector<std::uint8_t> ok(n);
  std::uint64_t degenerate = 0;

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t visible = 0;
      for (std::size_t j = 0; j < n; ++j) {
        bool allow = true;
        if (!mask.key_valid.empty() && !mask.key_valid[b * n + j]) allow = false;
        if (!mask.allowed.empty() && !mask.allowed[i * n + j]) allow = false;
        if (mask.causal && j > i + shift) allow = false;
        ok[j] = allow;
        visible += allow;
      }
      if (visible == 0) {
        degenerate += heads;
        continue;
      }
      for (std::size_t h = 0; h < heads; ++h) {
        const T* qi = pq + (b * m + i) * dq + h * dk;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          if (!ok[j]) continue;
          const T* kj = pk + (b * n + j) * dq + h * dk;
          T s = 0;
          for (std::size_t c = 0; c < dk; ++c) s += qi[c] * kj[c];
          s *= scale_factor;
          scores[j] = s;
          mx = std::max(mx, s);
        }
        T* p = probs.data() + ((b * heads + h) * m + i) * n;
        T total = 0;
        for (std::size_t j = 0; j < n; ++j) {
          if (!ok[j]) continue;
          p[j] = std::exp(scores[j] - mx);
          total += p[j];
        }
        T* o = out.data() + (b * m + i) * dvw + h * dv;
        for (std::size_t j = 0; j < n; ++j) {
          if (!ok[j]) continue;
          p[j] /= total;
          const T* vj = pv + (b * n + j) * dvw + h * dv;
          for (std::size_t c = 0; c < dv; ++c) o[c] += p[j] * vj[c];
        }
      }
    }
  }
  if (degenerate) fully_masked_rows() += degenerate;

  const bool tracked = tracks(q, k, v);
  Tensor<T> result = make_output<T>({batch * m, dvw}, std::move(out), tracked);
  if (tracked) {
    record_adjoint<T>([o = result.storage(), sq = q.storage(),
                       sk = k.storage(), sv = v.storage(),
                       probs = std::move(probs), batch, heads, m, n, dk, dv,
                       scale_factor] {
      if (o->grad.empty()) return;
      const std::size_t dq = heads * dk, dvw = heads * dv;
      const T* g = o->grad.data();
      T* gq = sq->requires_grad ? sq->grad_buffer().data() : nullptr;
      T* gk = sk->requires_grad ? sk->grad_buffer().data() : nullptr;
      T* gv = sv->requires_grad ? sv->grad_buffer().data() : nullptr;
      const T* pq = sq->data.data();
      const T* pk = sk->data.data();
      const T* pv = sv->data.data();
      std::vector<T> dp(n);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t i = 0; i < m; ++i) {
            const T* p = probs.data() + ((b * heads + h) * m + i) * n;
            const T* gi = g + (b * m + i) * dvw + h * dv;
            T dot = 0;
            for (std::size_t j = 0; j < n; ++j) {
              if (p[j] == T(0)) {
                dp[j] = 0;
                continue;
              }
              const T* vj = pv + (b * n + j) * dvw + h * dv;
              T s = 0;
              for (std::size_t c = 0; c < dv; ++c) s += gi[c] * vj[c];
              dp[j] = s;
              dot += p[j] * s;
            }
            const T* qi = pq + (b * m + i) * dq + h * dk;
            for (std::size_t j = 0; j < n; ++j) {
              if (p[j] == T(0)) continue;
              if (gv) {
                T* gvj = gv + (b * n + j) * dvw + h * dv;
                for (std::size_t c = 0; c < dv; ++c) gvj[c] += p[j] * gi[c];
              }
              const T ds = p[j] * (dp[j] - dot) * scale_factor;
              const T* kj = pk + (b * n + j) * dq + h * dk;
              if (gq) {
                T* gqi = gq + (b * m + i) * dq + h * dk;
                for (std::size_t c = 0; c < dk; ++c) gqi[c] += ds * kj[c];
              }
              if (gk) {
                T* gkj = gk + (b * n + j) * dq + h * dk;
                for (std::size_t c = 0; c < dk; ++c) gkj[c] += ds * qi[c];
              }
            }
          }
        }
      }
    });
  }
  return result;
}

// softmax(Q K^T / sqrt(d)) V for a single head. mask[i*n + j] nonzero means
// query i may attend key j.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::optional<std::vector<std::uint8_t>> mask = std::nullopt) {
  AttentionMask am;
  if (mask) am.allowed = std::move(*mask);
  return attention_heads(q, k, v, 1, am);
}

}  // namespace htr
