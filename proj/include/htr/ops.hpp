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
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "htr/error.hpp"
#include "htr/rng.hpp"
#include "htr/tensor.hpp"

namespace htr {

namespace kernels {

// C[m,n] (+)= A[m,k] * B[k,n], all row-major. Every output row is produced by
// the same accumulation order regardless of m, so row i of a product does not
// depend on how many other rows are computed alongside it.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate = false) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
std::vector<T> transposed(const T* a, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a[r * cols + c];
  return out;
}

// dA += dC * B^T
template <typename T>
void gemm_grad_a(const T* dc, const T* b, T* da, std::size_t m, std::size_t k,
                 std::size_t n) {
  const std::vector<T> bt = transposed(b, k, n);
  gemm(dc, bt.data(), da, m, n, k, true);
}

// dB += A^T * dC
template <typename T>
void gemm_grad_b(const T* a, const T* dc, T* db, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* grow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      T* drow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
    }
  }
}

}  // namespace kernels

namespace detail {

struct AxisLayout {
  std::size_t outer;
  std::size_t extent;
  std::size_t inner;
};

inline AxisLayout axis_layout(const Shape& shape, int axis, std::size_t* norm) {
  const int r = static_cast<int>(shape.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw DimensionError("axis out of range for shape " + shape_str(shape));
  }
  AxisLayout l{1, shape[axis], 1};
  for (int i = 0; i < axis; ++i) l.outer *= shape[i];
  for (int i = axis + 1; i < r; ++i) l.inner *= shape[i];
  if (norm) *norm = static_cast<std::size_t>(axis);
  return l;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()) + " differ");
  }
}

template <typename T>
void require_rank(const Tensor<T>& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

template <typename T>
void check_finite_input(std::span<const T> v, const char* op) {
  for (T x : v) {
    if (std::isnan(x)) throw NumericError(std::string(op) + ": NaN input");
  }
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  if (b.size(0) != k) {
    throw DimensionError("matmul: inner extents differ for " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  kernels::gemm(a.data().data(), b.data().data(), out.data(), m, k, n);
  const bool tracked = tracks(a, b);
  Tensor<T> result = make_output<T>({m, n}, std::move(out), tracked);
  if (tracked) {
    record_adjoint<T>([o = result.storage(), sa = a.storage(),
                       sb = b.storage(), m, k, n] {
      if (o->grad.empty()) return;
      if (sa->requires_grad)
        kernels::gemm_grad_a(o->grad.data(), sb->data.data(),
                             sa->grad_buffer().data(), m, k, n);
      if (sb->requires_grad)
        kernels::gemm_grad_b(sa->data.data(), o->grad.data(),
                             sb->grad_buffer().data(), m, k, n);
    });
  }
  return result;
}

// x[m,k] * w[k,n] + bias[n]; bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& bias) {
  detail::require_rank(x, 2, "linear");
  detail::require_rank(w, 2, "linear");
  const std::size_t m = x.size(0), k = x.size(1), n = w.size(1);
  if (w.size(0) != k) {
    throw DimensionError("linear: inner extents differ for " +
                         shape_str(x.shape()) + " x " + shape_str(w.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != n) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) +
                         " does not match output width " + std::to_string(n));
  }
  std::vector<T> out(m * n);
  if (has_bias) {
    for (std::size_t i = 0; i < m; ++i)
      std::copy(bias.data().begin(), bias.data().end(), out.begin() + i * n);
  }
  kernels::gemm(x.data().data(), w.data().data(), out.data(), m, k, n,
                has_bias);
  const bool tracked = has_bias ? tracks(x, w, bias) : tracks(x, w);
  Tensor<T> result = make_output<T>({m, n}, std::move(out), tracked);
  if (tracked) {
    std::shared_ptr<TensorStorage<T>> sbias =
        has_bias ? bias.storage() : nullptr;
    record_adjoint<T>([o = result.storage(), sx = x.storage(),
                       sw = w.storage(), sbias, m, k, n] {
      if (o->grad.empty()) return;
      const T* g = o->grad.data();
      if (sx->requires_grad)
        kernels::gemm_grad_a(g, sw->data.data(), sx->grad_buffer().data(), m,
                             k, n);
      if (sw->requires_grad)
        kernels::gemm_grad_b(sx->data.data(), g, sw->grad_buffer().data(), m,
                             k, n);
      if (sbias && sbias->requires_grad) {
        T* gb = sbias->grad_buffer().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
    });
  }
  return result;
}

namespace detail {

// Shared scaffolding for same-shape binary elementwise ops.
template <typename T, typename Fwd, typename GradA, typename GradB>
Tensor<T> binary_elementwise(const Tensor<T>& a, const Tensor<T>& b,
                             const char* name, Fwd fwd, GradA ga, GradB gb) {
  require_same_shape(a, b, name);
  const std::size_t n = a.numel();
  std::vector<T> out(n);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(pa[i], pb[i]);
  const bool tracked = tracks(a, b);
  Tensor<T> result = make_output<T>(a.shape(), std::move(out), tracked);
  if (tracked) {
    record_adjoint<T>([o = result.storage(), sa = a.storage(),
                       sb = b.storage(), n, ga, gb] {
      if (o->grad.empty()) return;
      const T* g = o->grad.data();
      if (sa->requires_grad) {
        T* d = sa->grad_buffer().data();
        for (std::size_t i = 0; i < n; ++i)
          d[i] += ga(sa->data[i], sb->data[i], g[i]);
      }
      if (sb->requires_grad) {
        T* d = sb->grad_buffer().data();
        for (std::size_t i = 0; i < n; ++i)
          d[i] += gb(sa->data[i], sb->data[i], g[i]);
      }
    });
  }
  return result;
}

// Unary elementwise op whose derivative is expressed through input x and
// output y.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary_elementwise(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  const std::size_t n = x.numel();
  std::vector<T> out(n);
  const T* px = x.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(px[i]);
  const bool tracked = tracks(x);
  Tensor<T> result = make_output<T>(x.shape(), std::move(out), tracked);
  if (tracked) {
    record_adjoint<T>([o = result.storage(), sx = x.storage(), n, deriv] {
      if (o->grad.empty() || !sx->requires_grad) return;
      T* d = sx->grad_buffer().data();
      const T* g = o->grad.data();
      for (std::size_t i = 0; i < n; ++i)
        d[i] += g[i] * deriv(sx->data[i], o->data[i]);
    });
  }
  return result;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_elementwise(
      a, b, "add", [](T x, T y) { return x + y; },
      [](T, T, T g) { return g; }, [](T, T, T g) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_elementwise(
      a, b, "sub", [](T x, T y) { return x - y; },
      [](T, T, T g) { return g; }, [](T, T, T g) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_elementwise(
      a, b, "mul", [](T x, T y) { return x * y; },
      [](T, T y, T g) { return g * y; }, [](T x, T, T g) { return g * x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary_elementwise(
      x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary_elementwise(
      x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary_elementwise(
      x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt_2pi = T(0.39894228040143267794);
  return detail::unary_elementwise(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      });
}

// x + b where x's values are consecutive repetitions of b (bias rows,
// positional tables tiled over a batch).
template <typename T>
Tensor<T> add_tiled(const Tensor<T>& x, const Tensor<T>& b) {
  const std::size_t n = x.numel(), period = b.numel();
  if (period == 0 || n % period != 0) {
    throw DimensionError("add_tiled: " + shape_str(b.shape()) +
                         " does not tile " + shape_str(x.shape()));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < n; i += period)
    for (std::size_t j = 0; j < period; ++j) out[i + j] += pb[j];
  const bool tracked = tracks(x, b);
  Tensor<T> result = make_output<T>(x.shape(), std::move(out), tracked);
  if (tracked) {
    record_adjoint<T>([o = result.storage(), sx = x.storage(),
                       sb = b.storage(), n, period] {
      if (o->grad.empty()) return;
      const T* g = o->grad.data();
      if (sx->requires_grad) {
        T* d = sx->grad_buffer().data();
        for (std::size_t i = 0; i < n; ++i) d[i] += g[i];
      }
      if (sb->requires_grad) {
        T* d = sb->grad_buffer().data();
        for (std::size_t i = 0; i < n; i += period)
          for (std::size_t j = 0; j < period; ++j) d[j] += g[i + j];
      }
    });
  }
  return result;
}

// Numerically stable softmax along an axis (max-subtracted).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1) {
  detail::check_finite_input(x.data(), "softmax");
  const auto l = detail::axis_layout(x.shape(), axis, nullptr);
  std::vector<T> out(x.numel());
  const T* px = x.data().data();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      const std::size_t base = o * l.extent * l.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < l.extent; ++j)
        mx = std::max(mx, px[base + j * l.inner]);
      T sum = 0;
      for (std::size_t j = 0; j < l.extent; ++j) {
        const std::size_t idx = base + j * l.inner;
        out[idx] = (mx == -std::numeric_limits<T>::infinity())
                       ? T(0)
                       : std::exp(px[idx] - mx);
        sum += out[idx];
      }
      if (sum > T(0))
        for (std::size_t j = 0; j < l.extent; ++j) out[base + j * l.inner] /= sum;
    }
  }
  const bool tracked = tracks(x);
  Tensor<T> result = make_output<T>(x.shape(), std::move(out), tracked);
  if (tracked) {
    record_adjoint<T>([o = result.storage(), sx = x.storage(), l] {
      if (o->grad.empty() || !sx->requires_grad) return;
      T* d = sx->grad_buffer().data();
      const T* g = o->grad.data();
      const T* y = o->data.data();
      for (std::size_t ou = 0; ou < l.outer; ++ou) {
        for (std::size_t i = 0; i < l.inner; ++i) {
          const std::size_t base = ou * l.extent * l.inner + i;
          T dot = 0;
          for (std::size_t j = 0; j < l.extent; ++j) {
            const std::size_t idx = base + j * l.inner;
            dot += g[idx] * y[idx];
          }
          for (std::size_t j = 0; j < l.extent; ++j) {
            const std::size_t idx = base + j * l.inner;
            d[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis = -1) {
  detail::check_finite_input(x.data(), "log_softmax");
  const auto l = detail::axis_layout(x.shape(), axis, nullptr);
  std::vector<T> out(x.numel());
  const T* px = x.data().data();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      const std::size_t base = o * l.extent * l.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < l.extent; ++j)
        mx = std::max(mx, px[base + j * l.inner]);
      T sum = 0;
      for (std::size_t j = 0; j < l.extent; ++j)
        sum += std::exp(px[base + j * l.inner] - mx);
      const T lse = mx + std::log(sum);
      for (std::size_t j = 0; j < l.extent; ++j)
        out[base + j * l.inner] = px[base + j * l.inner] - lse;
    }
  }
  const bool tracked = tracks(x);
  Tensor<T> result = make_output<T>(x.shape(), std::move(out), tracked);
  if (tracked) {
    record_adjoint<T>([o = result.storage(), sx = x.storage(), l] {
      if (o->grad.empty() || !sx->requires_grad) return;
      T* d = sx->grad_buffer().data();
      const T* g = o->grad.data();
      const T* y = o->data.data();
      for (std::size_t ou = 0; ou < l.outer; ++ou) {
        for (std::size_t i = 0; i < l.inner; ++i) {
          const std::size_t base = ou * l.extent * l.inner + i;
          T gsum = 0;
          for (std::size_t j = 0; j < l.extent; ++j)
            gsum += g[base + j * l.inner];
          for (std::size_t j = 0; j < l.extent; ++j) {
            const std::size_t idx = base + j * l.inner;
            d[idx] += g[idx] - std::exp(y[idx]) * gsum;
          }
        }
      }
    });
  }
  return result;
}

// log(sum(exp(x))) along an axis; the axis is removed from the shape. A slice
// of all -inf reduces to -inf.
template <typename T>
Tensor<T> log_sum_exp(const Tensor<T>& x, int axis = -1) {
  std::size_t ax = 0;
  const auto l = detail::axis_layout(x.shape(), axis, &ax);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  constexpr T ninf = -std::numeric_limits<T>::infinity();
  std::vector<T> out(l.outer * l.inner);
  const T* px = x.data().data();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      const std::size_t base = o * l.extent * l.inner + i;
      T mx = ninf;
      for (std::size_t j = 0; j < l.extent; ++j)
        mx = std::max(mx, px[base + j * l.inner]);
      if (mx == ninf) {
        out[o * l.inner + i] = ninf;
        continue;
      }
      T sum = 0;
      for (std::size_t j = 0; j < l.extent; ++j)
        sum += std::exp(px[base + j * l.inner] - mx);
      out[o * l.inner + i] = mx + std::log(sum);
    }
  }
  const bool tracked = tracks(x);
  Tensor<T> result = make_output<T>(out_shape, std::move(out), tracked);
  if (tracked) {
    record_adjoint<T>([o = result.storage(), sx = x.storage(), l] {
      if (o->grad.empty() || !sx->requires_grad) return;
      T* d = sx->grad_buffer().data();
      for (std::size_t ou = 0; ou < l.outer; ++ou) {
        for (std::size_t i = 0; i < l.inner; ++i) {
          const T y = o->data[ou * l.inner + i];
          if (y == -std::numeric_limits<T>::infinity()) continue;
          const T g = o->grad[ou * l.inner + i];
          const std::size_t base = ou * l.extent * l.inner + i;
          for (std::size_t j = 0; j < l.extent; ++j) {
            const std::size_t idx = base + j * l.inner;
            d[idx] += g * std::exp(sx->data[idx] - y);
          }
        }
      }
    });
  }
  return result;
}

// Normalizes each slice along the last axis to zero mean and unit variance
// (biased estimator), then applies gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps = T(1e-5)) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.cols();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) +
                         "/" + shape_str(bias.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  const T* px = x.data().data();
  const T* pg = gain.data().data();
  const T* pb = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = px + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mean) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * pg[j] + pb[j];
    }
  }
  const bool tracked = tracks(x, gain, bias);
  Tensor<T> result = make_output<T>(x.shape(), std::move(out), tracked);
  if (tracked) {
    record_adjoint<T>([o = result.storage(), sx = x.storage(),
                       sg = gain.storage(), sb = bias.storage(),
                       xhat = std::move(xhat), inv_std = std::move(inv_std),
                       rows, d] {
      if (o->grad.empty()) return;
      const T* g = o->grad.data();
      if (sg->requires_grad) {
        T* dg = sg->grad_buffer().data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j)
            dg[j] += g[r * d + j] * xhat[r * d + j];
      }
      if (sb->requires_grad) {
        T* db = sb->grad_buffer().data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) db[j] += g[r * d + j];
      }
      if (sx->requires_grad) {
        T* dx = sx->grad_buffer().data();
        const T* pg = sg->data.data();
        for (std::size_t r = 0; r < rows; ++r) {
          T sum_gh = 0, sum_ghx = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const T gh = g[r * d + j] * pg[j];
            sum_gh += gh;
            sum_ghx += gh * xhat[r * d + j];
          }
          const T inv_d = T(1) / T(d);
          for (std::size_t j = 0; j < d; ++j) {
            const T gh = g[r * d + j] * pg[j];
            dx[r * d + j] += inv_std[r] * (gh - inv_d * sum_gh -
                                           xhat[r * d + j] * inv_d * sum_ghx);
          }
        }
      }
    });
  }
  return result;
}

// Gathers rows of table[V,d] -> [ids.size(), d].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  detail::require_rank(table, 2, "embedding");
  const std::size_t v = table.size(0), d = table.size(1);
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw ContractError("embedding: id " + std::to_string(ids[i]) +
                          " outside table of " + std::to_string(v) + " rows");
    }
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * d),
                d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  const bool tracked = tracks(table);
  Tensor<T> result = make_output<T>({ids.size(), d}, std::move(out), tracked);
  if (tracked) {
    record_adjoint<T>([o = result.storage(), st = table.storage(),
                       ids = std::vector<int>(ids.begin(), ids.end()), d] {
      if (o->grad.empty() || !st->requires_grad) return;
      T* dt = st->grad_buffer().data();
      const T* g = o->grad.data();
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < d; ++j)
          dt[static_cast<std::size_t>(ids[i]) * d + j] += g[i * d + j];
    });
  }
  return result;
}

// Inverted dropout: keeps each value with probability 1-p and scales by
// 1/(1-p). Identity outside training. The mask is drawn from rng, so the
// same stream reproduces the same mask.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, CounterRng& rng,
                  bool training) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw ContractError("dropout: ratio must be below 1");
  const std::size_t n = x.numel();
  const T keep_scale = T(1.0 / (1.0 - p));
  std::vector<T> mask(n);
  for (std::size_t i = 0; i < n; ++i)
    mask[i] = rng.uniform() < p ? T(0) : keep_scale;
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.data()[i] * mask[i];
  const bool tracked = tracks(x);
  Tensor<T> result = make_output<T>(x.shape(), std::move(out), tracked);
  if (tracked) {
    record_adjoint<T>([o = result.storage(), sx = x.storage(),
                       mask = std::move(mask), n] {
      if (o->grad.empty() || !sx->requires_grad) return;
      T* d = sx->grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) d[i] += o->grad[i] * mask[i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis = 0) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  std::size_t ax = 0;
  detail::axis_layout(parts[0].shape(), axis, &ax);
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.rank() != out_shape.size())
      throw DimensionError("concat: rank mismatch at " + shape_str(p.shape()));
    for (std::size_t i = 0; i < out_shape.size(); ++i) {
      if (i != ax && p.size(i) != parts[0].size(i))
        throw DimensionError("concat: " + shape_str(p.shape()) +
                             " incompatible with " +
                             shape_str(parts[0].shape()));
    }
    out_shape[ax] += p.size(ax);
  }
  const auto l = detail::axis_layout(out_shape, static_cast<int>(ax), nullptr);
  std::vector<T> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t ext = p.size(ax);
    for (std::size_t o = 0; o < l.outer; ++o)
      std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(o * ext * l.inner),
                  ext * l.inner,
                  out.begin() + static_cast<std::ptrdiff_t>(
                                    (o * l.extent + off) * l.inner));
    off += ext;
  }
  bool tracked = false;
  if (grad_enabled())
    for (const auto& p : parts) tracked = tracked || p.requires_grad();
  Tensor<T> result = make_output<T>(out_shape, std::move(out), tracked);
  if (tracked) {
    std::vector<std::shared_ptr<TensorStorage<T>>> ins;
    std::vector<std::size_t> exts;
    for (const auto& p : parts) {
      ins.push_back(p.storage());
      exts.push_back(p.size(ax));
    }
    record_adjoint<T>([o = result.storage(), ins = std::move(ins),
                       exts = std::move(exts), offsets = std::move(offsets),
                       l] {
      if (o->grad.empty()) return;
      for (std::size_t k = 0; k < ins.size(); ++k) {
        if (!ins[k]->requires_grad) continue;
        T* d = ins[k]->grad_buffer().data();
        const std::size_t ext = exts[k];
        for (std::size_t ou = 0; ou < l.outer; ++ou) {
          const T* g = o->grad.data() + (ou * l.extent + offsets[k]) * l.inner;
          T* dd = d + ou * ext * l.inner;
          for (std::size_t i = 0; i < ext * l.inner; ++i) dd[i] += g[i];
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " +
                         shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  const bool tracked = tracks(x);
  Tensor<T> result = make_output<T>(std::move(shape), std::move(out), tracked);
  if (tracked) {
    record_adjoint<T>([o = result.storage(), sx = x.storage()] {
      if (o->grad.empty() || !sx->requires_grad) return;
      T* d = sx->grad_buffer().data();
      for (std::size_t i = 0; i < o->grad.size(); ++i) d[i] += o->grad[i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  detail::require_rank(x, 2, "transpose");
  const std::size_t r = x.size(0), c = x.size(1);
  std::vector<T> out = kernels::transposed(x.data().data(), r, c);
  const bool tracked = tracks(x);
  Tensor<T> result = make_output<T>({c, r}, std::move(out), tracked);
  if (tracked) {
    record_adjoint<T>([o = result.storage(), sx = x.storage(), r, c] {
      if (o->grad.empty() || !sx->requires_grad) return;
      T* d = sx->grad_buffer().data();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) d[i * c + j] += o->grad[j * r + i];
    });
  }
  return result;
}

// Sets positions where mask is nonzero to value (typically -inf before a
// softmax). Masked positions receive no gradient.
template <typename T>
Tensor<T> masked_fill(const Tensor<T>& x, std::span<const std::uint8_t> mask,
                      T value) {
  if (mask.size() != x.numel()) {
    throw DimensionError("masked_fill: mask of " + std::to_string(mask.size()) +
                         " entries for " + shape_str(x.shape()));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = value;
  const bool tracked = tracks(x);
  Tensor<T> result = make_output<T>(x.shape(), std::move(out), tracked);
  if (tracked) {
    record_adjoint<T>([o = result.storage(), sx = x.storage(),
                       mask = std::vector<std::uint8_t>(mask.begin(),
                                                        mask.end())] {
      if (o->grad.empty() || !sx->requires_grad) return;
      T* d = sx->grad_buffer().data();
      for (std::size_t i = 0; i < mask.size(); ++i)
        if (!mask[i]) d[i] += o->grad[i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  const bool tracked = tracks(x);
  Tensor<T> result = make_output<T>(Shape{}, {s}, tracked);
  if (tracked) {
    record_adjoint<T>([o = result.storage(), sx = x.storage()] {
      if (o->grad.empty() || !sx->requires_grad) return;
      const T g = o->grad[0];
      for (T& d : sx->grad_buffer()) d += g;
    });
  }
  return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.numel()));
}

// Rows [begin, end) along the first axis.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin >= end || end > x.size(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") of " + shape_str(x.shape()));
  }
  const std::size_t row = x.numel() / x.size(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<T> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                     x.data().begin() + static_cast<std::ptrdiff_t>(end * row));
  const bool tracked = tracks(x);
  Tensor<T> result = make_output<T>(std::move(shape), std::move(out), tracked);
  if (tracked) {
    record_adjoint<T>([o = result.storage(), sx = x.storage(), begin, row] {
      if (o->grad.empty() || !sx->requires_grad) return;
      T* d = sx->grad_buffer().data() + begin * row;
      for (std::size_t i = 0; i < o->grad.size(); ++i) d[i] += o->grad[i];
    });
  }
  return result;
}

// out[t*U + u, :] = a[t, :] + b[u, :]
template <typename T>
Tensor<T> outer_add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "outer_add");
  detail::require_rank(b, 2, "outer_add");
  if (a.cols() != b.cols()) {
    throw DimensionError("outer_add: widths differ for " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t ta = a.rows(), ub = b.rows(), d = a.cols();
  std::vector<T> out(ta * ub * d);
  for (std::size_t t = 0; t < ta; ++t)
    for (std::size_t u = 0; u < ub; ++u)
      for (std::size_t j = 0; j < d; ++j)
        out[(t * ub + u) * d + j] = a.data()[t * d + j] + b.data()[u * d + j];
  const bool tracked = tracks(a, b);
  Tensor<T> result = make_output<T>({ta * ub, d}, std::move(out), tracked);
  if (tracked) {
    record_adjoint<T>([o = result.storage(), sa = a.storage(),
                       sb = b.storage(), ta, ub, d] {
      if (o->grad.empty()) return;
      const T* g = o->grad.data();
      T* da = sa->requires_grad ? sa->grad_buffer().data() : nullptr;
      T* db = sb->requires_grad ? sb->grad_buffer().data() : nullptr;
      for (std::size_t t = 0; t < ta; ++t)
        for (std::size_t u = 0; u < ub; ++u)
          for (std::size_t j = 0; j < d; ++j) {
            const T v = g[(t * ub + u) * d + j];
            if (da) da[t * d + j] += v;
            if (db) db[u * d + j] += v;
          }
    });
  }
  return result;
}

// out[i] = x[i, ids[i]] for x[n, V].
template <typename T>
Tensor<T> pick(const Tensor<T>& x, std::span<const int> ids) {
  detail::require_rank(x, 2, "pick");
  const std::size_t n = x.size(0), v = x.size(1);
  if (ids.size() != n) {
    throw DimensionError("pick: " + std::to_string(ids.size()) +
                         " ids for " + shape_str(x.shape()));
  }
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
      throw ContractError("pick: id out of range");
    out[i] = x.data()[i * v + static_cast<std::size_t>(ids[i])];
  }
  const bool tracked = tracks(x);
  Tensor<T> result = make_output<T>({n}, std::move(out), tracked);
  if (tracked) {
    record_adjoint<T>([o = result.storage(), sx = x.storage(),
                       ids = std::vector<int>(ids.begin(), ids.end()), v] {
      if (o->grad.empty() || !sx->requires_grad) return;
      T* d = sx->grad_buffer().data();
      for (std::size_t i = 0; i < ids.size(); ++i)
        d[i * v + static_cast<std::size_t>(ids[i])] += o->grad[i];
    });
  }
  return result;
}

// Weighted sum of a vector against constant weights: sum_i w[i] * x[i].
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::span<const T> weights) {
  if (weights.size() != x.numel())
    throw DimensionError("weighted_sum: weight count mismatch");
  T s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * x.data()[i];
  const bool tracked = tracks(x);
  Tensor<T> result = make_output<T>(Shape{}, {s}, tracked);
  if (tracked) {
    record_adjoint<T>([o = result.storage(), sx = x.storage(),
                       w = std::vector<T>(weights.begin(), weights.end())] {
      if (o->grad.empty() || !sx->requires_grad) return;
      T* d = sx->grad_buffer().data();
      for (std::size_t i = 0; i < w.size(); ++i) d[i] += o->grad[0] * w[i];
    });
  }
  return result;
}

// Records a node whose adjoint is supplied by the caller. `adjoint` receives
// the output gradient and must accumulate into the input storages itself.
template <typename T, typename Adjoint>
Tensor<T> custom_op(Shape shape, std::vector<T> data,
                    const std::vector<Tensor<T>>& inputs, Adjoint adjoint) {
  bool tracked = false;
  if (grad_enabled())
    for (const auto& in : inputs) tracked = tracked || in.requires_grad();
  Tensor<T> result = make_output<T>(std::move(shape), std::move(data), tracked);
  if (tracked) {
    std::vector<std::shared_ptr<TensorStorage<T>>> ins;
    for (const auto& in : inputs) ins.push_back(in.storage());
    record_adjoint<T>([o = result.storage(), ins = std::move(ins),
                       adjoint = std::move(adjoint)] {
      if (o->grad.empty()) return;
      adjoint(std::span<const T>(o->grad), ins);
    });
  }
  return result;
}

}  // namespace htr
