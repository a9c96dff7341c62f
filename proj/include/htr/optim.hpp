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
#include <cstddef>
#include <string>
#include <vector>

#include "htr/error.hpp"
#include "htr/layers.hpp"

namespace htr {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;  // global gradient norm; 0 disables clipping
};

struct AdamReport {
  bool applied = false;
  double grad_norm = 0;
  bool clipped = false;
};

// Bias-corrected Adam over a fixed parameter list. A parameter with no
// gradient buffer this step is left alone entirely, moments included.
template <typename T>
class Adam {
 public:
  struct Moments {
    std::vector<T> m, v;
  };

  Adam() = default;
  Adam(const ParameterList<T>& params, AdamOptions opt) : params_(params), opt_(opt) {
    for (const auto& p : params_) {
      moments_.push_back({std::vector<T>(p.tensor.numel(), T(0)),
                          std::vector<T>(p.tensor.numel(), T(0))});
    }
  }

  const ParameterList<T>& parameters() const { return params_; }
  std::vector<Moments>& moments() { return moments_; }
  const std::vector<Moments>& moments() const { return moments_; }
  std::uint64_t updates() const { return updates_; }
  void set_updates(std::uint64_t t) { updates_ = t; }
  const std::vector<std::string>& incidents() const { return incidents_; }

  double gradient_norm() const {
    double sq = 0;
    for (const auto& p : params_)
      if (p.tensor.has_grad())
        for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    return std::sqrt(sq);
  }

  // One update at learning rate lr. A non-finite gradient anywhere rejects
  // the whole step: nothing changes and an incident is recorded.
  AdamReport step(double lr, const std::string& tag = {}) {
    AdamReport r;
    r.grad_norm = gradient_norm();
    if (!std::isfinite(r.grad_norm)) {
      std::string where;
      for (const auto& p : params_) {
        if (!p.tensor.has_grad()) continue;
        for (T g : p.tensor.grad())
          if (!std::isfinite(static_cast<double>(g))) where = p.name;
        if (!where.empty()) break;
      }
      incidents_.push_back((tag.empty() ? "" : tag + ": ") + "non-finite gradient in " + where +
                           ", step rejected");
      return r;
    }
    double factor = 1.0;
    if (opt_.clip_norm > 0 && r.grad_norm > opt_.clip_norm) {
      factor = opt_.clip_norm / r.grad_norm;
      r.clipped = true;
    }
    ++updates_;
    const double t = static_cast<double>(updates_);
    const double c1 = 1.0 - std::pow(opt_.beta1, t);
    const double c2 = 1.0 - std::pow(opt_.beta2, t);
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T> p = params_[i].tensor;
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto w = p.mutable_data();
      auto& m = moments_[i].m;
      auto& v = moments_[i].v;
      for (std::size_t k = 0; k < w.size(); ++k) {
        const T gk = static_cast<T>(factor * static_cast<double>(g[k]));
        m[k] = b1 * m[k] + (T(1) - b1) * gk;
        v[k] = b2 * v[k] + (T(1) - b2) * gk * gk;
        const double mh = static_cast<double>(m[k]) / c1;
        const double vh = static_cast<double>(v[k]) / c2;
        w[k] = static_cast<T>(static_cast<double>(w[k]) - lr * mh / (std::sqrt(vh) + opt_.epsilon));
      }
    }
    r.applied = true;
    return r;
  }

  void zero_grad() {
    for (auto& p : params_) {
      Tensor<T> t = p.tensor;
      t.zero_grad();
    }
  }

 private:
  ParameterList<T> params_;
  AdamOptions opt_;
  std::vector<Moments> moments_;
  std::uint64_t updates_ = 0;
  std::vector<std::string> incidents_;
};

}  // namespace htr
