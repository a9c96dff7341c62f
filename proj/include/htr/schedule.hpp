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

#include "htr/error.hpp"

namespace htr {

struct LrSchedule {
  std::size_t warmup_steps = 500;
  std::size_t constant_steps = 2000;
  std::size_t decay_steps = 500;
  double start_lr = 1e-7;
  double peak_lr = 1e-5;
  double floor_lr = 1e-6;

  // The published step counts; the default is that schedule scaled by 1/10.
  static LrSchedule full_scale() { return {5000, 20000, 5000, 1e-7, 1e-5, 1e-6}; }

  void validate() const {
    if (!(start_lr > 0 && peak_lr > 0 && floor_lr > 0))
      throw ContractError("learning rates must be positive");
    if (start_lr > peak_lr || floor_lr > peak_lr)
      throw ContractError("start and floor learning rates may not exceed the peak");
  }
};

// Linear warmup start->peak, a plateau at peak, exponential decay
// peak->floor, then floor forever. Segment endpoints are returned as the
// stored constants, so they are exact.
inline double lr_at(std::size_t step, const LrSchedule& s) {
  if (step < s.warmup_steps)
    return s.start_lr + (s.peak_lr - s.start_lr) * static_cast<double>(step) /
                            static_cast<double>(s.warmup_steps);
  step -= s.warmup_steps;
  if (step <= s.constant_steps) return s.peak_lr;
  step -= s.constant_steps;
  if (step >= s.decay_steps) return s.floor_lr;
  const double frac = static_cast<double>(step) / static_cast<double>(s.decay_steps);
  return s.peak_lr * std::pow(s.floor_lr / s.peak_lr, frac);
}

}  // namespace htr
