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

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "htr/error.hpp"

namespace htr {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables tape recording for the current thread within its scope.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Ordered record of executed differentiable operations. Each entry is an
// adjoint closure that reads its output's grad and accumulates into the
// grads of its inputs. One tape per thread and scalar type.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> adjoint) {
    entries_.push_back(std::move(adjoint));
  }

  // Replays every entry once, newest first, then clears the tape.
  void replay() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

  static Tape& current() {
    thread_local Tape tape;
    return tape;
  }

 private:
  std::vector<std::function<void()>> entries_;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<TensorStorage<T>>()) {
    for (std::size_t e : shape) {
      if (e == 0) throw DimensionError("tensor extents must be positive, got " +
                                       shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("shape " + shape_str(shape) + " does not match " +
                           std::to_string(data.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, {value}); }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<T> data, bool requires_grad = false) {
    return Tensor(Shape{rows, cols}, std::move(data), requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t rows() const { return impl_->shape.at(0); }
  std::size_t cols() const { return impl_->shape.back(); }

  std::span<const T> data() const { return impl_->data; }
  // Direct mutation is reserved for parameter updates and test perturbation.
  std::span<T> mutable_data() { return impl_->data; }

  T operator[](std::size_t i) const { return impl_->data[i]; }
  T at(std::size_t r, std::size_t c) const {
    return impl_->data[r * cols() + c];
  }

  T item() const {
    if (numel() != 1) {
      throw ContractError("item() on tensor of shape " + shape_str(shape()));
    }
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    impl_->requires_grad = flag;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad() { impl_->grad.clear(); }

  const std::shared_ptr<TensorStorage<T>>& storage() const { return impl_; }

  // Deep copy without autodiff history.
  Tensor detach() const {
    return Tensor(impl_->shape, impl_->data, false);
  }

 private:
  std::shared_ptr<TensorStorage<T>> impl_;
};

// True when an operation over these inputs must be recorded.
template <typename T, typename... Rest>
bool tracks(const Tensor<T>& first, const Rest&... rest) {
  if (!grad_enabled()) return false;
  return first.requires_grad() || (rest.requires_grad() || ...);
}

template <typename T>
Tensor<T> make_output(Shape shape, std::vector<T> data, bool tracked) {
  return Tensor<T>(std::move(shape), std::move(data), tracked);
}

template <typename T>
void record_adjoint(std::function<void()> adjoint) {
  Tape<T>::current().record(std::move(adjoint));
}

// Seeds d(loss)/d(loss) = 1 and replays the tape. Gradients accumulate
// additively into every tracked tensor reachable from the loss.
template <typename T>
void backward(Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss");
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a loss that is not tracked");
  }
  loss.mutable_grad()[0] += T(1);
  Tape<T>::current().replay();
}

}  // namespace htr
