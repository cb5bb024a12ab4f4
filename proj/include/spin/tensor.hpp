// Copyright 2026 The SparseInst-Desk Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense row-major tensors and the reverse-mode tape that records operations
// on them.
//
// A Tensor is a cheap handle to shared storage. Operations never mutate their
// inputs; only parameters are updated in place (by the optimizer). When a
// Tape is active on the current thread (see TapeScope) and an operation has at
// least one input with requires_grad, the operation appends its backward rule
// to that tape and the output requires grad as well.

#ifndef SPIN_TENSOR_HPP_
#define SPIN_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace spin {

using Shape = std::vector<int>;

std::size_t ShapeNumel(const Shape& shape);
std::string ShapeString(const Shape& shape);

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient first flows in
  bool requires_grad = false;

  void EnsureGrad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor Scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return storage_->shape; }
  int rank() const { return static_cast<int>(storage_->shape.size()); }
  int dim(int axis) const;
  std::size_t numel() const { return storage_->data.size(); }

  std::span<const T> data() const { return storage_->data; }
  // In-place access for parameter updates and test fixtures; must not be used
  // on a tensor that has been recorded on an un-reset tape.
  std::span<T> mutable_data() { return storage_->data; }
  T item() const;
  T operator[](std::size_t i) const { return storage_->data[i]; }

  bool requires_grad() const { return storage_->requires_grad; }
  Tensor& set_requires_grad(bool value);
  bool has_grad() const { return !storage_->grad.empty(); }
  // Zero-length span when no gradient has been accumulated.
  std::span<const T> grad() const { return storage_->grad; }
  std::span<T> mutable_grad();
  void zero_grad();

  // Deep copy with no gradient tracking.
  Tensor detach() const;

  const std::shared_ptr<TensorStorage<T>>& storage() const { return storage_; }

 private:
  std::shared_ptr<TensorStorage<T>> storage_;
};

/// Ordered record of backward rules for one forward pass.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void Record(BackwardFn fn) { entries_.push_back(std::move(fn)); }
  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse.
  // Throws std::invalid_argument for a non-scalar loss or an empty tape and
  // std::logic_error when called twice without Reset().
  void Backward(const Tensor<T>& loss);

  // Drops all recorded rules (and the intermediates they keep alive).
  void Reset();

  static Tape* Active();

 private:
  template <typename>
  friend class TapeScope;

  std::vector<BackwardFn> entries_;
  bool consumed_ = false;
};

/// Makes `tape` the active tape on this thread for the scope's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Suspends recording on this thread (used for evaluation inside training).
template <typename T>
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

template <typename T>
void Backward(Tape<T>& tape, const Tensor<T>& loss) {
  tape.Backward(loss);
}

}  // namespace spin

#endif  // SPIN_TENSOR_HPP_
