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

#include "spin/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace spin {

namespace {

template <typename T>
Tape<T>*& ActiveSlot() {
  static thread_local Tape<T>* slot = nullptr;
  return slot;
}

}  // namespace

std::size_t ShapeNumel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string ShapeString(const Shape& shape) {
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
Tensor<T>::Tensor(Shape shape, T fill)
    : storage_(std::make_shared<TensorStorage<T>>()) {
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] <= 0) {
      throw std::invalid_argument("tensor extent " + std::to_string(i) +
                                  " must be positive, got " +
                                  ShapeString(shape));
    }
  }
  storage_->data.assign(ShapeNumel(shape), fill);
  storage_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : Tensor(shape, T(0)) {
  if (data.size() != storage_->data.size()) {
    throw std::invalid_argument("tensor data length " +
                                std::to_string(data.size()) +
                                " does not match shape " + ShapeString(shape));
  }
  storage_->data = std::move(data);
}

template <typename T>
int Tensor<T>::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw std::out_of_range("axis " + std::to_string(axis) +
                            " out of range for shape " +
                            ShapeString(shape()));
  }
  return storage_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item() on non-scalar tensor of shape " +
                                ShapeString(shape()));
  }
  return storage_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value) {
  storage_->requires_grad = value;
  if (!value) storage_->grad.clear();
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  if (storage_->requires_grad) storage_->EnsureGrad();
  return storage_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(storage_->grad.begin(), storage_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(storage_->shape, storage_->data);
}

template <typename T>
void Tape<T>::Backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument(
        "backward needs a scalar loss, got shape " +
        (loss.defined() ? ShapeString(loss.shape()) : std::string("<none>")));
  }
  if (entries_.empty()) {
    throw std::invalid_argument("backward on an empty tape");
  }
  if (consumed_) {
    throw std::logic_error("backward already ran on this tape; Reset() first");
  }
  consumed_ = true;
  auto& storage = *loss.storage();
  storage.EnsureGrad();
  storage.grad[0] = T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

template <typename T>
void Tape<T>::Reset() {
  entries_.clear();
  consumed_ = false;
}

template <typename T>
Tape<T>* Tape<T>::Active() {
  return ActiveSlot<T>();
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(ActiveSlot<T>()) {
  ActiveSlot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  ActiveSlot<T>() = previous_;
}

template <typename T>
NoGradScope<T>::NoGradScope() : previous_(ActiveSlot<T>()) {
  ActiveSlot<T>() = nullptr;
}

template <typename T>
NoGradScope<T>::~NoGradScope() {
  ActiveSlot<T>() = previous_;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template class NoGradScope<float>;
template class NoGradScope<double>;

}  // namespace spin
