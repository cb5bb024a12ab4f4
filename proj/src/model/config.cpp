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

#include <cmath>
#include <stdexcept>

#include "spin/model.hpp"

namespace spin {

const char* IamVariantName(IamVariant v) {
  return v == IamVariant::kGroup4 ? "group4" : "vanilla";
}

IamVariant ParseIamVariant(const std::string& name) {
  if (name == "vanilla") return IamVariant::kVanilla;
  if (name == "group4") return IamVariant::kGroup4;
  throw std::invalid_argument("iam_variant must be 'vanilla' or 'group4', got '" +
                              name + "'");
}

ModelConfig ModelConfig::Desk() {
  ModelConfig c;
  c.num_instances = 16;
  c.decoder_width = 64;
  c.decoder_depth = 4;
  c.mask_dim = 32;
  return c;
}

void ModelConfig::Validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
  if (input_h <= 0 || input_h % 32 != 0) fail("input_h must be a positive multiple of 32");
  if (input_w <= 0 || input_w % 32 != 0) fail("input_w must be a positive multiple of 32");
  if (num_classes <= 0) fail("num_classes must be positive");
  if (num_instances <= 0) fail("num_instances must be positive");
  if (decoder_width <= 0) fail("decoder_width must be positive");
  if (decoder_depth <= 0) fail("decoder_depth must be positive");
  if (mask_dim <= 0) fail("mask_dim must be positive");
  if (stem_channels <= 0) fail("stem_channels must be positive");
  for (int c : backbone_channels) {
    if (c <= 0) fail("backbone_channels must be positive");
  }
  if (backbone_channels[2] % 4 != 0) fail("backbone_channels[2] must be divisible by 4");
  if (iam_variant == IamVariant::kGroup4 && decoder_width % 4 != 0) {
    fail("decoder_width must be divisible by 4 for group4");
  }
}

double PriorBias(double prior) { return -std::log((1.0 - prior) / prior); }

template <typename T>
Tensor<T> ParameterSet<T>::Add(const std::string& name, Shape shape) {
  for (const auto& [n, t] : entries_) {
    if (n == name) throw std::invalid_argument("duplicate parameter name " + name);
  }
  Tensor<T> t(std::move(shape));
  t.set_requires_grad(true);
  entries_.emplace_back(name, t);
  return t;
}

template <typename T>
std::vector<Tensor<T>> ParameterSet<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

template <typename T>
Tensor<T> ParameterSet<T>::Get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named " + name);
}

template <typename T>
std::size_t ParameterSet<T>::ElementCount() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

template <typename T>
void ParameterSet<T>::ZeroGrad() {
  for (auto& e : entries_) e.second.zero_grad();
}

template class ParameterSet<float>;
template class ParameterSet<double>;

}  // namespace spin
