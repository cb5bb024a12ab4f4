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

// Differentiable operations. Each op validates shapes (throwing
// std::invalid_argument that names the offending dimension), computes its
// forward value, and records a backward rule on the active tape when any
// input requires grad.

#ifndef SPIN_OPS_HPP_
#define SPIN_OPS_HPP_

#include <span>
#include <vector>

#include "spin/tensor.hpp"

namespace spin {

// log and sqrt clamp their argument to at least this value.
inline constexpr double kLogClamp = 1e-12;

// Elementwise binary ops with right-aligned broadcasting (extents equal or 1).
template <typename T> Tensor<T> Add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> Sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> Mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> Div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> AddScalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> MulScalar(const Tensor<T>& a, T s);

template <typename T> Tensor<T> Sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> Relu(const Tensor<T>& x);
template <typename T> Tensor<T> Log(const Tensor<T>& x);
template <typename T> Tensor<T> Sqrt(const Tensor<T>& x);
template <typename T> Tensor<T> Pow(const Tensor<T>& x, T exponent);
template <typename T> Tensor<T> Softmax(const Tensor<T>& x, int axis);

// [M,K] x [K,N] -> [M,N]
template <typename T> Tensor<T> MatMul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> Transpose(const Tensor<T>& x);
// x [N,in], weight [out,in], bias [out] (may be undefined) -> [N,out]
template <typename T>
Tensor<T> Linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias);

// 3x3 cross-correlation, padding 1. input [C_in,H,W],
// weight [C_out, C_in/groups, 3, 3], bias [C_out] (may be undefined).
template <typename T>
Tensor<T> Conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, int stride = 1, int groups = 1);

// [C,H,W] -> [C,out_h,out_w], half-pixel centres, edge clamped.
template <typename T>
Tensor<T> BilinearResize(const Tensor<T>& x, int out_h, int out_w);
template <typename T>
Tensor<T> BilinearUpsample(const Tensor<T>& x, int factor);

// [C,H,W] -> [C,k,k]; bin i spans [floor(i*H/k), ceil((i+1)*H/k)).
template <typename T>
Tensor<T> AdaptiveAvgPool(const Tensor<T>& x, int k);
template <typename T> Tensor<T> MaxPool2x2(const Tensor<T>& x);

template <typename T>
Tensor<T> Concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T> Tensor<T> Reshape(const Tensor<T>& x, Shape shape);

// [R,C] -> [R,1]
template <typename T> Tensor<T> RowSum(const Tensor<T>& x);
// -> [1]
template <typename T> Tensor<T> Sum(const Tensor<T>& x);
template <typename T> Tensor<T> Mean(const Tensor<T>& x);

// Rows [begin,end) along axis 0.
template <typename T>
Tensor<T> SliceRows(const Tensor<T>& x, int begin, int end);
template <typename T>
Tensor<T> GatherRows(const Tensor<T>& x, std::span<const int> rows);

// [R,C]: each row divided by (row sum + eps); rows whose sum is below eps are
// replaced by the uniform row 1/C and pass no gradient.
template <typename T>
Tensor<T> NormalizeRows(const Tensor<T>& x, T eps);

}  // namespace spin

#endif  // SPIN_OPS_HPP_
