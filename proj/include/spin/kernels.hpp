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

// Raw numeric kernels behind the autodiff ops.
//
// Every kernel exists twice: an OpenMP-parallel version in `spin::kernels`
// used by the engine, and a plain nested-loop version in
// `spin::kernels::reference` kept as the test oracle and benchmark baseline.
// Parallel kernels split work over output rows/channels only, so each output
// element is reduced by exactly one thread in a fixed order and results are
// bit-identical for any thread count.

#ifndef SPIN_KERNELS_HPP_
#define SPIN_KERNELS_HPP_

#include <cstddef>

namespace spin::kernels {

/// Geometry of a 3x3, pad-1 convolution.
struct ConvGeometry {
  int in_channels = 0;
  int in_h = 0;
  int in_w = 0;
  int out_channels = 0;
  int stride = 1;
  int groups = 1;

  int out_h() const { return (in_h - 1) / stride + 1; }
  int out_w() const { return (in_w - 1) / stride + 1; }
  int in_per_group() const { return in_channels / groups; }
  int out_per_group() const { return out_channels / groups; }
  // Rows of the im2col matrix for one group.
  int patch_size() const { return in_per_group() * 9; }
};

// C[M,N] (+)= A[M,K] * B[K,N], all row-major with the given leading dims.
template <typename T>
void gemm(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c,
          int ldc, bool accumulate);

// out[N,M] = in[M,N]
template <typename T>
void transpose(int m, int n, const T* in, T* out);

template <typename T>
void im2col(const ConvGeometry& g, int group, const T* input, T* columns);

template <typename T>
void col2im_add(const ConvGeometry& g, int group, const T* columns, T* input);

// weight: [out_channels, in_per_group, 3, 3]; bias may be null.
template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight,
                    const T* bias, T* output);

// Accumulates into whichever of grad_input / grad_weight / grad_bias is
// non-null.
template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* input, const T* weight,
                     const T* grad_output, T* grad_input, T* grad_weight,
                     T* grad_bias);

// Half-pixel-centre bilinear resize, edge clamped, per channel.
template <typename T>
void bilinear_resize_forward(int channels, int in_h, int in_w, int out_h,
                             int out_w, const T* input, T* output);

template <typename T>
void bilinear_resize_backward(int channels, int in_h, int in_w, int out_h,
                              int out_w, const T* grad_output, T* grad_input);

namespace reference {

template <typename T>
void gemm(int m, int n, int k, const T* a, const T* b, T* c);

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight,
                    const T* bias, T* output);

template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* input, const T* weight,
                     const T* grad_output, T* grad_input, T* grad_weight,
                     T* grad_bias);

template <typename T>
void bilinear_resize_forward(int channels, int in_h, int in_w, int out_h,
                             int out_w, const T* input, T* output);

}  // namespace reference
}  // namespace spin::kernels

#endif  // SPIN_KERNELS_HPP_
