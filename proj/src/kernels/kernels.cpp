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

#include "spin/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace spin::kernels {

namespace {

constexpr int kMr = 4;

template <typename T>
constexpr int Nr() {
  return 256 / static_cast<int>(sizeof(T));
}

// Full kMr x Nr tile; accumulators stay in registers across the k loop.
template <typename T>
inline void MicroTile(int k, const T* a, int lda, const T* b, int ldb, T* c,
                      int ldc, bool accumulate) {
  constexpr int nr = Nr<T>();
  T acc[kMr][nr];
  for (int r = 0; r < kMr; ++r) {
#pragma omp simd
    for (int j = 0; j < nr; ++j) acc[r][j] = accumulate ? c[r * ldc + j] : T(0);
  }
  for (int p = 0; p < k; ++p) {
    const T* brow = b + static_cast<std::size_t>(p) * ldb;
    const T a0 = a[0 * lda + p];
    const T a1 = a[1 * lda + p];
    const T a2 = a[2 * lda + p];
    const T a3 = a[3 * lda + p];
#pragma omp simd
    for (int j = 0; j < nr; ++j) {
      const T bv = brow[j];
      acc[0][j] += a0 * bv;
      acc[1][j] += a1 * bv;
      acc[2][j] += a2 * bv;
      acc[3][j] += a3 * bv;
    }
  }
  for (int r = 0; r < kMr; ++r) {
#pragma omp simd
    for (int j = 0; j < nr; ++j) c[r * ldc + j] = acc[r][j];
  }
}

// Ragged edge: rows < kMr or cols < Nr.
template <typename T>
inline void EdgeTile(int rows, int cols, int k, const T* a, int lda,
                     const T* b, int ldb, T* c, int ldc, bool accumulate) {
  for (int r = 0; r < rows; ++r) {
    T* crow = c + static_cast<std::size_t>(r) * ldc;
    if (!accumulate) std::fill(crow, crow + cols, T(0));
    const T* arow = a + static_cast<std::size_t>(r) * lda;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + static_cast<std::size_t>(p) * ldb;
#pragma omp simd
      for (int j = 0; j < cols; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

template <typename T>
void gemm(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c,
          int ldc, bool accumulate) {
  constexpr int nr = Nr<T>();
  const int row_blocks = (m + kMr - 1) / kMr;
#pragma omp parallel for schedule(static)
  for (int rb = 0; rb < row_blocks; ++rb) {
    const int i0 = rb * kMr;
    const int rows = std::min(kMr, m - i0);
    const T* ab = a + static_cast<std::size_t>(i0) * lda;
    T* cb = c + static_cast<std::size_t>(i0) * ldc;
    int j0 = 0;
    if (rows == kMr) {
      for (; j0 + nr <= n; j0 += nr) {
        MicroTile(k, ab, lda, b + j0, ldb, cb + j0, ldc, accumulate);
      }
    }
    if (j0 < n) {
      EdgeTile(rows, n - j0, k, ab, lda, b + j0, ldb, cb + j0, ldc,
               accumulate);
    }
  }
}

template <typename T>
void transpose(int m, int n, const T* in, T* out) {
  constexpr int kBlock = 32;
#pragma omp parallel for schedule(static)
  for (int i0 = 0; i0 < m; i0 += kBlock) {
    for (int j0 = 0; j0 < n; j0 += kBlock) {
      const int i1 = std::min(m, i0 + kBlock);
      const int j1 = std::min(n, j0 + kBlock);
      for (int i = i0; i < i1; ++i) {
        for (int j = j0; j < j1; ++j) {
          out[static_cast<std::size_t>(j) * m + i] =
              in[static_cast<std::size_t>(i) * n + j];
        }
      }
    }
  }
}

template <typename T>
void im2col(const ConvGeometry& g, int group, const T* input, T* columns) {
  const int cin = g.in_per_group();
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int plane = oh * ow;
  const T* base = input + static_cast<std::size_t>(group) * cin * g.in_h * g.in_w;
#pragma omp parallel for schedule(static)
  for (int row = 0; row < cin * 9; ++row) {
    const int ci = row / 9;
    const int ky = (row % 9) / 3;
    const int kx = row % 3;
    const T* src = base + static_cast<std::size_t>(ci) * g.in_h * g.in_w;
    T* dst = columns + static_cast<std::size_t>(row) * plane;
    for (int y = 0; y < oh; ++y) {
      const int iy = y * g.stride + ky - 1;
      T* drow = dst + y * ow;
      if (iy < 0 || iy >= g.in_h) {
        std::fill(drow, drow + ow, T(0));
        continue;
      }
      const T* srow = src + static_cast<std::size_t>(iy) * g.in_w;
      for (int x = 0; x < ow; ++x) {
        const int ix = x * g.stride + kx - 1;
        drow[x] = (ix < 0 || ix >= g.in_w) ? T(0) : srow[ix];
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, int group, const T* columns, T* input) {
  const int cin = g.in_per_group();
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int plane = oh * ow;
  T* base = input + static_cast<std::size_t>(group) * cin * g.in_h * g.in_w;
  // One thread per input channel; the nine taps are applied in fixed order.
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < cin; ++ci) {
    T* dst = base + static_cast<std::size_t>(ci) * g.in_h * g.in_w;
    for (int tap = 0; tap < 9; ++tap) {
      const int ky = tap / 3;
      const int kx = tap % 3;
      const T* src = columns + static_cast<std::size_t>(ci * 9 + tap) * plane;
      for (int y = 0; y < oh; ++y) {
        const int iy = y * g.stride + ky - 1;
        if (iy < 0 || iy >= g.in_h) continue;
        T* drow = dst + static_cast<std::size_t>(iy) * g.in_w;
        const T* srow = src + y * ow;
        for (int x = 0; x < ow; ++x) {
          const int ix = x * g.stride + kx - 1;
          if (ix >= 0 && ix < g.in_w) drow[ix] += srow[x];
        }
      }
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight,
                    const T* bias, T* output) {
  const int plane = g.out_h() * g.out_w();
  const int patch = g.patch_size();
  const int opg = g.out_per_group();
  std::vector<T> columns(static_cast<std::size_t>(patch) * plane);
  for (int grp = 0; grp < g.groups; ++grp) {
    im2col(g, grp, input, columns.data());
    T* out = output + static_cast<std::size_t>(grp) * opg * plane;
    gemm(opg, plane, patch, weight + static_cast<std::size_t>(grp) * opg * patch,
         patch, columns.data(), plane, out, plane, false);
  }
  if (bias != nullptr) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < g.out_channels; ++co) {
      T* out = output + static_cast<std::size_t>(co) * plane;
      const T bv = bias[co];
      for (int i = 0; i < plane; ++i) out[i] += bv;
    }
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* input, const T* weight,
                     const T* grad_output, T* grad_input, T* grad_weight,
                     T* grad_bias) {
  const int plane = g.out_h() * g.out_w();
  const int patch = g.patch_size();
  const int opg = g.out_per_group();
  if (grad_bias != nullptr) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < g.out_channels; ++co) {
      const T* gy = grad_output + static_cast<std::size_t>(co) * plane;
      T s = 0;
      for (int i = 0; i < plane; ++i) s += gy[i];
      grad_bias[co] += s;
    }
  }
  if (grad_input == nullptr && grad_weight == nullptr) return;
  std::vector<T> columns(static_cast<std::size_t>(patch) * plane);
  std::vector<T> scratch(static_cast<std::size_t>(patch) * plane);
  std::vector<T> weight_t(static_cast<std::size_t>(patch) * opg);
  for (int grp = 0; grp < g.groups; ++grp) {
    const T* gy = grad_output + static_cast<std::size_t>(grp) * opg * plane;
    const T* w = weight + static_cast<std::size_t>(grp) * opg * patch;
    if (grad_weight != nullptr) {
      im2col(g, grp, input, columns.data());
      transpose(patch, plane, columns.data(), scratch.data());
      gemm(opg, patch, plane, gy, plane, scratch.data(), patch,
           grad_weight + static_cast<std::size_t>(grp) * opg * patch, patch,
           true);
    }
    if (grad_input != nullptr) {
      transpose(opg, patch, w, weight_t.data());
      gemm(patch, plane, opg, weight_t.data(), opg, gy, plane, scratch.data(),
           plane, false);
      col2im_add(g, grp, scratch.data(), grad_input);
    }
  }
}

namespace {

struct Tap {
  int i0;
  int i1;
  double frac;
};

inline Tap SourceTap(int o, int in_size, int out_size) {
  const double scale = static_cast<double>(in_size) / out_size;
  double src = (o + 0.5) * scale - 0.5;
  if (src < 0) src = 0;
  int i0 = static_cast<int>(src);
  if (i0 > in_size - 1) i0 = in_size - 1;
  const int i1 = std::min(i0 + 1, in_size - 1);
  return {i0, i1, src - i0};
}

}  // namespace

template <typename T>
void bilinear_resize_forward(int channels, int in_h, int in_w, int out_h,
                             int out_w, const T* input, T* output) {
  std::vector<Tap> ys(out_h);
  std::vector<Tap> xs(out_w);
  for (int y = 0; y < out_h; ++y) ys[y] = SourceTap(y, in_h, out_h);
  for (int x = 0; x < out_w; ++x) xs[x] = SourceTap(x, in_w, out_w);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    const T* src = input + static_cast<std::size_t>(c) * in_h * in_w;
    T* dst = output + static_cast<std::size_t>(c) * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const Tap ty = ys[y];
      const T wy = static_cast<T>(ty.frac);
      const T* r0 = src + ty.i0 * in_w;
      const T* r1 = src + ty.i1 * in_w;
      for (int x = 0; x < out_w; ++x) {
        const Tap tx = xs[x];
        const T wx = static_cast<T>(tx.frac);
        const T top = r0[tx.i0] * (T(1) - wx) + r0[tx.i1] * wx;
        const T bot = r1[tx.i0] * (T(1) - wx) + r1[tx.i1] * wx;
        dst[y * out_w + x] = top * (T(1) - wy) + bot * wy;
      }
    }
  }
}

template <typename T>
void bilinear_resize_backward(int channels, int in_h, int in_w, int out_h,
                              int out_w, const T* grad_output, T* grad_input) {
  std::vector<Tap> ys(out_h);
  std::vector<Tap> xs(out_w);
  for (int y = 0; y < out_h; ++y) ys[y] = SourceTap(y, in_h, out_h);
  for (int x = 0; x < out_w; ++x) xs[x] = SourceTap(x, in_w, out_w);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    const T* gy = grad_output + static_cast<std::size_t>(c) * out_h * out_w;
    T* gx = grad_input + static_cast<std::size_t>(c) * in_h * in_w;
    for (int y = 0; y < out_h; ++y) {
      const Tap ty = ys[y];
      const T wy = static_cast<T>(ty.frac);
      T* r0 = gx + ty.i0 * in_w;
      T* r1 = gx + ty.i1 * in_w;
      for (int x = 0; x < out_w; ++x) {
        const Tap tx = xs[x];
        const T wx = static_cast<T>(tx.frac);
        const T g = gy[y * out_w + x];
        const T top = g * (T(1) - wy);
        const T bot = g * wy;
        r0[tx.i0] += top * (T(1) - wx);
        r0[tx.i1] += top * wx;
        r1[tx.i0] += bot * (T(1) - wx);
        r1[tx.i1] += bot * wx;
      }
    }
  }
}

namespace reference {

template <typename T>
void gemm(int m, int n, int k, const T* a, const T* b, T* c) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T s = 0;
      for (int p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight,
                    const T* bias, T* output) {
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int cin = g.in_per_group();
  const int opg = g.out_per_group();
  for (int co = 0; co < g.out_channels; ++co) {
    const int grp = co / opg;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        T s = bias != nullptr ? bias[co] : T(0);
        for (int ci = 0; ci < cin; ++ci) {
          const int ic = grp * cin + ci;
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = y * g.stride + ky - 1;
              const int ix = x * g.stride + kx - 1;
              if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
              s += weight[((co * cin + ci) * 3 + ky) * 3 + kx] *
                   input[(ic * g.in_h + iy) * g.in_w + ix];
            }
          }
        }
        output[(co * oh + y) * ow + x] = s;
      }
    }
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* input, const T* weight,
                     const T* grad_output, T* grad_input, T* grad_weight,
                     T* grad_bias) {
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int cin = g.in_per_group();
  const int opg = g.out_per_group();
  for (int co = 0; co < g.out_channels; ++co) {
    const int grp = co / opg;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        const T gy = grad_output[(co * oh + y) * ow + x];
        if (grad_bias != nullptr) grad_bias[co] += gy;
        for (int ci = 0; ci < cin; ++ci) {
          const int ic = grp * cin + ci;
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = y * g.stride + ky - 1;
              const int ix = x * g.stride + kx - 1;
              if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
              const int wi = ((co * cin + ci) * 3 + ky) * 3 + kx;
              const int xi = (ic * g.in_h + iy) * g.in_w + ix;
              if (grad_weight != nullptr) grad_weight[wi] += gy * input[xi];
              if (grad_input != nullptr) grad_input[xi] += gy * weight[wi];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void bilinear_resize_forward(int channels, int in_h, int in_w, int out_h,
                             int out_w, const T* input, T* output) {
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < out_h; ++y) {
      for (int x = 0; x < out_w; ++x) {
        double sy = (y + 0.5) * in_h / out_h - 0.5;
        double sx = (x + 0.5) * in_w / out_w - 0.5;
        sy = std::clamp(sy, 0.0, static_cast<double>(in_h - 1));
        sx = std::clamp(sx, 0.0, static_cast<double>(in_w - 1));
        const int y0 = static_cast<int>(std::floor(sy));
        const int x0 = static_cast<int>(std::floor(sx));
        const int y1 = std::min(y0 + 1, in_h - 1);
        const int x1 = std::min(x0 + 1, in_w - 1);
        const double fy = sy - y0;
        const double fx = sx - x0;
        auto at = [&](int yy, int xx) {
          return static_cast<double>(input[(c * in_h + yy) * in_w + xx]);
        };
        const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                         fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
        output[(c * out_h + y) * out_w + x] = static_cast<T>(v);
      }
    }
  }
}

}  // namespace reference

#define SPIN_INSTANTIATE_KERNELS(T)                                            \
  template void gemm<T>(int, int, int, const T*, int, const T*, int, T*, int, \
                        bool);                                                 \
  template void transpose<T>(int, int, const T*, T*);                          \
  template void im2col<T>(const ConvGeometry&, int, const T*, T*);            \
  template void col2im_add<T>(const ConvGeometry&, int, const T*, T*);        \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*,    \
                                  const T*, T*);                               \
  template void conv2d_backward<T>(const ConvGeometry&, const T*, const T*,   \
                                   const T*, T*, T*, T*);                      \
  template void bilinear_resize_forward<T>(int, int, int, int, int, const T*, \
                                           T*);                                \
  template void bilinear_resize_backward<T>(int, int, int, int, int,          \
                                            const T*, T*);                     \
  template void reference::gemm<T>(int, int, int, const T*, const T*, T*);    \
  template void reference::conv2d_forward<T>(const ConvGeometry&, const T*,   \
                                             const T*, const T*, T*);          \
  template void reference::conv2d_backward<T>(const ConvGeometry&, const T*,  \
                                              const T*, const T*, T*, T*, T*); \
  template void reference::bilinear_resize_forward<T>(int, int, int, int, int, \
                                                      const T*, T*);

SPIN_INSTANTIATE_KERNELS(float)
SPIN_INSTANTIATE_KERNELS(double)

#undef SPIN_INSTANTIATE_KERNELS

}  // namespace spin::kernels
