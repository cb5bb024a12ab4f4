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

// Helpers shared by the unit tests and the acceptance binary.

#ifndef SPIN_TESTS_TEST_SUPPORT_HPP_
#define SPIN_TESTS_TEST_SUPPORT_HPP_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spin/rng.hpp"
#include "spin/tensor.hpp"

namespace spin::testing {

template <typename T>
Tensor<T> RandomTensor(SplitMix64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v(ShapeNumel(shape));
  for (auto& x : v) x = static_cast<T>(rng.Uniform(lo, hi));
  return Tensor<T>(std::move(shape), std::move(v));
}

// Values bounded away from zero, for inputs of kinked ops such as relu.
template <typename T>
Tensor<T> AwayFromZero(SplitMix64& rng, Shape shape, double margin = 0.05) {
  std::vector<T> v(ShapeNumel(shape));
  for (auto& x : v) {
    const double mag = rng.Uniform(margin, 1.0);
    x = static_cast<T>(rng.Uniform() < 0.5 ? -mag : mag);
  }
  return Tensor<T>(std::move(shape), std::move(v));
}

// Distinct values on a 0.01 grid in random order, so max-pool winners are
// separated by far more than the finite-difference step.
template <typename T>
Tensor<T> DistinctValues(SplitMix64& rng, Shape shape) {
  const std::size_t n = ShapeNumel(shape);
  std::vector<T> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<T>(0.01 * static_cast<double>(i) - 0.3);
  for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng.UniformIndex(i)]);
  return Tensor<T>(std::move(shape), std::move(v));
}

template <typename T>
double MaxAbsDiff(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) return INFINITY;
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

// Direct nested-loop 3x3 convolution with zero padding 1:
// out[o,y,x] = b[o] + sum_{c,ky,kx} w[o,c,ky,kx] * in[g*cpg+c, y*s+ky-1, x*s+kx-1].
inline std::vector<double> NaiveConv(const std::vector<double>& in, int cin, int h, int w,
                                     const std::vector<double>& wt,
                                     const std::vector<double>& bias, int cout, int stride,
                                     int groups) {
  const int oh = (h - 1) / stride + 1, ow = (w - 1) / stride + 1;
  const int cpg = cin / groups, opg = cout / groups;
  std::vector<double> out(static_cast<std::size_t>(cout) * oh * ow, 0.0);
  for (int o = 0; o < cout; ++o) {
    const int g = o / opg;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = bias.empty() ? 0.0 : bias[o];
        for (int c = 0; c < cpg; ++c) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = y * stride + ky - 1, ix = x * stride + kx - 1;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += wt[((static_cast<std::size_t>(o) * cpg + c) * 3 + ky) * 3 + kx] *
                     in[(static_cast<std::size_t>(g * cpg + c) * h + iy) * w + ix];
            }
          }
        }
        out[(static_cast<std::size_t>(o) * oh + y) * ow + x] = acc;
      }
    }
  }
  return out;
}

template <typename T>
std::vector<double> ToVector(const Tensor<T>& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

inline std::filesystem::path TempDir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("spin_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace spin::testing

#endif  // SPIN_TESTS_TEST_SUPPORT_HPP_
