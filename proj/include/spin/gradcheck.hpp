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

#ifndef SPIN_GRADCHECK_HPP_
#define SPIN_GRADCHECK_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "spin/tensor.hpp"

namespace spin {

struct GradCheckOptions {
  double step = 1e-5;
  // 0 checks every element; otherwise a seeded sample of this many elements
  // per input tensor.
  std::size_t max_elements_per_input = 0;
  std::uint64_t sample_seed = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Returns max |analytic - numeric| / max(1, |analytic|,
/// |numeric|) over the checked elements.
double FiniteDifferenceCheck(
    const std::function<Tensor<double>(const Tensor<double>&)>& f,
    const Tensor<double>& x, double step = 1e-5);

/// Multi-input form: `f` closes over `inputs` (typically model parameters),
/// which are perturbed in place and restored afterwards.
double FiniteDifferenceCheck(const std::function<Tensor<double>()>& f,
                             std::vector<Tensor<double>> inputs,
                             const GradCheckOptions& options = {});

}  // namespace spin

#endif  // SPIN_GRADCHECK_HPP_
