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

#include "spin/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spin/rng.hpp"

namespace spin {

namespace {

double Evaluate(const std::function<Tensor<double>()>& f) {
  NoGradScope<double> no_grad;
  return f().item();
}

}  // namespace

double FiniteDifferenceCheck(
    const std::function<Tensor<double>(const Tensor<double>&)>& f,
    const Tensor<double>& x, double step) {
  Tensor<double> input = x.detach();
  input.set_requires_grad(true);
  GradCheckOptions options;
  options.step = step;
  return FiniteDifferenceCheck([&] { return f(input); }, {input}, options);
}

double FiniteDifferenceCheck(const std::function<Tensor<double>()>& f,
                             std::vector<Tensor<double>> inputs,
                             const GradCheckOptions& options) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tape<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> scope(tape);
    loss = f();
  }
  tape.Backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
  }
  tape.Reset();

  SplitMix64 rng(options.sample_seed);
  double worst = 0.0;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    auto data = inputs[p].mutable_data();
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t count = data.size();
    if (options.max_elements_per_input != 0 &&
        options.max_elements_per_input < data.size()) {
      count = options.max_elements_per_input;
      // Partial Fisher-Yates for a seeded sample.
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + rng.UniformIndex(data.size() - i);
        std::swap(order[i], order[j]);
      }
    }
    for (std::size_t n = 0; n < count; ++n) {
      const std::size_t i = order[n];
      const double saved = data[i];
      data[i] = saved + options.step;
      const double up = Evaluate(f);
      data[i] = saved - options.step;
      const double down = Evaluate(f);
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[p][i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  for (auto& t : inputs) t.zero_grad();
  return worst;
}

}  // namespace spin
