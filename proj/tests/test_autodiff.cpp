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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "op_cases.hpp"
#include "spin/gradcheck.hpp"
#include "spin/ops.hpp"
#include "test_support.hpp"

using namespace spin;
using spin::testing::MaxAbsDiff;
using spin::testing::RandomTensor;

TEST_CASE("every op passes a float64 finite-difference check on 10 seeds") {
  for (const auto& c : spin::testing::OpCases()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const double err = c.run(seed);
      INFO(c.name << " seed " << seed << " error " << err);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("forward values match scalar formulas") {
  Tensor<double> x({4}, std::vector<double>{-2.0, -0.5, 0.0, 3.0});
  const auto sig = Sigmoid(x);
  const auto relu = Relu(x);
  for (int i = 0; i < 4; ++i) {
    CHECK(sig[i] == doctest::Approx(1.0 / (1.0 + std::exp(-x[i]))).epsilon(1e-15));
    CHECK(relu[i] == std::max(0.0, x[i]));
  }
  Tensor<double> pos({3}, std::vector<double>{0.25, 1.0, 4.0});
  CHECK(Sqrt(pos)[2] == 2.0);
  CHECK(Log(pos)[1] == 0.0);
  CHECK(Pow(pos, 3.0)[0] == doctest::Approx(0.015625));
  // Extreme logits stay finite.
  Tensor<double> big({2}, std::vector<double>{-800.0, 800.0});
  CHECK(Sigmoid(big)[0] >= 0.0);
  CHECK(Sigmoid(big)[1] == 1.0);
  // Log clamps at 1e-12.
  Tensor<double> zero({1}, 0.0);
  CHECK(Log(zero)[0] == doctest::Approx(std::log(1e-12)));
}

TEST_CASE("softmax rows sum to one and match exp/sum") {
  SplitMix64 rng(3);
  const auto x = RandomTensor<double>(rng, {3, 4}, -5, 5);
  const auto y = Softmax(x, 1);
  for (int r = 0; r < 3; ++r) {
    double denom = 0;
    for (int c = 0; c < 4; ++c) denom += std::exp(x[r * 4 + c]);
    double sum = 0;
    for (int c = 0; c < 4; ++c) {
      CHECK(y[r * 4 + c] == doctest::Approx(std::exp(x[r * 4 + c]) / denom).epsilon(1e-14));
      sum += y[r * 4 + c];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("adaptive average pool uses floor/ceil bins") {
  // 5 -> 3 bins: rows [0,2), [1,4), [3,5).
  std::vector<double> v(25);
  for (int i = 0; i < 25; ++i) v[i] = i;
  const auto y = AdaptiveAvgPool(Tensor<double>({1, 5, 5}, v), 3);
  auto mean = [&](int y0, int y1, int x0, int x1) {
    double s = 0;
    for (int r = y0; r < y1; ++r) {
      for (int c = x0; c < x1; ++c) s += v[r * 5 + c];
    }
    return s / ((y1 - y0) * (x1 - x0));
  };
  CHECK(y[0] == doctest::Approx(mean(0, 2, 0, 2)));
  CHECK(y[4] == doctest::Approx(mean(1, 4, 1, 4)));
  CHECK(y[8] == doctest::Approx(mean(3, 5, 3, 5)));
}

TEST_CASE("max pool picks the block maximum") {
  const Tensor<double> x({1, 2, 4}, std::vector<double>{1, 5, 2, 0, 3, 4, 7, 6});
  const auto y = MaxPool2x2(x);
  CHECK(y.shape() == Shape{1, 1, 2});
  CHECK(y[0] == 5);
  CHECK(y[1] == 7);
}

TEST_CASE("a tensor used twice accumulates both gradient contributions") {
  Tensor<double> x({3}, std::vector<double>{1.0, 2.0, 3.0});
  x.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> scope(tape);
    loss = Sum(Add(Mul(x, x), MulScalar(x, 3.0)));  // d/dx = 2x + 3
  }
  tape.Backward(loss);
  CHECK(x.grad()[0] == 5.0);
  CHECK(x.grad()[1] == 7.0);
  CHECK(x.grad()[2] == 9.0);
}

TEST_CASE("backward rejects non-scalar losses, empty tapes and repeat calls") {
  Tensor<double> x({2}, 1.0);
  x.set_requires_grad(true);
  Tape<double> tape;
  CHECK_THROWS_AS(tape.Backward(Tensor<double>::Scalar(1.0)), std::invalid_argument);
  Tensor<double> y, s;
  {
    TapeScope<double> scope(tape);
    y = MulScalar(x, 2.0);
    s = Sum(y);
  }
  CHECK_THROWS_AS(tape.Backward(y), std::invalid_argument);
  tape.Backward(s);
  CHECK_THROWS_AS(tape.Backward(s), std::logic_error);
  tape.Reset();
  CHECK_THROWS_AS(tape.Backward(s), std::invalid_argument);
}

TEST_CASE("no-grad scope records nothing") {
  Tensor<double> x({2}, 1.0);
  x.set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  {
    NoGradScope<double> off;
    Tensor<double> y = Sum(MulScalar(x, 2.0));
    CHECK_FALSE(y.requires_grad());
  }
  CHECK_THROWS_AS(tape.Backward(Tensor<double>::Scalar(0.0)), std::invalid_argument);
}

TEST_CASE("ops without a requires-grad input are not recorded") {
  Tape<double> tape;
  TapeScope<double> scope(tape);
  Tensor<double> a({2}, 1.0), b({2}, 2.0);
  const Tensor<double> c = Sum(Add(a, b));
  CHECK_FALSE(c.requires_grad());
}

TEST_CASE("shape errors name the offending dimension") {
  Tensor<double> a({2, 3}), b({4, 5});
  CHECK_THROWS_AS(MatMul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(Add(a, b), std::invalid_argument);
  Tensor<double> img({3, 4, 4}), w({2, 2, 3, 3});
  try {
    Conv2d(img, w, Tensor<double>());
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("channel") != std::string::npos);
  }
  CHECK_THROWS_AS(Tensor<double>({0, 3}), std::invalid_argument);
}

TEST_CASE("normalize rows falls back to uniform for an all-zero row") {
  Tensor<double> x({2, 4}, std::vector<double>{0, 0, 0, 0, 1, 1, 2, 0});
  const auto y = NormalizeRows(x, 1e-6);
  for (int c = 0; c < 4; ++c) CHECK(y[c] == 0.25);
  CHECK(y[4] == doctest::Approx(1.0 / (4.0 + 1e-6)));
}

TEST_CASE("ops are bit-deterministic") {
  SplitMix64 rng(9);
  const auto x = RandomTensor<float>(rng, {8, 12, 12});
  const auto w = RandomTensor<float>(rng, {16, 8, 3, 3});
  const auto a = BilinearUpsample(Relu(Conv2d(x, w, Tensor<float>())), 2);
  const auto b = BilinearUpsample(Relu(Conv2d(x, w, Tensor<float>())), 2);
  CHECK(MaxAbsDiff<float>(a.data(), b.data()) == 0.0);
}

TEST_CASE("float32 and float64 paths agree") {
  SplitMix64 rng(11);
  const auto x64 = RandomTensor<double>(rng, {4, 6, 6});
  const auto w64 = RandomTensor<double>(rng, {4, 4, 3, 3});
  const Tensor<float> x32(x64.shape(), std::vector<float>(x64.data().begin(), x64.data().end()));
  const Tensor<float> w32(w64.shape(), std::vector<float>(w64.data().begin(), w64.data().end()));
  const auto y64 = Sigmoid(Conv2d(x64, w64, Tensor<double>()));
  const auto y32 = Sigmoid(Conv2d(x32, w32, Tensor<float>()));
  for (std::size_t i = 0; i < y64.numel(); ++i) CHECK(std::abs(y64[i] - y32[i]) < 1e-5);
}
