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
#include <limits>
#include <set>
#include <vector>

#include "spin/matcher.hpp"
#include "spin/rng.hpp"

using namespace spin;

namespace {

ScoreMatrix RandomScores(SplitMix64& rng, int n, int k, bool coarse) {
  ScoreMatrix s(n, k);
  for (auto& v : s.values) v = coarse ? 0.25 * static_cast<double>(rng.UniformIndex(3)) : rng.Uniform();
  return s;
}

// Recursive enumeration of every injective gt -> pred map. Keeps the best
// total; a later map only wins when it beats the best by more than the tie
// tolerance, so among ties the first in lexicographic order survives.
struct Oracle {
  const ScoreMatrix& s;
  std::vector<int> current, best;
  std::vector<bool> used;
  double best_total = -std::numeric_limits<double>::infinity();

  void Run(int k) {
    if (k == s.gts) {
      double total = 0;
      for (int g = 0; g < s.gts; ++g) total += s(current[g], g);
      if (total > best_total + kTieTolerance) {
        best_total = total;
        best = current;
      }
      return;
    }
    for (int i = 0; i < s.preds; ++i) {
      if (used[i]) continue;
      used[i] = true;
      current.push_back(i);
      Run(k + 1);
      current.pop_back();
      used[i] = false;
    }
  }
};

std::vector<int> OracleAssign(const ScoreMatrix& s) {
  Oracle o{s, {}, {}, std::vector<bool>(s.preds, false)};
  o.Run(0);
  return o.best;
}

}  // namespace

TEST_CASE("dice examples") {
  const std::vector<double> a{1, 1, 0, 0};
  CHECK(Dice<double>(a, a) == 1.0);
  CHECK(Dice<double>(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK(Dice<double>(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 0}) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(Dice<double>(std::vector<double>{0, 0}, std::vector<double>{0, 0}) == 1.0);
  CHECK_THROWS_AS(Dice<double>(a, std::vector<double>{1, 0}), std::invalid_argument);
}

TEST_CASE("dice properties on random masks") {
  SplitMix64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> m(20), t(20), u(20);
    bool any = false;
    for (int i = 0; i < 20; ++i) {
      m[i] = rng.Uniform();
      t[i] = rng.Uniform() < 0.4 ? 1.0 : 0.0;
      u[i] = rng.Uniform() < 0.4 ? 1.0 : 0.0;
      any = any || t[i] > 0;
    }
    const double d = Dice<double>(m, t);
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
    CHECK(Dice<double>(t, u) == Dice<double>(u, t));
    if (any) CHECK(Dice<double>(t, t) == 1.0);
  }
}

TEST_CASE("matching score examples") {
  CHECK(MatchingScore(1.0, 1.0, 0.8) == 1.0);
  for (double alpha : {0.1, 0.5, 0.8, 0.95}) {
    CHECK(MatchingScore(0.5, 0.5, alpha) == doctest::Approx(0.5).epsilon(1e-12));
  }
  CHECK(MatchingScore(0.64, 0.25, 0.8) == doctest::Approx(0.3017).epsilon(1e-4));
  CHECK(MatchingScore(0.64, 0.25, 0.8) ==
        doctest::Approx(std::exp(0.2 * std::log(0.64) + 0.8 * std::log(0.25))).epsilon(1e-14));
  CHECK(MatchingScore(0.0, 0.0, 0.8) == doctest::Approx(1e-12));
}

TEST_CASE("matching score is monotone and bounded by its inputs") {
  SplitMix64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double p = rng.Uniform(), d = rng.Uniform(), alpha = rng.Uniform(0.01, 0.99);
    const double dp = rng.Uniform(0, 1 - p), dd = rng.Uniform(0, 1 - d);
    const double s = MatchingScore(p, d, alpha);
    CHECK(MatchingScore(p + dp, d, alpha) >= s);
    CHECK(MatchingScore(p, d + dd, alpha) >= s);
    // Weighted geometric mean lies between its arguments.
    CHECK(s >= std::min(p, d) * (1 - 1e-12) - 1e-12);
    CHECK(s <= std::max(p, d) * (1 + 1e-12) + 1e-12);
  }
}

TEST_CASE("score matrix entries equal the scalar composition") {
  SplitMix64 rng(3);
  const int n = 5, c = 3, k = 3, p = 12;
  std::vector<double> probs(n * c), masks(n * p), gts(k * p);
  for (auto& v : probs) v = rng.Uniform();
  for (auto& v : masks) v = rng.Uniform();
  for (auto& v : gts) v = rng.Uniform() < 0.5 ? 1.0 : 0.0;
  const std::vector<int> classes{2, 0, 2};
  const ScoreMatrix s = BuildScoreMatrix<double>(probs, c, masks, p, classes, gts, 0.8);
  REQUIRE(s.preds == n);
  REQUIRE(s.gts == k);
  for (int i = 0; i < n; ++i) {
    for (int g = 0; g < k; ++g) {
      double mt = 0, mm = 0, tt = 0;
      for (int j = 0; j < p; ++j) {
        mt += masks[i * p + j] * gts[g * p + j];
        mm += masks[i * p + j] * masks[i * p + j];
        tt += gts[g * p + j] * gts[g * p + j];
      }
      const double d = 2 * mt / (mm + tt);
      const double want = std::pow(probs[i * c + classes[g]], 0.2) * std::pow(d, 0.8);
      CHECK(s(i, g) == doctest::Approx(want).epsilon(1e-12));
    }
  }
  const ScoreMatrix empty = BuildScoreMatrix<double>(probs, c, masks, p, {}, {}, 0.8);
  CHECK(empty.gts == 0);
  CHECK(empty.values.empty());
}

TEST_CASE("hungarian worked examples") {
  ScoreMatrix s(2, 2);
  s.values = {0.9, 0.1, 0.8, 0.7};
  const Assignment a = Hungarian(s);
  REQUIRE(a.pairs.size() == 2);
  CHECK(a.pairs[0] == std::pair{0, 0});
  CHECK(a.pairs[1] == std::pair{1, 1});
  CHECK(a.total == doctest::Approx(1.6));

  ScoreMatrix diag(4, 3);
  for (int i = 0; i < 3; ++i) diag(i, i) = 1.0;
  const Assignment b = Hungarian(diag);
  for (int g = 0; g < 3; ++g) CHECK(b.pairs[g] == std::pair{g, g});
  CHECK(b.unmatched_preds == std::vector<int>{3});

  const Assignment none = Hungarian(ScoreMatrix(3, 0));
  CHECK(none.pairs.empty());
  CHECK(none.unmatched_preds == std::vector<int>{0, 1, 2});

  ScoreMatrix flat(5, 4);
  std::fill(flat.values.begin(), flat.values.end(), 0.3);
  const Assignment c = Hungarian(flat);
  for (int g = 0; g < 4; ++g) CHECK(c.pairs[g] == std::pair{g, g});
}

TEST_CASE("hungarian and brute force agree exactly on 1000 random matrices") {
  SplitMix64 rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = static_cast<int>(rng.UniformIndex(8));
    const int n = k + static_cast<int>(rng.UniformIndex(11 - std::max(k, 1)));
    const bool coarse = trial % 4 == 0;
    const ScoreMatrix s = RandomScores(rng, std::max(n, 1), k, coarse);
    const Assignment h = Hungarian(s);
    const Assignment b = BruteForceAssign(s);
    INFO("trial " << trial << " n " << s.preds << " k " << k);
    CHECK(h.total == b.total);
    CHECK(h.pairs == b.pairs);
    CHECK(h.unmatched_preds == b.unmatched_preds);
    CHECK(h.PredForGt() == OracleAssign(s));
  }
}

TEST_CASE("assignments are injective and complete") {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng.UniformIndex(16));
    const int k = static_cast<int>(rng.UniformIndex(n + 1));
    const Assignment a = Hungarian(RandomScores(rng, n, k, trial % 2 == 0));
    std::set<int> preds;
    for (int g = 0; g < k; ++g) {
      CHECK(a.pairs[g].first == g);
      preds.insert(a.pairs[g].second);
    }
    CHECK(static_cast<int>(preds.size()) == k);
    CHECK(static_cast<int>(a.unmatched_preds.size()) == n - k);
    for (int i : a.unmatched_preds) CHECK(preds.count(i) == 0);
    const auto gt_for = a.GtForPred(n);
    for (int g = 0; g < k; ++g) CHECK(gt_for[a.pairs[g].second] == g);
  }
}

TEST_CASE("scaling the score matrix leaves the assignment unchanged") {
  SplitMix64 rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng.UniformIndex(10));
    const int k = static_cast<int>(rng.UniformIndex(std::min(n, 7) + 1));
    ScoreMatrix s = RandomScores(rng, n, k, false);
    const Assignment a = Hungarian(s);
    const double c = rng.Uniform(0.1, 10.0);
    for (auto& v : s.values) v *= c;
    CHECK(Hungarian(s).pairs == a.pairs);
  }
}

TEST_CASE("invalid inputs are rejected") {
  CHECK_THROWS_AS(Hungarian(ScoreMatrix(2, 3)), std::invalid_argument);
  ScoreMatrix bad(2, 2);
  bad(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(Hungarian(bad), std::invalid_argument);
  CHECK_THROWS_AS(BruteForceAssign(ScoreMatrix(9, 8)), std::invalid_argument);
}
