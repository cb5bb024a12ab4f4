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

// Bipartite matching between N predictions and K ground-truth objects.
//
// Predictions are scored against objects by p^(1-alpha) * dice^alpha, where p
// is the predicted probability of the object's class. The assignment
// maximises the total score. Among assignments whose totals tie (within
// kTieTolerance), the one whose (gt, pred) pair sequence, ordered by gt, is
// lexicographically smallest wins; Hungarian and the brute-force oracle share
// this rule so they can be compared exactly.

#ifndef SPIN_MATCHER_HPP_
#define SPIN_MATCHER_HPP_

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace spin {

inline constexpr double kMatchingAlpha = 0.8;
inline constexpr double kTieTolerance = 1e-9;

/// Dense [rows = predictions, cols = ground truths] score matrix. K may be 0.
struct ScoreMatrix {
  int preds = 0;
  int gts = 0;
  std::vector<double> values;  // row-major, preds x gts

  ScoreMatrix() = default;
  ScoreMatrix(int n, int k) : preds(n), gts(k), values(static_cast<std::size_t>(n) * k, 0.0) {}
  double operator()(int pred, int gt) const { return values[static_cast<std::size_t>(pred) * gts + gt]; }
  double& operator()(int pred, int gt) { return values[static_cast<std::size_t>(pred) * gts + gt]; }
};

struct Assignment {
  // (gt index, pred index), ascending by gt; one entry per gt when K <= N.
  std::vector<std::pair<int, int>> pairs;
  std::vector<int> unmatched_preds;  // ascending
  double total = 0.0;                // sum of matched scores in gt order

  // Prediction index matched to each gt.
  std::vector<int> PredForGt() const;
  // Gt index matched to each of n predictions, or -1.
  std::vector<int> GtForPred(int n) const;
};

/// 2 sum(m t) / (sum m^2 + sum t^2); 1 when both masks are empty, 0 when only
/// the denominator vanishes otherwise. Throws on length mismatch.
template <typename T>
double Dice(std::span<const T> soft, std::span<const T> target);

/// p^(1-alpha) * d^alpha with both bases clamped to >= 1e-12.
double MatchingScore(double p, double d, double alpha);

/// probs [N, C], masks [N, P], gt_masks [K, P] (row-major spans).
template <typename T>
ScoreMatrix BuildScoreMatrix(std::span<const T> probs, int num_classes,
                             std::span<const T> masks, int pixels,
                             std::span<const int> gt_classes,
                             std::span<const T> gt_masks, double alpha);

/// Optimal assignment (Kuhn-Munkres on negated scores) with the
/// deterministic tie-break. Requires K <= N and finite scores.
Assignment Hungarian(const ScoreMatrix& scores);

/// Exhaustive search over injective gt -> pred maps. Requires K <= 7.
Assignment BruteForceAssign(const ScoreMatrix& scores);

}  // namespace spin

#endif  // SPIN_MATCHER_HPP_
