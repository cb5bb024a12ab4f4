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

#include "spin/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace spin {

std::vector<int> Assignment::PredForGt() const {
  std::vector<int> out(pairs.size(), -1);
  for (const auto& [k, i] : pairs) out[k] = i;
  return out;
}

std::vector<int> Assignment::GtForPred(int n) const {
  std::vector<int> out(n, -1);
  for (const auto& [k, i] : pairs) out[i] = k;
  return out;
}

template <typename T>
double Dice(std::span<const T> soft, std::span<const T> target) {
  if (soft.size() != target.size()) {
    throw std::invalid_argument("dice: mask lengths differ (" +
                                std::to_string(soft.size()) + " vs " +
                                std::to_string(target.size()) + ")");
  }
  double inter = 0, mm = 0, tt = 0;
  for (std::size_t i = 0; i < soft.size(); ++i) {
    const double m = soft[i];
    const double t = target[i];
    inter += m * t;
    mm += m * m;
    tt += t * t;
  }
  const double denom = mm + tt;
  if (denom < 1e-12) {
    const bool both_empty =
        std::all_of(soft.begin(), soft.end(), [](T v) { return v == T(0); }) &&
        std::all_of(target.begin(), target.end(), [](T v) { return v == T(0); });
    return both_empty ? 1.0 : 0.0;
  }
  return 2.0 * inter / denom;
}

double MatchingScore(double p, double d, double alpha) {
  const double pc = std::max(p, 1e-12);
  const double dc = std::max(d, 1e-12);
  return std::pow(pc, 1.0 - alpha) * std::pow(dc, alpha);
}

template <typename T>
ScoreMatrix BuildScoreMatrix(std::span<const T> probs, int num_classes,
                             std::span<const T> masks, int pixels,
                             std::span<const int> gt_classes,
                             std::span<const T> gt_masks, double alpha) {
  const int n = static_cast<int>(probs.size()) / num_classes;
  const int k = static_cast<int>(gt_classes.size());
  if (masks.size() != static_cast<std::size_t>(n) * pixels) {
    throw std::invalid_argument("score matrix: mask buffer does not hold N x P values");
  }
  if (gt_masks.size() != static_cast<std::size_t>(k) * pixels) {
    throw std::invalid_argument("score matrix: gt mask buffer does not hold K x P values");
  }
  ScoreMatrix s(n, k);
  for (int i = 0; i < n; ++i) {
    const auto m = masks.subspan(static_cast<std::size_t>(i) * pixels, pixels);
    for (int g = 0; g < k; ++g) {
      const int c = gt_classes[g];
      if (c < 0 || c >= num_classes) {
        throw std::invalid_argument("score matrix: gt class " + std::to_string(c) +
                                    " out of range");
      }
      const auto t = gt_masks.subspan(static_cast<std::size_t>(g) * pixels, pixels);
      s(i, g) = MatchingScore(probs[static_cast<std::size_t>(i) * num_classes + c],
                              Dice(m, t), alpha);
    }
  }
  return s;
}

namespace {

double CanonicalTotal(const ScoreMatrix& s, const std::vector<int>& pred_for_gt) {
  double total = 0;
  for (int k = 0; k < s.gts; ++k) total += s(pred_for_gt[k], k);
  return total;
}

Assignment MakeAssignment(const ScoreMatrix& s, const std::vector<int>& pred_for_gt) {
  Assignment a;
  std::vector<bool> used(s.preds, false);
  for (int k = 0; k < s.gts; ++k) {
    a.pairs.emplace_back(k, pred_for_gt[k]);
    used[pred_for_gt[k]] = true;
  }
  for (int i = 0; i < s.preds; ++i) {
    if (!used[i]) a.unmatched_preds.push_back(i);
  }
  a.total = CanonicalTotal(s, pred_for_gt);
  return a;
}

// Minimum-cost assignment of every row to a distinct column, rows <= cols.
// Shortest augmenting path with potentials; cost is row-major rows x cols.
std::vector<int> SolveMinCost(int rows, int cols, const std::vector<double>& cost) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(rows + 1, 0.0), v(cols + 1, 0.0);
  std::vector<int> col_owner(cols + 1, 0), way(cols + 1, 0);
  for (int r = 1; r <= rows; ++r) {
    col_owner[0] = r;
    int j0 = 0;
    std::vector<double> minv(cols + 1, inf);
    std::vector<bool> used(cols + 1, false);
    do {
      used[j0] = true;
      const int i0 = col_owner[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        const double cur = cost[static_cast<std::size_t>(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[col_owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (col_owner[j0] != 0);
    do {
      const int j1 = way[j0];
      col_owner[j0] = col_owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> col_for_row(rows, -1);
  for (int j = 1; j <= cols; ++j) {
    if (col_owner[j] != 0) col_for_row[col_owner[j] - 1] = j - 1;
  }
  return col_for_row;
}

// Best completion for gts [first, K) using only preds not in `taken`.
std::vector<int> SolveSuffix(const ScoreMatrix& s, int first,
                             const std::vector<bool>& taken) {
  std::vector<int> free_preds;
  for (int i = 0; i < s.preds; ++i) {
    if (!taken[i]) free_preds.push_back(i);
  }
  const int rows = s.gts - first;
  const int cols = static_cast<int>(free_preds.size());
  if (rows == 0) return {};
  std::vector<double> cost(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      cost[static_cast<std::size_t>(r) * cols + c] = -s(free_preds[c], first + r);
    }
  }
  std::vector<int> local = SolveMinCost(rows, cols, cost);
  for (int& c : local) c = free_preds[c];
  return local;
}

}  // namespace

Assignment Hungarian(const ScoreMatrix& scores) {
  if (scores.gts > scores.preds) {
    throw std::invalid_argument("hungarian: more ground truths (" +
                                std::to_string(scores.gts) + ") than predictions (" +
                                std::to_string(scores.preds) + ")");
  }
  for (double v : scores.values) {
    if (!std::isfinite(v)) throw std::invalid_argument("hungarian: non-finite score");
  }
  const int k = scores.gts;
  if (k == 0) return MakeAssignment(scores, {});

  std::vector<bool> none(scores.preds, false);
  const double optimum = CanonicalTotal(scores, SolveSuffix(scores, 0, none));

  // Fix gts in order, each to the smallest pred that still admits an optimal
  // completion.
  std::vector<int> chosen;
  std::vector<bool> taken(scores.preds, false);
  for (int g = 0; g < k; ++g) {
    bool placed = false;
    for (int i = 0; i < scores.preds && !placed; ++i) {
      if (taken[i]) continue;
      taken[i] = true;
      std::vector<int> full = chosen;
      full.push_back(i);
      const std::vector<int> rest = SolveSuffix(scores, g + 1, taken);
      full.insert(full.end(), rest.begin(), rest.end());
      if (CanonicalTotal(scores, full) >= optimum - kTieTolerance) {
        chosen.push_back(i);
        placed = true;
      } else {
        taken[i] = false;
      }
    }
    if (!placed) throw std::logic_error("hungarian: tie-break refinement failed");
  }
  return MakeAssignment(scores, chosen);
}

namespace {

struct Enumerator {
  const ScoreMatrix& s;
  std::vector<int> current;
  std::vector<bool> used;
  double best = -std::numeric_limits<double>::infinity();
  double threshold = 0;
  bool find_first = false;
  std::vector<int> found;

  // Returns true once the first qualifying assignment has been recorded.
  bool Visit(int g, double partial) {
    if (g == s.gts) {
      if (!find_first) {
        best = std::max(best, partial);
        return false;
      }
      if (partial >= threshold) {
        found = current;
        return true;
      }
      return false;
    }
    for (int i = 0; i < s.preds; ++i) {
      if (used[i]) continue;
      used[i] = true;
      current.push_back(i);
      const bool done = Visit(g + 1, partial + s(i, g));
      current.pop_back();
      used[i] = false;
      if (done) return true;
    }
    return false;
  }
};

}  // namespace

Assignment BruteForceAssign(const ScoreMatrix& scores) {
  if (scores.gts > 7) {
    throw std::invalid_argument("brute force assignment supports K <= 7, got " +
                                std::to_string(scores.gts));
  }
  if (scores.gts > scores.preds) {
    throw std::invalid_argument("brute force assignment: K > N");
  }
  if (scores.gts == 0) return MakeAssignment(scores, {});
  Enumerator e{scores, {}, std::vector<bool>(scores.preds, false),
               -std::numeric_limits<double>::infinity(), 0, false, {}};
  e.Visit(0, 0.0);
  e.find_first = true;
  e.threshold = e.best - kTieTolerance;
  e.Visit(0, 0.0);
  return MakeAssignment(scores, e.found);
}

template double Dice<float>(std::span<const float>, std::span<const float>);
template double Dice<double>(std::span<const double>, std::span<const double>);
template ScoreMatrix BuildScoreMatrix<float>(std::span<const float>, int, std::span<const float>,
                                             int, std::span<const int>, std::span<const float>,
                                             double);
template ScoreMatrix BuildScoreMatrix<double>(std::span<const double>, int,
                                              std::span<const double>, int,
                                              std::span<const int>, std::span<const double>,
                                              double);

}  // namespace spin
