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

// Training objective:
//   total = w_cls * focal + w_dice * dice + w_pix * pixel_bce + w_obj * obj_bce
// Classification uses per-class sigmoid focal loss normalised by the
// ground-truth count; mask terms average over matched pairs; objectness is
// trained with BCE against the IoU of each matched prediction's binarised
// mask with its ground truth (0 for unmatched predictions).

#ifndef SPIN_LOSSES_HPP_
#define SPIN_LOSSES_HPP_

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spin/matcher.hpp"
#include "spin/model.hpp"
#include "spin/tensor.hpp"

namespace spin {

struct LossWeights {
  double cls = 2.0;
  double dice = 2.0;
  double pix = 2.0;
  double obj = 1.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double matching_alpha = kMatchingAlpha;
};

struct LossReport {
  double total = 0;
  double cls = 0;
  double dice = 0;
  double pix = 0;
  double obj = 0;
  int matched_count = 0;

  // step, total, cls, dice, pix, obj, matched_count; tab-separated.
  std::string LogLine(long step) const;
};

/// Ground truth at loss resolution (1/4 of the input).
template <typename T>
struct TargetSet {
  std::vector<int> classes;
  Tensor<T> masks;  // [K, P] binary; undefined when K == 0
  int pixels = 0;

  int size() const { return static_cast<int>(classes.size()); }
};

template <typename T>
struct LossTerms {
  Tensor<T> cls;
  Tensor<T> dice;
  Tensor<T> pix;
  Tensor<T> obj;
};

template <typename T>
Tensor<T> FocalLoss(const Tensor<T>& probs, const Assignment& assignment,
                    std::span<const int> gt_classes, double gamma, double alpha);

/// Returns {dice_loss, pixel_loss}; both are constant zero without matches.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> MaskLosses(const Tensor<T>& masks,
                                           const Assignment& assignment,
                                           const TargetSet<T>& targets);

/// [N, 1] constant IoU targets; never tracked by the tape.
template <typename T>
Tensor<T> ObjectnessTargets(const Tensor<T>& masks, const Assignment& assignment,
                            const TargetSet<T>& targets);

template <typename T>
Tensor<T> ObjectnessLoss(const Tensor<T>& objectness, const Tensor<T>& targets);

/// IoU of two binary masks; 0 when both are empty.
template <typename T>
double MaskIou(std::span<const T> a, std::span<const T> b);

template <typename T>
Tensor<T> CombineLosses(const LossTerms<T>& terms, const LossWeights& weights);

/// Scalar totals; throws std::runtime_error if any part is non-finite.
LossReport TotalLoss(double cls, double dice, double pix, double obj,
                     const LossWeights& weights, int matched_count);

template <typename T>
struct ImageLoss {
  Tensor<T> total;
  LossTerms<T> terms;
  LossReport report;
  Assignment assignment;
  Tensor<T> objectness_targets;
};

/// Match, then build every loss term for one image. A provided assignment
/// and/or objectness target tensor is used instead of recomputing it.
template <typename T>
ImageLoss<T> ComputeImageLoss(const PredictionSet<T>& preds,
                              const TargetSet<T>& targets,
                              const LossWeights& weights,
                              const std::optional<Assignment>& fixed_assignment = std::nullopt,
                              const Tensor<T>& fixed_objectness_targets = {});

}  // namespace spin

#endif  // SPIN_LOSSES_HPP_
