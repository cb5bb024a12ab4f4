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

#include "spin/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "spin/ops.hpp"

namespace spin {

namespace {

template <typename T>
Tensor<T> OneMinus(const Tensor<T>& x) {
  return AddScalar(MulScalar(x, T(-1)), T(1));
}

// Elementwise BCE against constant targets, summed.
template <typename T>
Tensor<T> BceSum(const Tensor<T>& probs, const Tensor<T>& targets) {
  Tensor<T> pos = Mul(targets, Log(probs));
  Tensor<T> neg = Mul(OneMinus(targets), Log(OneMinus(probs)));
  return MulScalar(Sum(Add(pos, neg)), T(-1));
}

template <typename T>
Tensor<T> Flatten2d(const Tensor<T>& masks) {
  const int n = masks.dim(0);
  return Reshape(masks, {n, static_cast<int>(masks.numel() / n)});
}

}  // namespace

std::string LossReport::LogLine(long step) const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%ld\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%d", step,
                total, cls, dice, pix, obj, matched_count);
  return buf;
}

template <typename T>
Tensor<T> FocalLoss(const Tensor<T>& probs, const Assignment& assignment,
                    std::span<const int> gt_classes, double gamma, double alpha) {
  const int n = probs.dim(0), c = probs.dim(1);
  Tensor<T> target({n, c});
  Tensor<T> alpha_t({n, c}, static_cast<T>(1.0 - alpha));
  for (const auto& [k, i] : assignment.pairs) {
    const std::size_t idx = static_cast<std::size_t>(i) * c + gt_classes[k];
    target.mutable_data()[idx] = T(1);
    alpha_t.mutable_data()[idx] = static_cast<T>(alpha);
  }
  // p_t = p where the target is 1, 1 - p elsewhere.
  Tensor<T> pt = Add(Mul(target, probs), Mul(OneMinus(target), OneMinus(probs)));
  Tensor<T> modulating = Pow(OneMinus(pt), static_cast<T>(gamma));
  Tensor<T> elems = Mul(alpha_t, Mul(modulating, Log(pt)));
  const double norm = std::max<std::size_t>(1, gt_classes.size());
  return MulScalar(Sum(elems), static_cast<T>(-1.0 / norm));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> MaskLosses(const Tensor<T>& masks,
                                           const Assignment& assignment,
                                           const TargetSet<T>& targets) {
  if (assignment.pairs.empty()) return {Tensor<T>::Scalar(0), Tensor<T>::Scalar(0)};
  std::vector<int> pred_rows, gt_rows;
  for (const auto& [k, i] : assignment.pairs) {
    gt_rows.push_back(k);
    pred_rows.push_back(i);
  }
  Tensor<T> m = GatherRows(Flatten2d(masks), std::span<const int>(pred_rows));
  Tensor<T> t;
  {
    NoGradScope<T> constant;
    t = GatherRows(targets.masks, std::span<const int>(gt_rows));
  }
  if (m.dim(1) != t.dim(1)) {
    throw std::invalid_argument("mask losses: prediction has " + std::to_string(m.dim(1)) +
                                " pixels, target has " + std::to_string(t.dim(1)));
  }
  Tensor<T> tt = RowSum(Mul(t, t));
  Tensor<T> inter = RowSum(Mul(m, t));
  Tensor<T> denom = AddScalar(Add(RowSum(Mul(m, m)), tt), static_cast<T>(1e-12));
  Tensor<T> dice = MulScalar(Div(inter, denom), T(2));
  Tensor<T> dice_loss = OneMinus(Mean(dice));
  Tensor<T> pix_loss = MulScalar(BceSum(m, t), static_cast<T>(1.0 / t.numel()));
  return {dice_loss, pix_loss};
}

template <typename T>
double MaskIou(std::span<const T> a, std::span<const T> b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != T(0);
    const bool y = b[i] != T(0);
    inter += (x && y);
    uni += (x || y);
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

template <typename T>
Tensor<T> ObjectnessTargets(const Tensor<T>& masks, const Assignment& assignment,
                            const TargetSet<T>& targets) {
  const int n = masks.dim(0);
  const std::size_t p = masks.numel() / n;
  Tensor<T> out({n, 1});
  const auto md = masks.data();
  std::vector<T> binary(p);
  for (const auto& [k, i] : assignment.pairs) {
    for (std::size_t j = 0; j < p; ++j) binary[j] = md[i * p + j] >= T(0.5) ? T(1) : T(0);
    const auto t = targets.masks.data().subspan(static_cast<std::size_t>(k) * p, p);
    out.mutable_data()[i] = static_cast<T>(MaskIou<T>(binary, t));
  }
  return out;
}

template <typename T>
Tensor<T> ObjectnessLoss(const Tensor<T>& objectness, const Tensor<T>& targets) {
  if (objectness.numel() != targets.numel()) {
    throw std::invalid_argument("objectness loss: " + ShapeString(objectness.shape()) +
                                " vs targets " + ShapeString(targets.shape()));
  }
  return MulScalar(BceSum(objectness, Reshape(targets, objectness.shape())),
                   static_cast<T>(1.0 / objectness.numel()));
}

template <typename T>
Tensor<T> CombineLosses(const LossTerms<T>& terms, const LossWeights& w) {
  Tensor<T> total = MulScalar(terms.cls, static_cast<T>(w.cls));
  total = Add(total, MulScalar(terms.dice, static_cast<T>(w.dice)));
  total = Add(total, MulScalar(terms.pix, static_cast<T>(w.pix)));
  total = Add(total, MulScalar(terms.obj, static_cast<T>(w.obj)));
  return total;
}

LossReport TotalLoss(double cls, double dice, double pix, double obj,
                     const LossWeights& w, int matched_count) {
  const double parts[] = {cls, dice, pix, obj};
  const char* names[] = {"cls", "dice", "pix", "obj"};
  for (int i = 0; i < 4; ++i) {
    if (!std::isfinite(parts[i])) {
      throw std::runtime_error(std::string("non-finite loss term: ") + names[i]);
    }
  }
  LossReport r;
  r.cls = cls;
  r.dice = dice;
  r.pix = pix;
  r.obj = obj;
  r.matched_count = matched_count;
  r.total = w.cls * cls + w.dice * dice + w.pix * pix + w.obj * obj;
  return r;
}

template <typename T>
ImageLoss<T> ComputeImageLoss(const PredictionSet<T>& preds,
                              const TargetSet<T>& targets,
                              const LossWeights& weights,
                              const std::optional<Assignment>& fixed_assignment,
                              const Tensor<T>& fixed_objectness_targets) {
  ImageLoss<T> out;
  const int n = preds.masks.dim(0);
  const int pixels = static_cast<int>(preds.masks.numel() / n);
  if (fixed_assignment) {
    out.assignment = *fixed_assignment;
  } else {
    const std::span<const T> gt_masks =
        targets.size() > 0 ? targets.masks.data() : std::span<const T>();
    const ScoreMatrix scores = BuildScoreMatrix<T>(
        preds.class_probs.data(), preds.class_probs.dim(1), preds.masks.data(),
        pixels, targets.classes, gt_masks, weights.matching_alpha);
    out.assignment = Hungarian(scores);
  }
  out.objectness_targets = fixed_objectness_targets.defined()
                               ? fixed_objectness_targets
                               : ObjectnessTargets(preds.masks, out.assignment, targets);

  out.terms.cls = FocalLoss(preds.class_probs, out.assignment, targets.classes,
                            weights.focal_gamma, weights.focal_alpha);
  auto [dice, pix] = MaskLosses(preds.masks, out.assignment, targets);
  out.terms.dice = dice;
  out.terms.pix = pix;
  out.terms.obj = ObjectnessLoss(preds.objectness, out.objectness_targets);
  out.total = CombineLosses(out.terms, weights);
  out.report = TotalLoss(out.terms.cls.item(), out.terms.dice.item(), out.terms.pix.item(),
                         out.terms.obj.item(), weights,
                         static_cast<int>(out.assignment.pairs.size()));
  return out;
}

#define SPIN_INSTANTIATE_LOSSES(T)                                                       \
  template Tensor<T> FocalLoss<T>(const Tensor<T>&, const Assignment&,                   \
                                  std::span<const int>, double, double);                 \
  template std::pair<Tensor<T>, Tensor<T>> MaskLosses<T>(const Tensor<T>&,               \
                                                         const Assignment&,              \
                                                         const TargetSet<T>&);           \
  template Tensor<T> ObjectnessTargets<T>(const Tensor<T>&, const Assignment&,           \
                                          const TargetSet<T>&);                          \
  template Tensor<T> ObjectnessLoss<T>(const Tensor<T>&, const Tensor<T>&);              \
  template double MaskIou<T>(std::span<const T>, std::span<const T>);                    \
  template Tensor<T> CombineLosses<T>(const LossTerms<T>&, const LossWeights&);          \
  template ImageLoss<T> ComputeImageLoss<T>(const PredictionSet<T>&, const TargetSet<T>&, \
                                            const LossWeights&,                          \
                                            const std::optional<Assignment>&,            \
                                            const Tensor<T>&);

SPIN_INSTANTIATE_LOSSES(float)
SPIN_INSTANTIATE_LOSSES(double)

#undef SPIN_INSTANTIATE_LOSSES

}  // namespace spin
