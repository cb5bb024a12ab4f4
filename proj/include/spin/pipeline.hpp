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

// Inference, mask AP evaluation and per-stage latency measurement.
//
// Post-processing is strictly per instance slot: each slot is rescored,
// thresholded, upsampled and binarised on its own. No step compares two
// slots, so there is no sorting and no suppression on the inference path.

#ifndef SPIN_PIPELINE_HPP_
#define SPIN_PIPELINE_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "spin/data.hpp"
#include "spin/model.hpp"

namespace spin {

inline constexpr double kDefaultScoreThreshold = 0.4;
inline constexpr double kMaskThreshold = 0.5;

struct Detection {
  int slot = 0;
  int category = 0;
  double confidence = 0;  // sqrt(class_prob * objectness)
  double class_prob = 0;
  double objectness = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> mask;  // full resolution, 0 or 1
};

/// Everything post-processing may see about one instance slot.
struct SlotView {
  int slot = 0;
  std::span<const float> class_probs;  // [C]
  float objectness = 0;
  std::span<const float> soft_mask;  // [mask_h * mask_w]
  int mask_h = 0;
  int mask_w = 0;
};

/// Geometric-mean rescoring of a class probability by objectness.
double Rescore(double class_prob, double objectness);

/// Argmax class, rescore, threshold; then 4x bilinear upsample and binarise.
std::optional<Detection> PostProcessSlot(const SlotView& view, double threshold);

std::vector<Detection> PostProcess(const PredictionSet<float>& preds, double threshold);

std::vector<Detection> Infer(const SparseInstModel<float>& model, const Tensor<float>& image,
                             double threshold = kDefaultScoreThreshold);

struct ApResult {
  double ap = 0;
  double ap50 = 0;
  double ap75 = 0;
  std::vector<double> per_threshold;  // 0.50, 0.55, ..., 0.95
  int classes_evaluated = 0;
};

std::vector<double> CocoIouThresholds();

/// Binary-mask IoU, 0 when both masks are empty.
double BinaryMaskIou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// COCO-style mask AP with 101-point interpolation. Per class and threshold,
/// detections are ranked by confidence (stable) and each is greedily matched
/// to the highest-IoU unmatched ground truth with IoU >= threshold. AP is
/// averaged over classes that have ground truth, then over thresholds.
ApResult EvaluateAp(const std::vector<std::vector<Detection>>& detections,
                    const std::vector<std::vector<GroundTruthInstance>>& ground_truth,
                    int num_classes, const std::vector<double>& iou_thresholds = CocoIouThresholds());

/// Number of (image, gt) pairs claimed by more than one detection with
/// IoU > 0.5, summed over images.
int CountDuplicateDetections(const std::vector<std::vector<Detection>>& detections,
                             const std::vector<std::vector<GroundTruthInstance>>& ground_truth);

struct MatchedDiceResult {
  double mean_dice = 0;
  int pairs = 0;
};

/// Soft dice over Hungarian-matched pairs at loss resolution.
MatchedDiceResult MeanMatchedDice(const SparseInstModel<float>& model, const Dataset& dataset);

struct EvalResult {
  ApResult ap;
  MatchedDiceResult dice;
  int images = 0;
  int detections = 0;
  int duplicates = 0;
  double threshold = kDefaultScoreThreshold;

  std::string Table() const;
  nlohmann::json ToJson() const;
};

EvalResult Evaluate(const SparseInstModel<float>& model, const Dataset& dataset,
                    double threshold = kDefaultScoreThreshold);

struct StageTiming {
  std::string name;
  double ms = 0;       // mean per image
  double percent = 0;
};

struct TimingReport {
  std::array<StageTiming, 4> stages;  // backbone, encoder, decoder, postprocess
  double total_ms = 0;
  int images = 0;
  int warmup = 0;
  int height = 0;
  int width = 0;
  int threads = 1;

  std::string Table() const;
  nlohmann::json ToJson() const;
};

/// Single-threaded per-stage latency on synthetic scenes at the model's input
/// size. Throws std::invalid_argument unless images >= 10 and warmup >= 3.
TimingReport Bench(const SparseInstModel<float>& model, int images, int warmup,
                   std::uint64_t seed = 0);

/// Writes each detection's mask as a black/white PPM and a colour overlay of
/// all detections on the input image.
void DumpMasks(const std::filesystem::path& dir, std::span<const float> image, int height,
               int width, const std::vector<Detection>& detections);

}  // namespace spin

#endif  // SPIN_PIPELINE_HPP_
