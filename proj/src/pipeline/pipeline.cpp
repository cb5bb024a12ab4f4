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

#include "spin/pipeline.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "spin/kernels.hpp"
#include "spin/matcher.hpp"
#include "spin/rng.hpp"
#include "spin/train.hpp"

namespace spin {

namespace fs = std::filesystem;
using nlohmann::json;

double Rescore(double class_prob, double objectness) {
  return std::sqrt(class_prob * objectness);
}

std::optional<Detection> PostProcessSlot(const SlotView& view, double threshold) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(view.class_probs.size()); ++c) {
    if (view.class_probs[c] > view.class_probs[best]) best = c;
  }
  const double p = view.class_probs[best];
  const double confidence = Rescore(p, view.objectness);
  if (confidence < threshold) return std::nullopt;
  Detection d;
  d.slot = view.slot;
  d.category = best;
  d.confidence = confidence;
  d.class_prob = p;
  d.objectness = view.objectness;
  d.height = 4 * view.mask_h;
  d.width = 4 * view.mask_w;
  std::vector<float> up(static_cast<std::size_t>(d.height) * d.width);
  kernels::bilinear_resize_forward(1, view.mask_h, view.mask_w, d.height, d.width,
                                   view.soft_mask.data(), up.data());
  d.mask.resize(up.size());
  for (std::size_t i = 0; i < up.size(); ++i) d.mask[i] = up[i] >= kMaskThreshold ? 1 : 0;
  return d;
}

std::vector<Detection> PostProcess(const PredictionSet<float>& preds, double threshold) {
  const int n = preds.class_probs.dim(0);
  const int c = preds.class_probs.dim(1);
  const int mh = preds.masks.dim(1), mw = preds.masks.dim(2);
  const std::size_t p = static_cast<std::size_t>(mh) * mw;
  std::vector<Detection> out;
  for (int i = 0; i < n; ++i) {
    SlotView view{i, preds.class_probs.data().subspan(static_cast<std::size_t>(i) * c, c),
                  preds.objectness.data()[i], preds.masks.data().subspan(i * p, p), mh, mw};
    if (auto d = PostProcessSlot(view, threshold)) out.push_back(std::move(*d));
  }
  return out;
}

std::vector<Detection> Infer(const SparseInstModel<float>& model, const Tensor<float>& image,
                             double threshold) {
  return PostProcess(model.Forward(image), threshold);
}

std::vector<double> CocoIouThresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

double BinaryMaskIou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw std::invalid_argument("mask IoU: sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]);
    uni += (a[i] || b[i]);
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

// AP of one class at one IoU threshold. `ious[img][d][g]` holds the IoU of
// detection d with gt g in that image.
double ClassAp(const std::vector<std::vector<Detection>>& detections,
               const std::vector<std::vector<GroundTruthInstance>>& ground_truth,
               const std::vector<std::vector<std::vector<double>>>& ious, int category,
               double threshold) {
  struct Ranked {
    double confidence;
    int image;
    int det;
  };
  std::vector<Ranked> ranked;
  int num_gt = 0;
  std::vector<std::vector<bool>> taken(ground_truth.size());
  for (std::size_t img = 0; img < detections.size(); ++img) {
    for (std::size_t d = 0; d < detections[img].size(); ++d) {
      if (detections[img][d].category == category) {
        ranked.push_back({detections[img][d].confidence, static_cast<int>(img),
                          static_cast<int>(d)});
      }
    }
  }
  for (std::size_t img = 0; img < ground_truth.size(); ++img) {
    taken[img].assign(ground_truth[img].size(), false);
    for (const auto& g : ground_truth[img]) num_gt += g.category == category;
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Ranked& a, const Ranked& b) { return a.confidence > b.confidence; });
  std::vector<double> precision, recall;
  int tp = 0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const auto& gts = ground_truth[ranked[r].image];
    int match = -1;
    double best = threshold;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].category != category || taken[ranked[r].image][g]) continue;
      const double iou = ious[ranked[r].image][ranked[r].det][g];
      if (iou >= best && (match < 0 || iou > best)) {
        best = iou;
        match = static_cast<int>(g);
      }
    }
    if (match >= 0) {
      taken[ranked[r].image][match] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
    recall.push_back(static_cast<double>(tp) / num_gt);
  }
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i) {
    precision[i] = std::max(precision[i], precision[i + 1]);
  }
  double sum = 0;
  for (int k = 0; k <= 100; ++k) {
    const double target = k / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), target);
    if (it != recall.end()) sum += precision[it - recall.begin()];
  }
  return sum / 101.0;
}

}  // namespace

ApResult EvaluateAp(const std::vector<std::vector<Detection>>& detections,
                    const std::vector<std::vector<GroundTruthInstance>>& ground_truth,
                    int num_classes, const std::vector<double>& iou_thresholds) {
  if (detections.size() != ground_truth.size()) {
    throw std::invalid_argument("evaluate_ap: detection and ground-truth image counts differ");
  }
  std::vector<std::vector<std::vector<double>>> ious(detections.size());
  for (std::size_t img = 0; img < detections.size(); ++img) {
    for (const auto& d : detections[img]) {
      std::vector<double> row;
      for (const auto& g : ground_truth[img]) row.push_back(BinaryMaskIou(d.mask, g.mask));
      ious[img].push_back(std::move(row));
    }
  }
  std::vector<int> classes;
  for (int c = 0; c < num_classes; ++c) {
    bool present = false;
    for (const auto& gts : ground_truth) {
      for (const auto& g : gts) present = present || g.category == c;
    }
    if (present) classes.push_back(c);
  }
  ApResult result;
  result.classes_evaluated = static_cast<int>(classes.size());
  for (double t : iou_thresholds) {
    double sum = 0;
    for (int c : classes) sum += ClassAp(detections, ground_truth, ious, c, t);
    result.per_threshold.push_back(classes.empty() ? 0.0 : sum / classes.size());
  }
  double total = 0;
  for (double v : result.per_threshold) total += v;
  result.ap = result.per_threshold.empty() ? 0.0 : total / result.per_threshold.size();
  for (std::size_t i = 0; i < iou_thresholds.size(); ++i) {
    if (std::abs(iou_thresholds[i] - 0.5) < 1e-9) result.ap50 = result.per_threshold[i];
    if (std::abs(iou_thresholds[i] - 0.75) < 1e-9) result.ap75 = result.per_threshold[i];
  }
  return result;
}

int CountDuplicateDetections(const std::vector<std::vector<Detection>>& detections,
                             const std::vector<std::vector<GroundTruthInstance>>& ground_truth) {
  int duplicates = 0;
  for (std::size_t img = 0; img < detections.size(); ++img) {
    for (const auto& g : ground_truth[img]) {
      int claims = 0;
      for (const auto& d : detections[img]) claims += BinaryMaskIou(d.mask, g.mask) > 0.5;
      duplicates += claims > 1;
    }
  }
  return duplicates;
}

MatchedDiceResult MeanMatchedDice(const SparseInstModel<float>& model, const Dataset& dataset) {
  MatchedDiceResult r;
  double sum = 0;
  for (const auto& scene : dataset.scenes) {
    const PredictionSet<float> preds = model.Forward(SceneImage<float>(scene));
    const TargetSet<float> targets = SceneTargets<float>(scene);
    if (targets.size() == 0) continue;
    const int p = targets.pixels;
    const ScoreMatrix scores = BuildScoreMatrix<float>(
        preds.class_probs.data(), preds.class_probs.dim(1), preds.masks.data(), p,
        targets.classes, targets.masks.data(), kMatchingAlpha);
    for (const auto& [k, i] : Hungarian(scores).pairs) {
      sum += Dice<float>(preds.masks.data().subspan(static_cast<std::size_t>(i) * p, p),
                         targets.masks.data().subspan(static_cast<std::size_t>(k) * p, p));
      ++r.pairs;
    }
  }
  r.mean_dice = r.pairs == 0 ? 0.0 : sum / r.pairs;
  return r;
}

EvalResult Evaluate(const SparseInstModel<float>& model, const Dataset& dataset,
                    double threshold) {
  EvalResult r;
  r.threshold = threshold;
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<GroundTruthInstance>> gts;
  for (const auto& scene : dataset.scenes) {
    dets.push_back(Infer(model, SceneImage<float>(scene), threshold));
    gts.push_back(scene.instances);
    r.detections += static_cast<int>(dets.back().size());
  }
  r.images = static_cast<int>(dataset.scenes.size());
  r.ap = EvaluateAp(dets, gts, model.config().num_classes);
  r.duplicates = CountDuplicateDetections(dets, gts);
  r.dice = MeanMatchedDice(model, dataset);
  return r;
}

std::string EvalResult::Table() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "images       %d\n"
                "detections   %d (threshold %.2f)\n"
                "duplicates   %d\n"
                "mean dice    %.6f over %d matched pairs\n"
                "AP %.6f  AP50 %.6f  AP75 %.6f\n",
                images, detections, threshold, duplicates, dice.mean_dice, dice.pairs, ap.ap,
                ap.ap50, ap.ap75);
  return buf;
}

json EvalResult::ToJson() const {
  return {{"images", images},
          {"detections", detections},
          {"threshold", threshold},
          {"duplicates", duplicates},
          {"mean_dice", dice.mean_dice},
          {"matched_pairs", dice.pairs},
          {"AP", ap.ap},
          {"AP50", ap.ap50},
          {"AP75", ap.ap75},
          {"AP_per_threshold", ap.per_threshold},
          {"classes_evaluated", ap.classes_evaluated}};
}

namespace {

// Restores the OpenMP thread count on scope exit.
class SingleThreaded {
 public:
  SingleThreaded() : saved_(omp_get_max_threads()) { omp_set_num_threads(1); }
  ~SingleThreaded() { omp_set_num_threads(saved_); }
  SingleThreaded(const SingleThreaded&) = delete;
  SingleThreaded& operator=(const SingleThreaded&) = delete;

 private:
  int saved_;
};

}  // namespace

TimingReport Bench(const SparseInstModel<float>& model, int images, int warmup,
                   std::uint64_t seed) {
  if (images < 10) throw std::invalid_argument("bench needs at least 10 images");
  if (warmup < 3) throw std::invalid_argument("bench needs at least 3 warmup runs");
  SingleThreaded single;
  using Clock = std::chrono::steady_clock;
  const ModelConfig& cfg = model.config();
  std::vector<Tensor<float>> inputs;
  SplitMix64 seeds(seed);
  for (int i = 0; i < 4; ++i) {
    inputs.push_back(SceneImage<float>(GenerateScene(seeds.Next(), cfg.input_h, cfg.input_w, 4)));
  }
  std::array<Clock::duration, 4> spent{};
  std::size_t kept = 0;
  for (int run = 0; run < warmup + images; ++run) {
    const Tensor<float>& image = inputs[run % inputs.size()];
    // Telescoping timestamps: every interval is attributed to exactly one stage.
    const auto t0 = Clock::now();
    const FeaturePyramid<float> pyramid = model.Backbone(image);
    const auto t1 = Clock::now();
    const Tensor<float> x = model.Encoder(pyramid);
    const auto t2 = Clock::now();
    const PredictionSet<float> preds = model.Decoder(x);
    const auto t3 = Clock::now();
    const std::vector<Detection> dets = PostProcess(preds, kDefaultScoreThreshold);
    const auto t4 = Clock::now();
    kept += dets.size();
    if (run >= warmup) {
      spent[0] += t1 - t0;
      spent[1] += t2 - t1;
      spent[2] += t3 - t2;
      spent[3] += t4 - t3;
    }
  }
  (void)kept;
  TimingReport report;
  report.images = images;
  report.warmup = warmup;
  report.height = cfg.input_h;
  report.width = cfg.input_w;
  report.threads = 1;
  const char* names[] = {"backbone", "encoder", "decoder", "postprocess"};
  Clock::duration total{};
  for (const auto& d : spent) total += d;
  const double total_ms = std::chrono::duration<double, std::milli>(total).count() / images;
  report.total_ms = total_ms;
  for (int s = 0; s < 4; ++s) {
    report.stages[s].name = names[s];
    report.stages[s].ms = std::chrono::duration<double, std::milli>(spent[s]).count() / images;
    report.stages[s].percent = total_ms > 0 ? 100.0 * report.stages[s].ms / total_ms : 0.0;
  }
  return report;
}

std::string TimingReport::Table() const {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-12s %10s %8s\n", "stage", "ms/image", "share");
  out += buf;
  for (const auto& s : stages) {
    std::snprintf(buf, sizeof(buf), "%-12s %10.3f %7.2f%%\n", s.name.c_str(), s.ms, s.percent);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "%-12s %10.3f %7.2f%%\n", "total", total_ms, 100.0);
  out += buf;
  std::snprintf(buf, sizeof(buf), "%d images after %d warmup, %dx%d input, %d thread\n", images,
                warmup, width, height, threads);
  out += buf;
  return out;
}

json TimingReport::ToJson() const {
  json stages_json = json::array();
  for (const auto& s : stages) {
    stages_json.push_back({{"name", s.name}, {"ms", s.ms}, {"percent", s.percent}});
  }
  return {{"stages", stages_json}, {"total_ms", total_ms}, {"images", images},
          {"warmup", warmup},      {"height", height},     {"width", width},
          {"threads", threads}};
}

void DumpMasks(const fs::path& dir, std::span<const float> image, int height, int width,
               const std::vector<Detection>& detections) {
  fs::create_directories(dir);
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{{230, 25, 75},
                                                                         {60, 180, 75},
                                                                         {0, 130, 200},
                                                                         {245, 130, 48},
                                                                         {145, 30, 180},
                                                                         {70, 240, 240},
                                                                         {240, 50, 230},
                                                                         {255, 225, 25}}};
  std::vector<std::uint8_t> overlay = PlanarToRgb(image, height, width);
  for (std::size_t k = 0; k < detections.size(); ++k) {
    const Detection& d = detections[k];
    if (d.height != height || d.width != width) {
      throw std::invalid_argument("detection mask size does not match the image");
    }
    std::vector<std::uint8_t> bw(3 * d.mask.size());
    const auto& color = kPalette[k % kPalette.size()];
    for (std::size_t p = 0; p < d.mask.size(); ++p) {
      const std::uint8_t v = d.mask[p] ? 255 : 0;
      bw[3 * p] = bw[3 * p + 1] = bw[3 * p + 2] = v;
      if (d.mask[p]) {
        for (int c = 0; c < 3; ++c) {
          overlay[3 * p + c] = static_cast<std::uint8_t>((overlay[3 * p + c] + color[c]) / 2);
        }
      }
    }
    const std::string label = d.category < kNumShapeClasses
                                  ? ShapeClassNames()[d.category]
                                  : "class" + std::to_string(d.category);
    char name[96];
    std::snprintf(name, sizeof(name), "mask_%02zu_slot%02d_%s.ppm", k, d.slot, label.c_str());
    WritePpm(dir / name, height, width, bw);
  }
  WritePpm(dir / "overlay.ppm", height, width, overlay);
}

}  // namespace spin
