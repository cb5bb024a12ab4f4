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

#include "spin/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <stdexcept>

#include "spin/ops.hpp"
#include "spin/rng.hpp"

namespace spin {

namespace fs = std::filesystem;
using nlohmann::json;

template <typename T>
AdamW<T>::AdamW(const ParameterSet<T>& params, OptimizerConfig config)
    : params_(params.tensors()), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

template <typename T>
bool AdamW<T>::Step(double lr) {
  for (const auto& p : params_) {
    for (T g : p.grad()) {
      if (!std::isfinite(static_cast<double>(g))) return false;
    }
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto p = params_[k].mutable_data();
    const auto g = params_[k].grad();
    auto m = m_[k].mutable_data();
    auto v = v_[k].mutable_data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = (mi / c1) / (std::sqrt(vi / c2) + config_.eps);
      const double pi = p[i];
      p[i] = static_cast<T>(pi - lr * update - lr * config_.weight_decay * pi);
    }
  }
  return true;
}

template <typename T>
void AdamW<T>::Restore(long step, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw std::invalid_argument("optimizer state does not match parameter count");
  }
  step_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

template class AdamW<float>;
template class AdamW<double>;

namespace {

template <typename U>
void Take(const json& j, const char* key, U* out, std::set<std::string>* seen) {
  if (!j.contains(key)) return;
  seen->insert(key);
  try {
    *out = j.at(key).get<U>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

TrainConfig TrainConfigFromJson(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("training config must be a JSON object");
  TrainConfig c;
  std::set<std::string> seen;
  ModelConfig& m = c.model;
  Take(j, "input_h", &m.input_h, &seen);
  Take(j, "input_w", &m.input_w, &seen);
  Take(j, "num_classes", &m.num_classes, &seen);
  Take(j, "num_instances", &m.num_instances, &seen);
  Take(j, "decoder_width", &m.decoder_width, &seen);
  Take(j, "decoder_depth", &m.decoder_depth, &seen);
  Take(j, "mask_dim", &m.mask_dim, &seen);
  std::string variant = IamVariantName(m.iam_variant);
  Take(j, "iam_variant", &variant, &seen);
  m.iam_variant = ParseIamVariant(variant);
  Take(j, "backbone_channels", &m.backbone_channels, &seen);
  Take(j, "stem_channels", &m.stem_channels, &seen);
  Take(j, "with_ppm", &m.with_ppm, &seen);
  Take(j, "with_fusion", &m.with_fusion, &seen);
  LossWeights& w = c.loss;
  Take(j, "lambda_cls", &w.cls, &seen);
  Take(j, "lambda_dice", &w.dice, &seen);
  Take(j, "lambda_pix", &w.pix, &seen);
  Take(j, "lambda_obj", &w.obj, &seen);
  Take(j, "focal_gamma", &w.focal_gamma, &seen);
  Take(j, "focal_alpha", &w.focal_alpha, &seen);
  Take(j, "matching_alpha", &w.matching_alpha, &seen);
  OptimizerConfig& o = c.optimizer;
  Take(j, "lr", &o.lr, &seen);
  Take(j, "beta1", &o.beta1, &seen);
  Take(j, "beta2", &o.beta2, &seen);
  Take(j, "eps", &o.eps, &seen);
  Take(j, "weight_decay", &o.weight_decay, &seen);
  Take(j, "batch_size", &c.batch_size, &seen);
  Take(j, "steps", &c.steps, &seen);
  Take(j, "lr_decay_at", &c.lr_decay_at, &seen);
  Take(j, "lr_decay_factor", &c.lr_decay_factor, &seen);
  Take(j, "flip_probability", &c.flip_probability, &seen);
  Take(j, "seed", &c.seed, &seen);
  Take(j, "checkpoint_every", &c.checkpoint_every, &seen);
  for (const auto& [key, value] : j.items()) {
    if (!seen.count(key)) throw std::invalid_argument("unknown config key '" + key + "'");
  }
  m.Validate();
  for (double v : {w.cls, w.dice, w.pix, w.obj, w.focal_gamma}) {
    if (v < 0) throw std::invalid_argument("loss weights must be non-negative");
  }
  if (c.batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (c.steps < 0) throw std::invalid_argument("steps must be non-negative");
  if (c.checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
  if (c.flip_probability < 0 || c.flip_probability > 1) {
    throw std::invalid_argument("flip_probability must be in [0, 1]");
  }
  return c;
}

json TrainConfigToJson(const TrainConfig& c) {
  const ModelConfig& m = c.model;
  return {{"input_h", m.input_h},
          {"input_w", m.input_w},
          {"num_classes", m.num_classes},
          {"num_instances", m.num_instances},
          {"decoder_width", m.decoder_width},
          {"decoder_depth", m.decoder_depth},
          {"mask_dim", m.mask_dim},
          {"iam_variant", IamVariantName(m.iam_variant)},
          {"backbone_channels", m.backbone_channels},
          {"stem_channels", m.stem_channels},
          {"with_ppm", m.with_ppm},
          {"with_fusion", m.with_fusion},
          {"lambda_cls", c.loss.cls},
          {"lambda_dice", c.loss.dice},
          {"lambda_pix", c.loss.pix},
          {"lambda_obj", c.loss.obj},
          {"focal_gamma", c.loss.focal_gamma},
          {"focal_alpha", c.loss.focal_alpha},
          {"matching_alpha", c.loss.matching_alpha},
          {"lr", c.optimizer.lr},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"eps", c.optimizer.eps},
          {"weight_decay", c.optimizer.weight_decay},
          {"batch_size", c.batch_size},
          {"steps", c.steps},
          {"lr_decay_at", c.lr_decay_at},
          {"lr_decay_factor", c.lr_decay_factor},
          {"flip_probability", c.flip_probability},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig LoadTrainConfig(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  try {
    return TrainConfigFromJson(j);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

double LearningRateAt(const TrainConfig& config, long step) {
  const long decay_step = static_cast<long>(std::floor(config.lr_decay_at * config.steps));
  return step < decay_step ? config.optimizer.lr
                           : config.optimizer.lr * config.lr_decay_factor;
}

template <typename T>
Tensor<T> SceneImage(const SyntheticScene& scene) {
  return Tensor<T>({3, scene.height, scene.width},
                   std::vector<T>(scene.image.begin(), scene.image.end()));
}

template <typename T>
TargetSet<T> SceneTargets(const SyntheticScene& scene) {
  TargetSet<T> t;
  const int h = scene.height / 4, w = scene.width / 4;
  t.pixels = h * w;
  std::vector<T> masks;
  for (const auto& inst : scene.instances) {
    t.classes.push_back(inst.category);
    const auto small = DownsampleMask(inst.mask, scene.height, scene.width, 4);
    masks.insert(masks.end(), small.begin(), small.end());
  }
  if (!t.classes.empty()) t.masks = Tensor<T>({t.size(), t.pixels}, std::move(masks));
  return t;
}

template Tensor<float> SceneImage<float>(const SyntheticScene&);
template Tensor<double> SceneImage<double>(const SyntheticScene&);
template TargetSet<float> SceneTargets<float>(const SyntheticScene&);
template TargetSet<double> SceneTargets<double>(const SyntheticScene&);

namespace {

constexpr char kConfigPrefix[] = "config/";
constexpr char kMomentPrefix[] = "adamw.m/";
constexpr char kVariancePrefix[] = "adamw.v/";

bool IsMetadata(const std::string& name) {
  return name.starts_with(kConfigPrefix) || name.starts_with("adamw.") ||
         name.starts_with("train.");
}

json ModelJson(const ModelConfig& m) {
  TrainConfig c;
  c.model = m;
  json all = TrainConfigToJson(c);
  json out;
  for (const char* key : {"input_h", "input_w", "num_classes", "num_instances",
                          "decoder_width", "decoder_depth", "mask_dim", "iam_variant",
                          "backbone_channels", "stem_channels", "with_ppm", "with_fusion"}) {
    out[key] = all[key];
  }
  return out;
}

}  // namespace

Checkpoint MakeCheckpoint(const SparseInstModel<float>& model, const AdamW<float>* optimizer,
                          long train_step) {
  Checkpoint ckpt;
  for (const auto& [name, t] : model.parameters().entries()) ckpt.Add(name, t);
  if (optimizer != nullptr) {
    ckpt.AddScalar("adamw.step", static_cast<double>(optimizer->step()));
    const auto& entries = model.parameters().entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
      ckpt.Add(kMomentPrefix + entries[k].first, optimizer->first_moments()[k]);
      ckpt.Add(kVariancePrefix + entries[k].first, optimizer->second_moments()[k]);
    }
  }
  ckpt.AddScalar("train.step", static_cast<double>(train_step));
  const json echo = ModelJson(model.config());
  for (const auto& [key, value] : echo.items()) {
    const std::string name = kConfigPrefix + key;
    if (value.is_array()) {
      std::vector<double> v;
      for (const auto& e : value) v.push_back(e.get<double>());
      ckpt.Add(name, Tensor<double>({static_cast<int>(v.size())}, v));
    } else if (value.is_string()) {
      ckpt.AddScalar(name, ParseIamVariant(value.get<std::string>()) == IamVariant::kGroup4);
    } else if (value.is_boolean()) {
      ckpt.AddScalar(name, value.get<bool>() ? 1.0 : 0.0);
    } else {
      ckpt.AddScalar(name, value.get<double>());
    }
  }
  return ckpt;
}

ModelConfig ModelConfigFromCheckpoint(const Checkpoint& checkpoint) {
  json j;
  const json defaults = ModelJson(ModelConfig{});
  for (const auto& [key, value] : defaults.items()) {
    const NamedTensor* t = checkpoint.Find(kConfigPrefix + key);
    if (t == nullptr) throw std::runtime_error("checkpoint lacks config entry '" + key + "'");
    if (t->dtype != DType::kF64) {
      throw std::runtime_error("checkpoint config entry '" + key + "' is not f64");
    }
    if (value.is_array()) {
      j[key] = t->f64;
    } else if (value.is_string()) {
      j[key] = t->f64[0] != 0 ? "group4" : "vanilla";
    } else if (value.is_boolean()) {
      j[key] = t->f64[0] != 0;
    } else {
      j[key] = static_cast<long>(t->f64[0]);
    }
  }
  try {
    return TrainConfigFromJson(j).model;
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("checkpoint config is invalid: ") + e.what());
  }
}

void LoadParameters(const Checkpoint& checkpoint, SparseInstModel<float>& model) {
  std::set<std::string> expected;
  for (auto& [name, param] : model.parameters().entries()) {
    expected.insert(name);
    const NamedTensor* t = checkpoint.Find(name);
    if (t == nullptr) throw std::runtime_error("checkpoint is missing parameter '" + name + "'");
    if (t->dtype != DType::kF32) {
      throw std::runtime_error("checkpoint parameter '" + name + "' is not f32");
    }
    if (t->shape != param.shape()) {
      throw std::runtime_error("checkpoint parameter '" + name + "' has shape " +
                               ShapeString(t->shape) + ", model expects " +
                               ShapeString(param.shape()));
    }
    Tensor<float> dst = param;
    std::copy(t->f32.begin(), t->f32.end(), dst.mutable_data().begin());
  }
  for (const auto& t : checkpoint.tensors()) {
    if (!IsMetadata(t.name) && !expected.count(t.name)) {
      throw std::runtime_error("checkpoint has unexpected tensor '" + t.name + "'");
    }
  }
}

std::unique_ptr<SparseInstModel<float>> LoadModel(const Checkpoint& checkpoint) {
  auto model = std::make_unique<SparseInstModel<float>>(ModelConfigFromCheckpoint(checkpoint), 0);
  LoadParameters(checkpoint, *model);
  return model;
}

namespace {

void CheckAssignment(const Assignment& a, int num_gts, int num_preds, long step) {
  std::vector<bool> used(num_preds, false);
  for (const auto& [k, i] : a.pairs) {
    if (k < 0 || k >= num_gts || i < 0 || i >= num_preds || used[i]) {
      throw std::logic_error("assignment is not injective at step " + std::to_string(step));
    }
    used[i] = true;
  }
  if (static_cast<int>(a.pairs.size()) != std::min(num_gts, num_preds)) {
    throw std::logic_error("assignment size mismatch at step " + std::to_string(step));
  }
}

}  // namespace

TrainResult Train(const TrainConfig& config, const Dataset& dataset, const fs::path& out_dir,
                  const StepCallback& on_step) {
  config.model.Validate();
  if (dataset.scenes.empty()) throw std::invalid_argument("training dataset is empty");
  for (const auto& s : dataset.scenes) {
    if (s.height != config.model.input_h || s.width != config.model.input_w) {
      throw std::invalid_argument("dataset scenes are " + std::to_string(s.width) + "x" +
                                  std::to_string(s.height) + " but the model expects " +
                                  std::to_string(config.model.input_w) + "x" +
                                  std::to_string(config.model.input_h));
    }
  }
  fs::create_directories(out_dir);

  // One stream seeds the weights, a second drives sampling and flips.
  SplitMix64 streams(config.seed);
  const std::uint64_t init_seed = streams.Next();
  SplitMix64 rng(streams.Next());

  TrainResult result;
  result.model = std::make_unique<SparseInstModel<float>>(config.model, init_seed);
  SparseInstModel<float>& model = *result.model;
  AdamW<float> optimizer(model.parameters(), config.optimizer);

  std::ofstream log(out_dir / "train_log.tsv");
  if (!log) throw std::runtime_error("cannot write " + (out_dir / "train_log.tsv").string());
  log << "step\ttotal\tcls\tdice\tpix\tobj\tmatched\n";

  const int count = static_cast<int>(dataset.scenes.size());
  std::vector<int> order(count);
  int cursor = count;
  auto next_index = [&]() {
    if (cursor == count) {
      for (int i = 0; i < count; ++i) order[i] = i;
      for (int i = count - 1; i > 0; --i) std::swap(order[i], order[rng.UniformIndex(i + 1)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  Tape<float> tape;
  const double inv_batch = 1.0 / config.batch_size;
  for (long step = 0; step < config.steps; ++step) {
    model.parameters().ZeroGrad();
    LossReport mean;
    try {
      for (int b = 0; b < config.batch_size; ++b) {
        SyntheticScene scene = dataset.scenes[next_index()];
        if (rng.Uniform() < config.flip_probability) HorizontalFlip(scene);
        const Tensor<float> image = SceneImage<float>(scene);
        const TargetSet<float> targets = SceneTargets<float>(scene);
        tape.Reset();
        ImageLoss<float> loss;
        Tensor<float> scaled;
        {
          TapeScope<float> scope(tape);
          const PredictionSet<float> preds = model.Forward(image);
          loss = ComputeImageLoss(preds, targets, config.loss);
          scaled = MulScalar(loss.total, static_cast<float>(inv_batch));
        }
        CheckAssignment(loss.assignment, targets.size(), config.model.num_instances, step + 1);
        if (!std::isfinite(loss.report.total)) {
          throw std::runtime_error("non-finite total loss");
        }
        tape.Backward(scaled);
        mean.total += loss.report.total * inv_batch;
        mean.cls += loss.report.cls * inv_batch;
        mean.dice += loss.report.dice * inv_batch;
        mean.pix += loss.report.pix * inv_batch;
        mean.obj += loss.report.obj * inv_batch;
        mean.matched_count += loss.report.matched_count;
      }
    } catch (const std::runtime_error& e) {
      tape.Reset();
      SaveCheckpoint(MakeCheckpoint(model, &optimizer, step), out_dir / "last_good.spin");
      throw std::runtime_error("training aborted at step " + std::to_string(step + 1) + ": " +
                               e.what() + " (last good state saved to last_good.spin)");
    }
    tape.Reset();
    if (!optimizer.Step(LearningRateAt(config, step))) {
      ++result.skipped_steps;
      std::cerr << "warning: non-finite gradient at step " << step + 1 << ", update skipped\n";
    }
    log << mean.LogLine(step + 1) << '\n';
    result.history.push_back(mean);
    if (on_step) on_step(step + 1, mean);
    if (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) {
      SaveCheckpoint(MakeCheckpoint(model, &optimizer, step + 1), out_dir / "checkpoint_last.spin");
    }
  }
  log.flush();
  SaveCheckpoint(MakeCheckpoint(model, &optimizer, config.steps), out_dir / "model.spin");
  return result;
}

}  // namespace spin
