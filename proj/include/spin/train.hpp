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

#ifndef SPIN_TRAIN_HPP_
#define SPIN_TRAIN_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "spin/checkpoint.hpp"
#include "spin/data.hpp"
#include "spin/losses.hpp"
#include "spin/model.hpp"

namespace spin {

struct OptimizerConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// AdamW with decoupled weight decay:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p
template <typename T>
class AdamW {
 public:
  AdamW(const ParameterSet<T>& params, OptimizerConfig config);

  /// Applies one update with learning rate `lr`. If any gradient is
  /// non-finite nothing changes and false is returned.
  bool Step(double lr);

  long step() const { return step_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }
  void Restore(long step, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v);

 private:
  std::vector<Tensor<T>> params_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  OptimizerConfig config_;
  long step_ = 0;
};

struct TrainConfig {
  ModelConfig model = ModelConfig::Desk();
  LossWeights loss;
  OptimizerConfig optimizer;
  int batch_size = 4;
  long steps = 4000;
  double lr_decay_at = 0.8;  // fraction of steps after which lr is scaled
  double lr_decay_factor = 0.1;
  double flip_probability = 0.5;
  std::uint64_t seed = 1;
  long checkpoint_every = 1000;  // 0 disables periodic checkpoints
};

/// Flat JSON object; every key is optional, unknown keys are rejected with
/// std::invalid_argument.
TrainConfig TrainConfigFromJson(const nlohmann::json& j);
nlohmann::json TrainConfigToJson(const TrainConfig& config);
TrainConfig LoadTrainConfig(const std::filesystem::path& path);

double LearningRateAt(const TrainConfig& config, long step);

/// Converts a scene to model input and loss-resolution targets.
template <typename T>
Tensor<T> SceneImage(const SyntheticScene& scene);
template <typename T>
TargetSet<T> SceneTargets(const SyntheticScene& scene);

/// Model parameters + config echo (+ optimizer state when given).
Checkpoint MakeCheckpoint(const SparseInstModel<float>& model, const AdamW<float>* optimizer,
                          long train_step);
ModelConfig ModelConfigFromCheckpoint(const Checkpoint& checkpoint);
/// Builds a model from the config echo and copies every parameter. Throws
/// std::runtime_error if names or shapes disagree.
std::unique_ptr<SparseInstModel<float>> LoadModel(const Checkpoint& checkpoint);
/// Copies parameters into an existing model with the same checks.
void LoadParameters(const Checkpoint& checkpoint, SparseInstModel<float>& model);

struct TrainResult {
  std::unique_ptr<SparseInstModel<float>> model;
  std::vector<LossReport> history;  // batch-averaged, one per step
  int skipped_steps = 0;
};

/// Called after every step with the step index (1-based) and its report.
using StepCallback = std::function<void(long, const LossReport&)>;

/// Writes train_log.tsv, periodic checkpoint_last.spin and the final
/// model.spin into out_dir. On a non-finite loss, saves last_good.spin and
/// throws std::runtime_error.
TrainResult Train(const TrainConfig& config, const Dataset& dataset,
                  const std::filesystem::path& out_dir, const StepCallback& on_step = {});

}  // namespace spin

#endif  // SPIN_TRAIN_HPP_
