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

// The network: a small strided backbone, the instance context encoder
// (pyramid pooling on the deepest level plus fusion into one 1/8-scale map),
// and the decoder built around instance activation maps.
//
// Shapes, with H and W the input size and N the instance count:
//   C3 [32, H/8, W/8]   C4 [64, H/16, W/16]   C5 [128, H/32, W/32]
//   X  [D, H/8, W/8]    activation maps [N, H/8*W/8]
//   class probabilities [N, C]   objectness [N, 1]   kernels [N, D_m]
//   soft masks [N, H/4, W/4]

#ifndef SPIN_MODEL_HPP_
#define SPIN_MODEL_HPP_

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spin/tensor.hpp"

namespace spin {

enum class IamVariant { kVanilla, kGroup4 };

const char* IamVariantName(IamVariant v);
IamVariant ParseIamVariant(const std::string& name);

struct ModelConfig {
  int input_h = 128;
  int input_w = 128;
  int num_classes = 3;
  int num_instances = 100;
  int decoder_width = 256;
  int decoder_depth = 4;
  int mask_dim = 128;
  IamVariant iam_variant = IamVariant::kVanilla;
  std::array<int, 3> backbone_channels{32, 64, 128};
  int stem_channels = 16;
  bool with_ppm = true;
  bool with_fusion = true;

  // Desk-scale preset used by the CLI and the overfit benchmark.
  static ModelConfig Desk();

  // Throws std::invalid_argument naming the offending field.
  void Validate() const;
};

/// Ordered, named collection of trainable tensors.
template <typename T>
class ParameterSet {
 public:
  Tensor<T> Add(const std::string& name, Shape shape);

  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const {
    return entries_;
  }
  std::vector<Tensor<T>> tensors() const;
  // Throws std::out_of_range for an unknown name.
  Tensor<T> Get(const std::string& name) const;
  std::size_t ElementCount() const;
  void ZeroGrad();

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

template <typename T>
struct ConvLayer {
  Tensor<T> weight;  // [out, in/groups, 3, 3]
  Tensor<T> bias;    // [out]
  int stride = 1;
  int groups = 1;
};

// A 1x1 convolution, stored as a matrix.
template <typename T>
struct PointwiseLayer {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]
};

template <typename T>
struct LinearLayer {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]
};

template <typename T>
struct FeaturePyramid {
  Tensor<T> c3;
  Tensor<T> c4;
  Tensor<T> c5;
};

template <typename T>
struct ActivationMaps {
  Tensor<T> maps;        // [G*N, P] sigmoid outputs, G = 1 or 4
  Tensor<T> normalized;  // rows sum to 1
  int groups = 1;
};

template <typename T>
struct PredictionSet {
  Tensor<T> class_probs;  // [N, C]
  Tensor<T> objectness;   // [N, 1]
  Tensor<T> kernels;      // [N, D_m]
  Tensor<T> masks;        // [N, H/4, W/4] in (0, 1)
  ActivationMaps<T> activation;
};

// Parameter-free pieces of the decoder, exposed for testing.

/// [2, h, w]; channel 0 is x, channel 1 is y, each spanning [-1, 1].
template <typename T>
Tensor<T> CoordinateFeatures(int h, int w);

/// z = normalize_rows(A) * F^T for each group of N maps; group results are
/// concatenated along the feature axis -> [N, G*D].
template <typename T>
Tensor<T> AggregateInstanceFeatures(const ActivationMaps<T>& maps,
                                    const Tensor<T>& features);

template <typename T>
ActivationMaps<T> MakeActivationMaps(const Tensor<T>& maps, int groups);

/// x [C,H,W] -> [C_out,H,W] via a [C_out,C] matrix.
template <typename T>
Tensor<T> ApplyPointwise(const PointwiseLayer<T>& layer, const Tensor<T>& x);

template <typename T>
Tensor<T> ApplyConv(const ConvLayer<T>& layer, const Tensor<T>& x);

/// Row-normalisation epsilon for activation maps.
inline constexpr double kMapEps = 1e-6;

/// Classification bias giving an initial probability of 0.01.
double PriorBias(double prior = 0.01);

template <typename T>
class SparseInstModel {
 public:
  SparseInstModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

  // image [3, H, W] in [0, 1].
  FeaturePyramid<T> Backbone(const Tensor<T>& image) const;
  Tensor<T> PyramidPooling(const Tensor<T>& c5) const;
  Tensor<T> Encoder(const FeaturePyramid<T>& pyramid) const;

  Tensor<T> InstanceBranch(const Tensor<T>& x) const;
  ActivationMaps<T> Iam(const Tensor<T>& features) const;
  // Aggregation plus the group projection when the variant needs one.
  Tensor<T> InstanceFeatures(const ActivationMaps<T>& maps,
                             const Tensor<T>& features) const;
  // Fills class_probs, objectness and kernels.
  PredictionSet<T> Heads(const Tensor<T>& z) const;
  Tensor<T> MaskFeatures(const Tensor<T>& x) const;
  // [N, H/4, W/4] soft masks.
  Tensor<T> MaskHead(const Tensor<T>& kernels, const Tensor<T>& mask_features) const;

  PredictionSet<T> Decoder(const Tensor<T>& x) const;
  PredictionSet<T> Forward(const Tensor<T>& image) const;

 private:
  ConvLayer<T> AddConv(const std::string& name, int in, int out, int stride,
                       int groups);
  PointwiseLayer<T> AddPointwise(const std::string& name, int in, int out);
  LinearLayer<T> AddLinear(const std::string& name, int in, int out);

  ModelConfig config_;
  ParameterSet<T> params_;

  ConvLayer<T> stem_;
  std::array<std::array<ConvLayer<T>, 3>, 3> stages_;
  std::array<PointwiseLayer<T>, 4> ppm_branches_;
  ConvLayer<T> ppm_out_;
  std::array<PointwiseLayer<T>, 3> laterals_;
  ConvLayer<T> encoder_out_;
  std::vector<ConvLayer<T>> instance_convs_;
  ConvLayer<T> iam_;
  LinearLayer<T> group_projection_;
  LinearLayer<T> cls_head_;
  LinearLayer<T> obj_head_;
  LinearLayer<T> kernel_head_;
  std::vector<ConvLayer<T>> mask_convs_;
  PointwiseLayer<T> mask_projection_;
};

// PPM pool sizes before clamping to the C5 extent.
inline constexpr std::array<int, 4> kPyramidPoolSizes{1, 2, 3, 6};

}  // namespace spin

#endif  // SPIN_MODEL_HPP_
