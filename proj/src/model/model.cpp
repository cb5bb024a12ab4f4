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

// Parameter layout, initialisation, backbone and instance context encoder.

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "spin/model.hpp"
#include "spin/ops.hpp"
#include "spin/rng.hpp"

namespace spin {

namespace {

template <typename T>
void FillUniform(Tensor<T>& t, double bound, SplitMix64& rng) {
  for (auto& v : t.mutable_data()) v = static_cast<T>(rng.Uniform(-bound, bound));
}

template <typename T>
void FillNormal(Tensor<T>& t, double stddev, SplitMix64& rng) {
  for (auto& v : t.mutable_data()) v = static_cast<T>(stddev * rng.Normal());
}

// Kaiming-uniform bound; gain sqrt(2) ahead of a relu, 1 otherwise.
double KaimingBound(int fan_in, bool relu) {
  return std::sqrt((relu ? 6.0 : 3.0) / fan_in);
}

}  // namespace

template <typename T>
ConvLayer<T> SparseInstModel<T>::AddConv(const std::string& name, int in,
                                         int out, int stride, int groups) {
  ConvLayer<T> layer;
  layer.weight = params_.Add(name + ".weight", {out, in / groups, 3, 3});
  layer.bias = params_.Add(name + ".bias", {out});
  layer.stride = stride;
  layer.groups = groups;
  return layer;
}

template <typename T>
PointwiseLayer<T> SparseInstModel<T>::AddPointwise(const std::string& name,
                                                   int in, int out) {
  return {params_.Add(name + ".weight", {out, in}),
          params_.Add(name + ".bias", {out})};
}

template <typename T>
LinearLayer<T> SparseInstModel<T>::AddLinear(const std::string& name, int in,
                                             int out) {
  return {params_.Add(name + ".weight", {out, in}),
          params_.Add(name + ".bias", {out})};
}

template <typename T>
SparseInstModel<T>::SparseInstModel(const ModelConfig& config,
                                    std::uint64_t seed)
    : config_(config) {
  config_.Validate();
  const auto& bc = config_.backbone_channels;
  const int d = config_.decoder_width;
  const int n = config_.num_instances;

  stem_ = AddConv("backbone.stem", 3, config_.stem_channels, 2, 1);
  int in = config_.stem_channels;
  for (int s = 0; s < 3; ++s) {
    const std::string prefix = "backbone.stage" + std::to_string(s + 1);
    stages_[s][0] = AddConv(prefix + ".down", in, bc[s], 2, 1);
    stages_[s][1] = AddConv(prefix + ".conv1", bc[s], bc[s], 1, 1);
    stages_[s][2] = AddConv(prefix + ".conv2", bc[s], bc[s], 1, 1);
    in = bc[s];
  }

  const int branch = bc[2] / 4;
  if (config_.with_ppm) {
    for (std::size_t i = 0; i < kPyramidPoolSizes.size(); ++i) {
      ppm_branches_[i] = AddPointwise("encoder.ppm.branch" + std::to_string(i), bc[2], branch);
    }
    ppm_out_ = AddConv("encoder.ppm.out", bc[2] + 4 * branch, d, 1, 1);
  }
  laterals_[0] = AddPointwise("encoder.lateral3", bc[0], d);
  laterals_[1] = AddPointwise("encoder.lateral4", bc[1], d);
  laterals_[2] = AddPointwise("encoder.lateral5", config_.with_ppm ? d : bc[2], d);
  encoder_out_ = AddConv("encoder.out", d, d, 1, 1);

  for (int i = 0; i < config_.decoder_depth; ++i) {
    instance_convs_.push_back(
        AddConv("decoder.inst.conv" + std::to_string(i), i == 0 ? d + 2 : d, d, 1, 1));
  }
  const bool group4 = config_.iam_variant == IamVariant::kGroup4;
  iam_ = AddConv("decoder.iam", d, group4 ? 4 * n : n, 1, group4 ? 4 : 1);
  if (group4) group_projection_ = AddLinear("decoder.group_proj", 4 * d, d);
  cls_head_ = AddLinear("decoder.cls", d, config_.num_classes);
  obj_head_ = AddLinear("decoder.obj", d, 1);
  kernel_head_ = AddLinear("decoder.kernel", d, config_.mask_dim);
  for (int i = 0; i < config_.decoder_depth; ++i) {
    mask_convs_.push_back(
        AddConv("decoder.mask.conv" + std::to_string(i), i == 0 ? d + 2 : d, d, 1, 1));
  }
  mask_projection_ = AddPointwise("decoder.mask.proj", d, config_.mask_dim);

  // Initialise in registration order so the draw sequence is fixed.
  SplitMix64 rng(seed);
  for (auto& [name, t] : params_.entries()) {
    Tensor<T> tensor = t;
    const bool is_bias = name.size() > 5 && name.ends_with(".bias");
    if (is_bias) {
      if (name == "decoder.cls.bias") {
        std::fill(tensor.mutable_data().begin(), tensor.mutable_data().end(),
                  static_cast<T>(PriorBias()));
      }
      continue;
    }
    if (name == "decoder.iam.weight") {
      FillNormal(tensor, 0.01, rng);
      continue;
    }
    const Shape& s = tensor.shape();
    const bool conv = s.size() == 4;
    const int fan_in = conv ? s[1] * 9 : s[1];
    // Convs feed a relu (except the IAM conv, handled above); matrices do not.
    FillUniform(tensor, KaimingBound(fan_in, conv), rng);
  }
}

template <typename T>
Tensor<T> ApplyConv(const ConvLayer<T>& layer, const Tensor<T>& x) {
  return Conv2d(x, layer.weight, layer.bias, layer.stride, layer.groups);
}

template <typename T>
Tensor<T> ApplyPointwise(const PointwiseLayer<T>& layer, const Tensor<T>& x) {
  if (x.rank() != 3) {
    throw std::invalid_argument("pointwise: input must be [C,H,W], got " +
                                ShapeString(x.shape()));
  }
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int out = layer.weight.dim(0);
  Tensor<T> y = MatMul(layer.weight, Reshape(x, {c, h * w}));
  y = Add(y, Reshape(layer.bias, {out, 1}));
  return Reshape(y, {out, h, w});
}

template <typename T>
FeaturePyramid<T> SparseInstModel<T>::Backbone(const Tensor<T>& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument("backbone: image must be [3,H,W], got " +
                                ShapeString(image.shape()));
  }
  if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0) {
    throw std::invalid_argument("backbone: image size " + ShapeString(image.shape()) +
                                " is not divisible by 32");
  }
  Tensor<T> x = MaxPool2x2(Relu(ApplyConv(stem_, image)));
  std::array<Tensor<T>, 3> outs;
  for (int s = 0; s < 3; ++s) {
    x = Relu(ApplyConv(stages_[s][0], x));
    x = Relu(ApplyConv(stages_[s][1], x));
    x = Relu(ApplyConv(stages_[s][2], x));
    outs[s] = x;
  }
  return {outs[0], outs[1], outs[2]};
}

template <typename T>
Tensor<T> SparseInstModel<T>::PyramidPooling(const Tensor<T>& c5) const {
  if (!config_.with_ppm) {
    throw std::logic_error("pyramid pooling is disabled in this configuration");
  }
  const int h = c5.dim(1), w = c5.dim(2);
  std::vector<Tensor<T>> parts{c5};
  for (std::size_t i = 0; i < kPyramidPoolSizes.size(); ++i) {
    const int k = std::min({kPyramidPoolSizes[i], h, w});
    Tensor<T> pooled = AdaptiveAvgPool(c5, k);
    Tensor<T> projected = Relu(ApplyPointwise(ppm_branches_[i], pooled));
    parts.push_back(BilinearResize(projected, h, w));
  }
  return Relu(ApplyConv(ppm_out_, Concat(parts, 0)));
}

template <typename T>
Tensor<T> SparseInstModel<T>::Encoder(const FeaturePyramid<T>& pyramid) const {
  const Tensor<T> top =
      config_.with_ppm ? PyramidPooling(pyramid.c5) : pyramid.c5;
  // Top-down pathway: P5 -> P4 -> P3.
  const Tensor<T> p5 = ApplyPointwise(laterals_[2], top);
  const Tensor<T> p4 = Add(ApplyPointwise(laterals_[1], pyramid.c4), BilinearUpsample(p5, 2));
  const Tensor<T> p3 = Add(ApplyPointwise(laterals_[0], pyramid.c3), BilinearUpsample(p4, 2));
  Tensor<T> fused = p3;
  if (config_.with_fusion) {
    fused = Add(Add(p3, BilinearUpsample(p4, 2)), BilinearUpsample(p5, 4));
  }
  return Relu(ApplyConv(encoder_out_, fused));
}

template <typename T>
PredictionSet<T> SparseInstModel<T>::Forward(const Tensor<T>& image) const {
  if (image.rank() != 3 || image.dim(1) != config_.input_h ||
      image.dim(2) != config_.input_w) {
    throw std::invalid_argument("forward: image " + ShapeString(image.shape()) +
                                " does not match configured input size");
  }
  return Decoder(Encoder(Backbone(image)));
}

template Tensor<float> ApplyConv(const ConvLayer<float>&, const Tensor<float>&);
template Tensor<double> ApplyConv(const ConvLayer<double>&, const Tensor<double>&);
template Tensor<float> ApplyPointwise(const PointwiseLayer<float>&, const Tensor<float>&);
template Tensor<double> ApplyPointwise(const PointwiseLayer<double>&, const Tensor<double>&);

template class SparseInstModel<float>;
template class SparseInstModel<double>;

}  // namespace spin
