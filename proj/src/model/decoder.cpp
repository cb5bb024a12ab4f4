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

// IAM-based decoder: instance branch, activation maps, feature aggregation,
// prediction heads, mask branch and mask head.

#include <stdexcept>

#include "spin/model.hpp"
#include "spin/ops.hpp"

namespace spin {

template <typename T>
Tensor<T> CoordinateFeatures(int h, int w) {
  if (h <= 0 || w <= 0) throw std::invalid_argument("coordinate features need positive sizes");
  Tensor<T> out({2, h, w});
  auto d = out.mutable_data();
  auto lin = [](int i, int n) {
    return n == 1 ? T(0) : static_cast<T>(-1.0 + 2.0 * i / (n - 1));
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      d[y * w + x] = lin(x, w);
      d[h * w + y * w + x] = lin(y, h);
    }
  }
  return out;
}

template <typename T>
ActivationMaps<T> MakeActivationMaps(const Tensor<T>& maps, int groups) {
  ActivationMaps<T> a;
  a.maps = maps;
  a.normalized = NormalizeRows(maps, static_cast<T>(kMapEps));
  a.groups = groups;
  return a;
}

template <typename T>
Tensor<T> AggregateInstanceFeatures(const ActivationMaps<T>& maps,
                                    const Tensor<T>& features) {
  if (features.rank() != 3) {
    throw std::invalid_argument("aggregate: features must be [D,H,W], got " +
                                ShapeString(features.shape()));
  }
  const int d = features.dim(0);
  const int p = features.dim(1) * features.dim(2);
  if (maps.normalized.dim(1) != p) {
    throw std::invalid_argument("aggregate: activation map dim 1 = " +
                                std::to_string(maps.normalized.dim(1)) +
                                " but feature map has " + std::to_string(p) +
                                " pixels");
  }
  // [G*N, P] x [P, D] -> [G*N, D]
  Tensor<T> z = MatMul(maps.normalized, Transpose(Reshape(features, {d, p})));
  if (maps.groups == 1) return z;
  const int n = z.dim(0) / maps.groups;
  std::vector<Tensor<T>> parts;
  for (int g = 0; g < maps.groups; ++g) parts.push_back(SliceRows(z, g * n, (g + 1) * n));
  return Concat(parts, 1);
}

template <typename T>
Tensor<T> SparseInstModel<T>::InstanceBranch(const Tensor<T>& x) const {
  Tensor<T> h = Concat<T>({x, CoordinateFeatures<T>(x.dim(1), x.dim(2))}, 0);
  for (const auto& conv : instance_convs_) h = Relu(ApplyConv(conv, h));
  return h;
}

template <typename T>
ActivationMaps<T> SparseInstModel<T>::Iam(const Tensor<T>& features) const {
  const int p = features.dim(1) * features.dim(2);
  Tensor<T> logits = ApplyConv(iam_, features);
  Tensor<T> maps = Reshape(Sigmoid(logits), {logits.dim(0), p});
  return MakeActivationMaps(maps, iam_.groups);
}

template <typename T>
Tensor<T> SparseInstModel<T>::InstanceFeatures(const ActivationMaps<T>& maps,
                                               const Tensor<T>& features) const {
  Tensor<T> z = AggregateInstanceFeatures(maps, features);
  if (maps.groups == 1) return z;
  return Linear(z, group_projection_.weight, group_projection_.bias);
}

template <typename T>
PredictionSet<T> SparseInstModel<T>::Heads(const Tensor<T>& z) const {
  PredictionSet<T> out;
  out.class_probs = Sigmoid(Linear(z, cls_head_.weight, cls_head_.bias));
  out.objectness = Sigmoid(Linear(z, obj_head_.weight, obj_head_.bias));
  out.kernels = Linear(z, kernel_head_.weight, kernel_head_.bias);
  return out;
}

template <typename T>
Tensor<T> SparseInstModel<T>::MaskFeatures(const Tensor<T>& x) const {
  Tensor<T> h = Concat<T>({x, CoordinateFeatures<T>(x.dim(1), x.dim(2))}, 0);
  for (const auto& conv : mask_convs_) h = Relu(ApplyConv(conv, h));
  return ApplyPointwise(mask_projection_, h);
}

template <typename T>
Tensor<T> SparseInstModel<T>::MaskHead(const Tensor<T>& kernels,
                                       const Tensor<T>& mask_features) const {
  const int dm = mask_features.dim(0);
  const int h = mask_features.dim(1), w = mask_features.dim(2);
  Tensor<T> logits = MatMul(kernels, Reshape(mask_features, {dm, h * w}));
  logits = Reshape(logits, {kernels.dim(0), h, w});
  return Sigmoid(BilinearUpsample(logits, 2));
}

template <typename T>
PredictionSet<T> SparseInstModel<T>::Decoder(const Tensor<T>& x) const {
  const Tensor<T> features = InstanceBranch(x);
  ActivationMaps<T> maps = Iam(features);
  PredictionSet<T> out = Heads(InstanceFeatures(maps, features));
  out.masks = MaskHead(out.kernels, MaskFeatures(x));
  out.activation = std::move(maps);
  return out;
}

template Tensor<float> CoordinateFeatures<float>(int, int);
template Tensor<double> CoordinateFeatures<double>(int, int);
template ActivationMaps<float> MakeActivationMaps(const Tensor<float>&, int);
template ActivationMaps<double> MakeActivationMaps(const Tensor<double>&, int);
template Tensor<float> AggregateInstanceFeatures(const ActivationMaps<float>&, const Tensor<float>&);
template Tensor<double> AggregateInstanceFeatures(const ActivationMaps<double>&, const Tensor<double>&);

#define SPIN_INSTANTIATE_DECODER(T)                                              \
  template Tensor<T> SparseInstModel<T>::InstanceBranch(const Tensor<T>&) const; \
  template ActivationMaps<T> SparseInstModel<T>::Iam(const Tensor<T>&) const;    \
  template Tensor<T> SparseInstModel<T>::InstanceFeatures(                       \
      const ActivationMaps<T>&, const Tensor<T>&) const;                         \
  template PredictionSet<T> SparseInstModel<T>::Heads(const Tensor<T>&) const;   \
  template Tensor<T> SparseInstModel<T>::MaskFeatures(const Tensor<T>&) const;   \
  template Tensor<T> SparseInstModel<T>::MaskHead(const Tensor<T>&,              \
                                                  const Tensor<T>&) const;       \
  template PredictionSet<T> SparseInstModel<T>::Decoder(const Tensor<T>&) const;

SPIN_INSTANTIATE_DECODER(float)
SPIN_INSTANTIATE_DECODER(double)

#undef SPIN_INSTANTIATE_DECODER

}  // namespace spin
