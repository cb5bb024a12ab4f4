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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>
#include <vector>

#include "spin/gradcheck.hpp"
#include "spin/kernels.hpp"
#include "spin/model.hpp"
#include "spin/ops.hpp"
#include "test_support.hpp"

using namespace spin;
using spin::testing::MaxAbsDiff;
using spin::testing::NaiveConv;
using spin::testing::RandomTensor;
using spin::testing::ToVector;
using Vec = std::vector<double>;

namespace {

ModelConfig TinyConfig(int size = 64) {
  ModelConfig c;
  c.input_h = c.input_w = size;
  c.num_instances = 5;
  c.decoder_width = 8;
  c.decoder_depth = 2;
  c.mask_dim = 4;
  c.backbone_channels = {4, 6, 8};
  c.stem_channels = 4;
  return c;
}

Vec Param(const SparseInstModel<double>& m, const std::string& name) {
  return ToVector(m.parameters().Get(name));
}

Vec Relu(Vec v) {
  for (auto& x : v) x = std::max(0.0, x);
  return v;
}

Vec Sigmoid(Vec v) {
  for (auto& x : v) x = 1.0 / (1.0 + std::exp(-x));
  return v;
}

// w [o, c], b [o], x [c, p] -> [o, p]
Vec Pointwise(const Vec& w, const Vec& b, const Vec& x, int c, int p) {
  const int o = static_cast<int>(b.size());
  Vec y(static_cast<std::size_t>(o) * p);
  for (int i = 0; i < o; ++i) {
    for (int j = 0; j < p; ++j) {
      double acc = b[i];
      for (int k = 0; k < c; ++k) acc += w[i * c + k] * x[k * p + j];
      y[i * p + j] = acc;
    }
  }
  return y;
}

Vec Resize(const Vec& x, int c, int h, int w, int oh, int ow) {
  Vec y(static_cast<std::size_t>(c) * oh * ow);
  kernels::reference::bilinear_resize_forward(c, h, w, oh, ow, x.data(), y.data());
  return y;
}

// Adaptive average pooling with bins [floor(i*n/k), ceil((i+1)*n/k)).
Vec AvgPool(const Vec& x, int c, int h, int w, int k) {
  Vec y(static_cast<std::size_t>(c) * k * k);
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < k; ++i) {
      const int y0 = i * h / k, y1 = ((i + 1) * h + k - 1) / k;
      for (int j = 0; j < k; ++j) {
        const int x0 = j * w / k, x1 = ((j + 1) * w + k - 1) / k;
        double s = 0;
        for (int r = y0; r < y1; ++r) {
          for (int q = x0; q < x1; ++q) s += x[(ch * h + r) * w + q];
        }
        y[(ch * k + i) * k + j] = s / ((y1 - y0) * (x1 - x0));
      }
    }
  }
  return y;
}

Vec AddVec(Vec a, const Vec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

Vec WithCoords(Vec x, int h, int w) {
  for (int y = 0; y < h; ++y) {
    for (int q = 0; q < w; ++q) x.push_back(w == 1 ? 0.0 : -1.0 + 2.0 * q / (w - 1));
  }
  for (int y = 0; y < h; ++y) {
    for (int q = 0; q < w; ++q) x.push_back(h == 1 ? 0.0 : -1.0 + 2.0 * y / (h - 1));
  }
  return x;
}

Vec EncoderOracle(const SparseInstModel<double>& m, const FeaturePyramid<double>& pyr) {
  const auto& cfg = m.config();
  const int d = cfg.decoder_width;
  const int c5c = pyr.c5.dim(0), h5 = pyr.c5.dim(1), w5 = pyr.c5.dim(2);
  const Vec c5 = ToVector(pyr.c5);
  Vec cat = c5;
  int branch_c = 0;
  for (int i = 0; i < 4; ++i) {
    const std::string name = "encoder.ppm.branch" + std::to_string(i);
    const Vec b = Param(m, name + ".bias");
    branch_c = static_cast<int>(b.size());
    const int k = std::min({kPyramidPoolSizes[i], h5, w5});
    const Vec pooled = AvgPool(c5, c5c, h5, w5, k);
    const Vec proj = Relu(Pointwise(Param(m, name + ".weight"), b, pooled, c5c, k * k));
    const Vec up = Resize(proj, branch_c, k, k, h5, w5);
    cat.insert(cat.end(), up.begin(), up.end());
  }
  const Vec top = Relu(NaiveConv(cat, c5c + 4 * branch_c, h5, w5, Param(m, "encoder.ppm.out.weight"),
                                 Param(m, "encoder.ppm.out.bias"), d, 1, 1));
  const int h4 = pyr.c4.dim(1), w4 = pyr.c4.dim(2), h3 = pyr.c3.dim(1), w3 = pyr.c3.dim(2);
  const Vec p5 = Pointwise(Param(m, "encoder.lateral5.weight"), Param(m, "encoder.lateral5.bias"),
                           top, d, h5 * w5);
  const Vec p4 = AddVec(Pointwise(Param(m, "encoder.lateral4.weight"),
                                  Param(m, "encoder.lateral4.bias"), ToVector(pyr.c4),
                                  pyr.c4.dim(0), h4 * w4),
                        Resize(p5, d, h5, w5, h4, w4));
  const Vec p3 = AddVec(Pointwise(Param(m, "encoder.lateral3.weight"),
                                  Param(m, "encoder.lateral3.bias"), ToVector(pyr.c3),
                                  pyr.c3.dim(0), h3 * w3),
                        Resize(p4, d, h4, w4, h3, w3));
  const Vec fused = AddVec(AddVec(p3, Resize(p4, d, h4, w4, h3, w3)), Resize(p5, d, h5, w5, h3, w3));
  return Relu(NaiveConv(fused, d, h3, w3, Param(m, "encoder.out.weight"),
                        Param(m, "encoder.out.bias"), d, 1, 1));
}

struct DecoderOutputs {
  Vec probs, obj, kernels, masks, maps;
};

DecoderOutputs DecoderOracle(const SparseInstModel<double>& m, const Vec& x, int h, int w) {
  const auto& cfg = m.config();
  const int d = cfg.decoder_width, n = cfg.num_instances, dm = cfg.mask_dim, p = h * w;
  const int groups = cfg.iam_variant == IamVariant::kGroup4 ? 4 : 1;

  Vec feat = WithCoords(x, h, w);
  for (int i = 0; i < cfg.decoder_depth; ++i) {
    const std::string name = "decoder.inst.conv" + std::to_string(i);
    feat = Relu(NaiveConv(feat, i == 0 ? d + 2 : d, h, w, Param(m, name + ".weight"),
                          Param(m, name + ".bias"), d, 1, 1));
  }
  DecoderOutputs out;
  out.maps = Sigmoid(NaiveConv(feat, d, h, w, Param(m, "decoder.iam.weight"),
                               Param(m, "decoder.iam.bias"), groups * n, 1, groups));
  Vec norm = out.maps;
  for (int r = 0; r < groups * n; ++r) {
    const double s = std::accumulate(norm.begin() + r * p, norm.begin() + (r + 1) * p, 0.0);
    for (int j = 0; j < p; ++j) norm[r * p + j] /= s + kMapEps;
  }
  // z[n, g*D + c] = sum_p norm[g*N + n, p] * feat[c, p]
  const int zw = groups * d;
  Vec z(static_cast<std::size_t>(n) * zw, 0.0);
  for (int g = 0; g < groups; ++g) {
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < d; ++c) {
        double acc = 0;
        for (int j = 0; j < p; ++j) acc += norm[(g * n + i) * p + j] * feat[c * p + j];
        z[i * zw + g * d + c] = acc;
      }
    }
  }
  auto linear = [&](const std::string& name, const Vec& in, int cols) {
    const Vec wt = Param(m, name + ".weight"), b = Param(m, name + ".bias");
    const int o = static_cast<int>(b.size());
    Vec y(static_cast<std::size_t>(n) * o);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < o; ++k) {
        double acc = b[k];
        for (int c = 0; c < cols; ++c) acc += in[i * cols + c] * wt[k * cols + c];
        y[i * o + k] = acc;
      }
    }
    return y;
  };
  if (groups == 4) z = linear("decoder.group_proj", z, zw);
  out.probs = Sigmoid(linear("decoder.cls", z, d));
  out.obj = Sigmoid(linear("decoder.obj", z, d));
  out.kernels = linear("decoder.kernel", z, d);

  Vec mf = WithCoords(x, h, w);
  for (int i = 0; i < cfg.decoder_depth; ++i) {
    const std::string name = "decoder.mask.conv" + std::to_string(i);
    mf = Relu(NaiveConv(mf, i == 0 ? d + 2 : d, h, w, Param(m, name + ".weight"),
                        Param(m, name + ".bias"), d, 1, 1));
  }
  mf = Pointwise(Param(m, "decoder.mask.proj.weight"), Param(m, "decoder.mask.proj.bias"), mf, d, p);
  Vec logits(static_cast<std::size_t>(n) * p, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) {
      for (int k = 0; k < dm; ++k) logits[i * p + j] += out.kernels[i * dm + k] * mf[k * p + j];
    }
  }
  out.masks = Sigmoid(Resize(logits, n, h, w, 2 * h, 2 * w));
  return out;
}

Tensor<double> RandomImage(std::uint64_t seed, int size) {
  SplitMix64 rng(seed);
  return RandomTensor<double>(rng, {3, size, size}, 0.0, 1.0);
}

// Reorders slot i to perm[i] by permuting the IAM output channels of every group.
void PermuteIam(SparseInstModel<double>& m, const std::vector<int>& perm) {
  const int n = m.config().num_instances;
  auto w = m.parameters().Get("decoder.iam.weight");
  auto b = m.parameters().Get("decoder.iam.bias");
  const Vec w0 = ToVector(w), b0 = ToVector(b);
  const std::size_t row = w0.size() / b0.size();
  const int groups = static_cast<int>(b0.size()) / n;
  for (int g = 0; g < groups; ++g) {
    for (int i = 0; i < n; ++i) {
      const int dst = g * n + perm[i], src = g * n + i;
      b.mutable_data()[dst] = b0[src];
      for (std::size_t k = 0; k < row; ++k) w.mutable_data()[dst * row + k] = w0[src * row + k];
    }
  }
}

void CheckRowsPermuted(const Tensor<double>& a, const Tensor<double>& b, const std::vector<int>& perm) {
  const std::size_t row = a.numel() / perm.size();
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t k = 0; k < row; ++k) {
      CHECK(b[perm[i] * row + k] == doctest::Approx(a[i * row + k]).epsilon(1e-12));
    }
  }
}

}  // namespace

TEST_CASE("desk configuration produces the documented output shapes") {
  for (IamVariant v : {IamVariant::kVanilla, IamVariant::kGroup4}) {
    ModelConfig cfg = ModelConfig::Desk();
    cfg.iam_variant = v;
    const SparseInstModel<float> model(cfg, 1);
    SplitMix64 rng(2);
    const auto image = RandomTensor<float>(rng, {3, 128, 128}, 0.0, 1.0);
    const auto pyr = model.Backbone(image);
    CHECK(pyr.c3.shape() == Shape{32, 16, 16});
    CHECK(pyr.c4.shape() == Shape{64, 8, 8});
    CHECK(pyr.c5.shape() == Shape{128, 4, 4});
    const auto x = model.Encoder(pyr);
    CHECK(x.shape() == Shape{64, 16, 16});
    const auto preds = model.Decoder(x);
    CHECK(preds.class_probs.shape() == Shape{16, 3});
    CHECK(preds.objectness.shape() == Shape{16, 1});
    CHECK(preds.kernels.shape() == Shape{16, 32});
    CHECK(preds.masks.shape() == Shape{16, 32, 32});
    const int g = v == IamVariant::kGroup4 ? 4 : 1;
    CHECK(preds.activation.maps.shape() == Shape{g * 16, 256});
    for (float p : preds.masks.data()) {
      CHECK(p > 0.0f);
      CHECK(p < 1.0f);
    }
  }
}

TEST_CASE("encoder matches a hand-composed pyramid pooling and top-down fusion") {
  const SparseInstModel<double> model(TinyConfig(), 3);
  const auto pyr = model.Backbone(RandomImage(4, 64));
  CHECK(MaxAbsDiff<double>(model.Encoder(pyr).data(), EncoderOracle(model, pyr)) < 1e-10);
}

TEST_CASE("decoder matches an element-wise oracle for both IAM variants") {
  for (IamVariant v : {IamVariant::kVanilla, IamVariant::kGroup4}) {
    ModelConfig cfg = TinyConfig();
    cfg.iam_variant = v;
    const SparseInstModel<double> model(cfg, 5);
    SplitMix64 rng(6);
    const auto x = RandomTensor<double>(rng, {8, 8, 8}, 0.0, 1.0);
    const auto preds = model.Decoder(x);
    const auto want = DecoderOracle(model, ToVector(x), 8, 8);
    CHECK(MaxAbsDiff<double>(preds.activation.maps.data(), want.maps) < 1e-12);
    CHECK(MaxAbsDiff<double>(preds.class_probs.data(), want.probs) < 1e-12);
    CHECK(MaxAbsDiff<double>(preds.objectness.data(), want.obj) < 1e-12);
    CHECK(MaxAbsDiff<double>(preds.kernels.data(), want.kernels) < 1e-12);
    CHECK(MaxAbsDiff<double>(preds.masks.data(), want.masks) < 1e-12);
  }
}

TEST_CASE("permuting IAM channels permutes every per-slot output") {
  for (IamVariant v : {IamVariant::kVanilla, IamVariant::kGroup4}) {
    ModelConfig cfg = TinyConfig();
    cfg.iam_variant = v;
    SparseInstModel<double> model(cfg, 7);
    const auto image = RandomImage(8, 64);
    const auto before = model.Forward(image);
    const std::vector<int> perm{3, 0, 4, 1, 2};
    PermuteIam(model, perm);
    const auto after = model.Forward(image);
    CheckRowsPermuted(before.class_probs, after.class_probs, perm);
    CheckRowsPermuted(before.objectness, after.objectness, perm);
    CheckRowsPermuted(before.kernels, after.kernels, perm);
    CheckRowsPermuted(before.masks, after.masks, perm);
  }
}

TEST_CASE("coordinate features span [-1, 1] along x then y") {
  const auto c = CoordinateFeatures<double>(3, 5);
  CHECK(c.shape() == Shape{2, 3, 5});
  CHECK(c[0] == -1.0);
  CHECK(c[4] == 1.0);
  CHECK(c[2] == 0.0);
  CHECK(c[15] == -1.0);
  CHECK(c[15 + 14] == 1.0);
  CHECK(c[15 + 5] == 0.0);
}

TEST_CASE("initialisation is seeded and follows the documented scheme") {
  const SparseInstModel<double> a(TinyConfig(), 11), b(TinyConfig(), 11), c(TinyConfig(), 12);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto& [name, ta] = a.parameters().entries()[i];
    CHECK(MaxAbsDiff<double>(ta.data(), b.parameters().entries()[i].second.data()) == 0.0);
    if (MaxAbsDiff<double>(ta.data(), c.parameters().entries()[i].second.data()) > 0) {
      any_diff = true;
    }
    if (name.ends_with(".bias") && name != "decoder.cls.bias") {
      CHECK(MaxAbsDiff<double>(ta.data(), Vec(ta.numel(), 0.0)) == 0.0);
    }
  }
  CHECK(any_diff);
  // Class bias starts at the 0.01 prior.
  for (double v : a.parameters().Get("decoder.cls.bias").data()) {
    CHECK(v == doctest::Approx(-std::log(99.0)).epsilon(1e-15));
  }
  CHECK(1.0 / (1.0 + std::exp(-PriorBias())) == doctest::Approx(0.01).epsilon(1e-12));

  // IAM weights are small Gaussians; the others are bounded uniforms.
  ModelConfig big = ModelConfig::Desk();
  const SparseInstModel<double> desk(big, 1);
  const auto iam = desk.parameters().Get("decoder.iam.weight");
  double sq = 0;
  for (double v : iam.data()) sq += v * v;
  CHECK(std::sqrt(sq / iam.numel()) == doctest::Approx(0.01).epsilon(0.05));
  const auto stem = desk.parameters().Get("backbone.stem.weight");
  const double bound = std::sqrt(6.0 / 27.0);
  double lo = 0, hi = 0;
  for (double v : stem.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= -bound);
  CHECK(hi <= bound);
  CHECK(hi > 0.8 * bound);
}

TEST_CASE("forward is deterministic and float32 tracks float64") {
  const SparseInstModel<double> m64(TinyConfig(), 13);
  const SparseInstModel<float> m32(TinyConfig(), 13);
  const auto img64 = RandomImage(14, 64);
  const Tensor<float> img32(img64.shape(), std::vector<float>(img64.data().begin(), img64.data().end()));
  const auto a = m64.Forward(img64);
  const auto b = m64.Forward(img64);
  CHECK(MaxAbsDiff<double>(a.masks.data(), b.masks.data()) == 0.0);
  const auto c = m32.Forward(img32);
  for (std::size_t i = 0; i < a.masks.numel(); ++i) CHECK(std::abs(a.masks[i] - c.masks[i]) < 1e-4);
  for (std::size_t i = 0; i < a.class_probs.numel(); ++i) {
    CHECK(std::abs(a.class_probs[i] - c.class_probs[i]) < 1e-4);
  }
}

TEST_CASE("ablation switches change the encoder and still run") {
  ModelConfig no_ppm = TinyConfig();
  no_ppm.with_ppm = false;
  ModelConfig no_fusion = TinyConfig();
  no_fusion.with_fusion = false;
  const SparseInstModel<double> a(no_ppm, 1), b(no_fusion, 1);
  const auto image = RandomImage(2, 64);
  CHECK(a.Forward(image).masks.shape() == Shape{5, 16, 16});
  CHECK(b.Forward(image).masks.shape() == Shape{5, 16, 16});
  CHECK_THROWS_AS(a.PyramidPooling(a.Backbone(image).c5), std::logic_error);
  CHECK_THROWS(a.parameters().Get("encoder.ppm.out.weight"));
}

TEST_CASE("invalid configurations and inputs are rejected") {
  ModelConfig c = TinyConfig();
  c.input_h = 100;
  CHECK_THROWS_AS(SparseInstModel<double>(c, 1), std::invalid_argument);
  c = TinyConfig();
  c.num_instances = 0;
  CHECK_THROWS_AS(SparseInstModel<double>(c, 1), std::invalid_argument);
  const SparseInstModel<double> m(TinyConfig(), 1);
  CHECK_THROWS_AS(m.Forward(RandomImage(1, 32)), std::invalid_argument);
  CHECK_THROWS_AS(m.Forward(Tensor<double>({1, 3, 64, 64})), std::invalid_argument);
  CHECK(ParseIamVariant(IamVariantName(IamVariant::kGroup4)) == IamVariant::kGroup4);
  CHECK_THROWS_AS(ParseIamVariant("group3"), std::invalid_argument);
}

TEST_CASE("gradients through the whole network match finite differences") {
  for (IamVariant v : {IamVariant::kVanilla, IamVariant::kGroup4}) {
    ModelConfig cfg = TinyConfig(32);
    cfg.iam_variant = v;
    SparseInstModel<double> model(cfg, 21);
    const auto image = RandomImage(22, 32);
    SplitMix64 rng(23);
    const auto wm = RandomTensor<double>(rng, {5, 8, 8});
    const auto wc = RandomTensor<double>(rng, {5, 3});
    const auto wo = RandomTensor<double>(rng, {5, 1});
    auto f = [&] {
      const auto p = model.Forward(image);
      return Add(Add(Sum(Mul(p.masks, wm)), Sum(Mul(p.class_probs, wc))), Sum(Mul(p.objectness, wo)));
    };
    GradCheckOptions opts;
    opts.max_elements_per_input = 4;
    opts.sample_seed = 24;
    CHECK(FiniteDifferenceCheck(f, model.parameters().tensors(), opts) < 1e-4);
  }
}
