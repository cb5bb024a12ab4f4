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

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "spin/data.hpp"
#include "spin/rng.hpp"

namespace spin {

namespace {

constexpr double kMinScale = 0.08;  // diameter as a fraction of image size
constexpr double kMaxScale = 0.50;
constexpr double kNoiseAmplitude = 0.03;
constexpr double kMinColorContrast = 0.3;

struct DrawnShape {
  ShapeSpec spec;
  int category = 0;
  std::array<double, 3> color{};
};

std::array<double, 3> DrawColor(SplitMix64& rng, const std::array<double, 3>& avoid) {
  std::array<double, 3> c{};
  for (;;) {
    for (double& v : c) v = rng.Uniform();
    double diff = 0;
    for (int i = 0; i < 3; ++i) diff = std::max(diff, std::abs(c[i] - avoid[i]));
    if (diff >= kMinColorContrast) return c;
  }
}

DrawnShape DrawShape(SplitMix64& rng, int height, int width,
                     const std::array<double, 3>& background) {
  DrawnShape d;
  d.category = static_cast<int>(rng.UniformIndex(kNumShapeClasses));
  const int extent = std::min(height, width);
  const double r = 0.5 * extent * rng.Uniform(kMinScale, kMaxScale);
  ShapeSpec& s = d.spec;
  s.kind = static_cast<ShapeKind>(d.category);
  s.cx = rng.Uniform(r, width - r);
  s.cy = rng.Uniform(r, height - r);
  s.rotation = rng.Uniform(0.0, std::numbers::pi);
  const double aspect = rng.Uniform(0.5, 1.0);
  switch (s.kind) {
    case ShapeKind::kRectangle: {
      // Half-diagonal equals r so the rotated rectangle stays on canvas.
      const double theta = std::atan(aspect);
      s.a = r * std::cos(theta);
      s.b = r * std::sin(theta);
      break;
    }
    case ShapeKind::kEllipse:
      s.a = r;
      s.b = r * aspect;
      break;
    case ShapeKind::kTriangle:
      for (int v = 0; v < 3; ++v) {
        const double angle = s.rotation + 2.0 * std::numbers::pi * v / 3.0 +
                             rng.Uniform(-0.3, 0.3);
        s.vertices[v] = {s.cx + r * std::cos(angle), s.cy + r * std::sin(angle)};
      }
      break;
  }
  d.color = DrawColor(rng, background);
  return d;
}

}  // namespace

const std::array<std::string, kNumShapeClasses>& ShapeClassNames() {
  static const std::array<std::string, kNumShapeClasses> names{"rectangle", "ellipse",
                                                               "triangle"};
  return names;
}

std::vector<std::uint8_t> Rasterize(const ShapeSpec& shape, int height, int width) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(height) * width, 0);
  const double cs = std::cos(shape.rotation);
  const double sn = std::sin(shape.rotation);
  const auto& v = shape.vertices;
  const double orient = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) -
                        (v[1][1] - v[0][1]) * (v[2][0] - v[0][0]);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      bool inside = false;
      switch (shape.kind) {
        case ShapeKind::kRectangle: {
          const double u = (px - shape.cx) * cs + (py - shape.cy) * sn;
          const double w = -(px - shape.cx) * sn + (py - shape.cy) * cs;
          inside = std::abs(u) <= shape.a && std::abs(w) <= shape.b;
          break;
        }
        case ShapeKind::kEllipse: {
          if (shape.a <= 0 || shape.b <= 0) break;
          const double u = ((px - shape.cx) * cs + (py - shape.cy) * sn) / shape.a;
          const double w = (-(px - shape.cx) * sn + (py - shape.cy) * cs) / shape.b;
          inside = u * u + w * w <= 1.0;
          break;
        }
        case ShapeKind::kTriangle: {
          if (orient == 0) break;
          inside = true;
          for (int e = 0; e < 3 && inside; ++e) {
            const auto& p0 = v[e];
            const auto& p1 = v[(e + 1) % 3];
            const double cross = (p1[0] - p0[0]) * (py - p0[1]) - (p1[1] - p0[1]) * (px - p0[0]);
            inside = cross * orient >= 0;
          }
          break;
        }
      }
      mask[static_cast<std::size_t>(y) * width + x] = inside ? 1 : 0;
    }
  }
  return mask;
}

SyntheticScene GenerateScene(std::uint64_t seed, int height, int width, int max_objects) {
  if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0) {
    throw std::invalid_argument("scene size " + std::to_string(height) + "x" +
                                std::to_string(width) + " is not a multiple of 32");
  }
  if (max_objects < 1) throw std::invalid_argument("max_objects must be >= 1");
  SplitMix64 rng(seed);
  const std::size_t pixels = static_cast<std::size_t>(height) * width;
  std::array<double, 3> background{};
  for (double& c : background) c = rng.Uniform();
  const int wanted = 1 + static_cast<int>(rng.UniformIndex(max_objects));

  std::vector<DrawnShape> placed;
  std::vector<int> owner(pixels, -1);
  std::vector<int> visible;  // pixel count per placed instance
  for (int obj = 0; obj < wanted; ++obj) {
    for (int attempt = 0;; ++attempt) {
      // The first instance is never dropped so every scene is non-empty.
      if (attempt > kMaxRedraws && !placed.empty()) break;
      DrawnShape shape = DrawShape(rng, height, width, background);
      const std::vector<std::uint8_t> raster = Rasterize(shape.spec, height, width);
      int area = 0;
      std::vector<int> lost(placed.size(), 0);
      for (std::size_t p = 0; p < pixels; ++p) {
        if (!raster[p]) continue;
        ++area;
        if (owner[p] >= 0) ++lost[owner[p]];
      }
      bool ok = area >= kMinInstancePixels;
      for (std::size_t j = 0; j < placed.size() && ok; ++j) {
        ok = visible[j] - lost[j] >= kMinInstancePixels;
      }
      if (!ok) continue;
      const int id = static_cast<int>(placed.size());
      for (std::size_t j = 0; j < placed.size(); ++j) visible[j] -= lost[j];
      for (std::size_t p = 0; p < pixels; ++p) {
        if (raster[p]) owner[p] = id;
      }
      placed.push_back(shape);
      visible.push_back(area);
      break;
    }
  }

  SyntheticScene scene;
  scene.height = height;
  scene.width = width;
  scene.seed = seed;
  scene.image.resize(3 * pixels);
  for (std::size_t p = 0; p < pixels; ++p) {
    const auto& color = owner[p] >= 0 ? placed[owner[p]].color : background;
    for (int c = 0; c < 3; ++c) {
      double v = color[c] + rng.Uniform(-kNoiseAmplitude, kNoiseAmplitude);
      v = std::clamp(v, 0.0, 1.0);
      scene.image[c * pixels + p] = static_cast<float>(std::lround(v * 255.0)) / 255.0f;
    }
  }
  for (std::size_t j = 0; j < placed.size(); ++j) {
    GroundTruthInstance inst;
    inst.category = placed[j].category;
    inst.height = height;
    inst.width = width;
    inst.mask.assign(pixels, 0);
    for (std::size_t p = 0; p < pixels; ++p) {
      if (owner[p] == static_cast<int>(j)) inst.mask[p] = 1;
    }
    inst.pixel_count = visible[j];
    scene.instances.push_back(std::move(inst));
  }
  return scene;
}

Dataset GenerateDataset(std::uint64_t seed, int count, int height, int width, int max_objects) {
  if (count < 0) throw std::invalid_argument("count must be non-negative");
  Dataset ds;
  ds.info = {height, width, count, seed, max_objects};
  SplitMix64 seeds(seed);
  for (int i = 0; i < count; ++i) {
    ds.scenes.push_back(GenerateScene(seeds.Next(), height, width, max_objects));
  }
  return ds;
}

void HorizontalFlip(SyntheticScene& scene) {
  const int h = scene.height, w = scene.width;
  auto flip_plane = [w, h](auto* plane) {
    for (int y = 0; y < h; ++y) std::reverse(plane + y * w, plane + (y + 1) * w);
  };
  for (int c = 0; c < 3; ++c) flip_plane(scene.image.data() + static_cast<std::size_t>(c) * h * w);
  for (auto& inst : scene.instances) flip_plane(inst.mask.data());
}

std::vector<std::uint8_t> DownsampleMask(std::span<const std::uint8_t> mask, int height,
                                         int width, int factor) {
  if (height % factor != 0 || width % factor != 0) {
    throw std::invalid_argument("mask size not divisible by downsample factor");
  }
  const int oh = height / factor, ow = width / factor;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(oh) * ow, 0);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      int on = 0;
      for (int dy = 0; dy < factor; ++dy) {
        for (int dx = 0; dx < factor; ++dx) {
          on += mask[static_cast<std::size_t>(y * factor + dy) * width + x * factor + dx];
        }
      }
      out[static_cast<std::size_t>(y) * ow + x] = 2 * on >= factor * factor ? 1 : 0;
    }
  }
  return out;
}

}  // namespace spin
