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

// Synthetic shapes dataset: rectangles, ellipses and triangles with modal
// (visible-pixel) instance masks, plus the on-disk format:
//
//   <dir>/manifest.json            size, count, seed, class names
//   <dir>/images/NNNNNN.ppm        binary P6, maxval 255
//   <dir>/annotations/NNNNNN.json  categories + run-length encoded masks
//
// RLE is row-major, alternating run lengths of 0s and 1s, starting with a
// (possibly empty) run of 0s.

#ifndef SPIN_DATA_HPP_
#define SPIN_DATA_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace spin {

inline constexpr int kNumShapeClasses = 3;
inline constexpr int kMinInstancePixels = 16;
inline constexpr int kMaxRedraws = 10;

const std::array<std::string, kNumShapeClasses>& ShapeClassNames();

enum class ShapeKind { kRectangle = 0, kEllipse = 1, kTriangle = 2 };

struct ShapeSpec {
  ShapeKind kind = ShapeKind::kRectangle;
  double cx = 0;
  double cy = 0;
  // Rectangle: half extents along the rotated axes. Ellipse: radii.
  double a = 0;
  double b = 0;
  double rotation = 0;  // radians
  std::array<std::array<double, 2>, 3> vertices{};  // triangle only, (x, y)
};

struct GroundTruthInstance {
  int category = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> mask;  // H*W, 0 or 1
  int pixel_count = 0;
};

struct SyntheticScene {
  int height = 0;
  int width = 0;
  std::vector<float> image;  // [3, H, W], values k/255
  std::vector<GroundTruthInstance> instances;
  std::uint64_t seed = 0;
};

struct DatasetInfo {
  int height = 0;
  int width = 0;
  int count = 0;
  std::uint64_t seed = 0;
  int max_objects = 0;
};

struct Dataset {
  DatasetInfo info;
  std::vector<SyntheticScene> scenes;
};

/// A pixel is set iff its centre (x + 0.5, y + 0.5) satisfies the shape's
/// inequality.
std::vector<std::uint8_t> Rasterize(const ShapeSpec& shape, int height, int width);

/// Throws std::invalid_argument unless both sizes are multiples of 32 and
/// max_objects >= 1.
SyntheticScene GenerateScene(std::uint64_t seed, int height, int width, int max_objects);

/// Scene i is generated from the i-th draw of SplitMix64(seed).
Dataset GenerateDataset(std::uint64_t seed, int count, int height, int width, int max_objects);

std::vector<std::uint32_t> EncodeRle(std::span<const std::uint8_t> mask);
/// Throws std::invalid_argument if runs do not sum to `length`.
std::vector<std::uint8_t> DecodeRle(std::span<const std::uint32_t> runs, std::size_t length);

void HorizontalFlip(SyntheticScene& scene);

void WriteDataset(const Dataset& dataset, const std::filesystem::path& dir);
/// Throws std::runtime_error naming the file (and instance index for bad RLE).
Dataset ReadDataset(const std::filesystem::path& dir);

// Binary PPM (P6, maxval 255) helpers. Pixels are interleaved RGB bytes.
void WritePpm(const std::filesystem::path& path, int height, int width,
              std::span<const std::uint8_t> rgb);
std::vector<std::uint8_t> ReadPpm(const std::filesystem::path& path, int* height, int* width);

/// [3,H,W] floats in [0,1] <-> interleaved RGB bytes.
std::vector<std::uint8_t> PlanarToRgb(std::span<const float> planar, int height, int width);
std::vector<float> RgbToPlanar(std::span<const std::uint8_t> rgb, int height, int width);

/// Mean over each factor x factor block, then >= 0.5.
std::vector<std::uint8_t> DownsampleMask(std::span<const std::uint8_t> mask, int height,
                                         int width, int factor);

}  // namespace spin

#endif  // SPIN_DATA_HPP_
