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
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "spin/data.hpp"

namespace spin {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string IndexName(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", i);
  return buf;
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

json ReadJson(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

// Skips whitespace and '#' comments in a PPM header, then reads an integer.
int ReadHeaderInt(std::istream& in, const fs::path& path) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v = -1;
  if (!(in >> v) || v <= 0) throw std::runtime_error(path.string() + ": malformed PPM header");
  return v;
}

}  // namespace

std::vector<std::uint32_t> EncodeRle(std::span<const std::uint8_t> mask) {
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;
  std::uint32_t length = 0;
  for (std::uint8_t v : mask) {
    const std::uint8_t bit = v ? 1 : 0;
    if (bit != current) {
      runs.push_back(length);
      current = bit;
      length = 0;
    }
    ++length;
  }
  runs.push_back(length);
  return runs;
}

std::vector<std::uint8_t> DecodeRle(std::span<const std::uint32_t> runs, std::size_t length) {
  const std::uint64_t total = std::accumulate(runs.begin(), runs.end(), std::uint64_t{0});
  if (total != length) {
    throw std::invalid_argument("RLE runs sum to " + std::to_string(total) + ", expected " +
                                std::to_string(length));
  }
  std::vector<std::uint8_t> mask;
  mask.reserve(length);
  std::uint8_t bit = 0;
  for (std::uint32_t r : runs) {
    mask.insert(mask.end(), r, bit);
    bit ^= 1;
  }
  return mask;
}

std::vector<std::uint8_t> PlanarToRgb(std::span<const float> planar, int height, int width) {
  const std::size_t pixels = static_cast<std::size_t>(height) * width;
  if (planar.size() != 3 * pixels) throw std::invalid_argument("planar image has wrong size");
  std::vector<std::uint8_t> rgb(3 * pixels);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (int c = 0; c < 3; ++c) {
      const float v = std::clamp(planar[c * pixels + p], 0.0f, 1.0f);
      rgb[3 * p + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  }
  return rgb;
}

std::vector<float> RgbToPlanar(std::span<const std::uint8_t> rgb, int height, int width) {
  const std::size_t pixels = static_cast<std::size_t>(height) * width;
  if (rgb.size() != 3 * pixels) throw std::invalid_argument("RGB buffer has wrong size");
  std::vector<float> planar(3 * pixels);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (int c = 0; c < 3; ++c) planar[c * pixels + p] = rgb[3 * p + c] / 255.0f;
  }
  return planar;
}

void WritePpm(const fs::path& path, int height, int width, std::span<const std::uint8_t> rgb) {
  if (rgb.size() != static_cast<std::size_t>(3) * height * width) {
    throw std::invalid_argument("WritePpm: buffer does not match " + std::to_string(width) +
                                "x" + std::to_string(height));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "P6\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<std::uint8_t> ReadPpm(const fs::path& path, int* height, int* width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw std::runtime_error(path.string() + ": not a binary PPM (P6)");
  const int w = ReadHeaderInt(in, path);
  const int h = ReadHeaderInt(in, path);
  const int maxval = ReadHeaderInt(in, path);
  if (maxval != 255) throw std::runtime_error(path.string() + ": only maxval 255 is supported");
  in.get();  // single whitespace before the raster
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(3) * w * h);
  in.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(rgb.size())) {
    throw std::runtime_error(path.string() + ": truncated PPM raster");
  }
  *height = h;
  *width = w;
  return rgb;
}

void WriteDataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "annotations");
  const auto& names = ShapeClassNames();
  json manifest = {{"height", dataset.info.height},
                   {"width", dataset.info.width},
                   {"count", dataset.scenes.size()},
                   {"seed", dataset.info.seed},
                   {"max_objects", dataset.info.max_objects},
                   {"classes", std::vector<std::string>(names.begin(), names.end())}};
  WriteText(dir / "manifest.json", manifest.dump(2) + "\n");
  for (std::size_t i = 0; i < dataset.scenes.size(); ++i) {
    const SyntheticScene& s = dataset.scenes[i];
    const std::string stem = IndexName(static_cast<int>(i));
    WritePpm(dir / "images" / (stem + ".ppm"), s.height, s.width,
             PlanarToRgb(s.image, s.height, s.width));
    json instances = json::array();
    for (const auto& inst : s.instances) {
      instances.push_back({{"category", inst.category},
                           {"pixel_count", inst.pixel_count},
                           {"rle", EncodeRle(inst.mask)}});
    }
    json ann = {{"image", "images/" + stem + ".ppm"},
                {"height", s.height},
                {"width", s.width},
                {"seed", s.seed},
                {"instances", instances}};
    WriteText(dir / "annotations" / (stem + ".json"), ann.dump() + "\n");
  }
}

Dataset ReadDataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  const json manifest = ReadJson(manifest_path);
  Dataset ds;
  try {
    ds.info.height = manifest.at("height").get<int>();
    ds.info.width = manifest.at("width").get<int>();
    ds.info.count = manifest.at("count").get<int>();
    ds.info.seed = manifest.at("seed").get<std::uint64_t>();
    ds.info.max_objects = manifest.at("max_objects").get<int>();
  } catch (const json::exception& e) {
    throw std::runtime_error(manifest_path.string() + ": " + e.what());
  }
  for (int i = 0; i < ds.info.count; ++i) {
    const std::string stem = IndexName(i);
    const fs::path ann_path = dir / "annotations" / (stem + ".json");
    const json ann = ReadJson(ann_path);
    SyntheticScene scene;
    int h = 0, w = 0;
    const std::vector<std::uint8_t> rgb = ReadPpm(dir / "images" / (stem + ".ppm"), &h, &w);
    if (h != ds.info.height || w != ds.info.width) {
      throw std::runtime_error(stem + ".ppm: size " + std::to_string(w) + "x" +
                               std::to_string(h) + " does not match the manifest");
    }
    scene.height = h;
    scene.width = w;
    scene.image = RgbToPlanar(rgb, h, w);
    const std::size_t pixels = static_cast<std::size_t>(h) * w;
    try {
      scene.seed = ann.at("seed").get<std::uint64_t>();
      const json& instances = ann.at("instances");
      for (std::size_t j = 0; j < instances.size(); ++j) {
        GroundTruthInstance inst;
        inst.category = instances[j].at("category").get<int>();
        if (inst.category < 0 || inst.category >= kNumShapeClasses) {
          throw std::runtime_error(ann_path.string() + ": instance " + std::to_string(j) +
                                   " has unknown category " + std::to_string(inst.category));
        }
        inst.height = h;
        inst.width = w;
        const auto runs = instances[j].at("rle").get<std::vector<std::uint32_t>>();
        try {
          inst.mask = DecodeRle(runs, pixels);
        } catch (const std::invalid_argument& e) {
          throw std::runtime_error(ann_path.string() + ": instance " + std::to_string(j) +
                                   ": " + e.what());
        }
        inst.pixel_count = static_cast<int>(
            std::accumulate(inst.mask.begin(), inst.mask.end(), std::size_t{0}));
        scene.instances.push_back(std::move(inst));
      }
    } catch (const json::exception& e) {
      throw std::runtime_error(ann_path.string() + ": " + e.what());
    }
    ds.scenes.push_back(std::move(scene));
  }
  return ds;
}

}  // namespace spin
