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

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "spin/checkpoint.hpp"
#include "spin/train.hpp"
#include "test_support.hpp"

using namespace spin;
using spin::testing::RandomTensor;
using spin::testing::TempDir;
using Bytes = std::vector<std::uint8_t>;

namespace {

// Bitwise reflected CRC-32, polynomial 0xEDB88320.
std::uint32_t CrcOracle(const Bytes& data, std::size_t n) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) {
    crc ^= data[i];
    for (int b = 0; b < 8; ++b) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return ~crc;
}

void PutU32(Bytes& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Reseal(Bytes& b) {
  b.resize(b.size() - 4);
  PutU32(b, CrcOracle(b, b.size()));
}

std::string ParseError(const Bytes& b) {
  try {
    ParseCheckpoint(b);
  } catch (const std::runtime_error& e) {
    return e.what();
  }
  return "";
}

ModelConfig SmallConfig() {
  ModelConfig c;
  c.input_h = c.input_w = 32;
  c.num_instances = 4;
  c.decoder_width = 8;
  c.decoder_depth = 1;
  c.mask_dim = 4;
  c.backbone_channels = {4, 4, 8};
  c.stem_channels = 4;
  c.iam_variant = IamVariant::kGroup4;
  return c;
}

bool BitEqual(const NamedTensor& a, const NamedTensor& b) {
  return a.name == b.name && a.dtype == b.dtype && a.shape == b.shape &&
         a.f32.size() == b.f32.size() && a.f64.size() == b.f64.size() &&
         std::memcmp(a.f32.data(), b.f32.data(), a.f32.size() * sizeof(float)) == 0 &&
         std::memcmp(a.f64.data(), b.f64.data(), a.f64.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("crc32 matches the bitwise oracle and the standard check value") {
  const std::string check = "123456789";
  const Bytes b(check.begin(), check.end());
  CHECK(Crc32(b) == 0xCBF43926u);
  SplitMix64 rng(1);
  Bytes r(1000);
  for (auto& v : r) v = static_cast<std::uint8_t>(rng.Next());
  CHECK(Crc32(r) == CrcOracle(r, r.size()));
}

TEST_CASE("empty checkpoint is a 12-byte header plus crc") {
  const Bytes b = SerializeCheckpoint(Checkpoint{});
  Bytes want{'S', 'P', 'I', 'N'};
  PutU32(want, 1);
  PutU32(want, 0);
  PutU32(want, CrcOracle(want, want.size()));
  CHECK(b.size() == 16);
  CHECK(b == want);
  CHECK(ParseCheckpoint(b).tensors().empty());
}

TEST_CASE("tensor records follow the documented byte layout") {
  Checkpoint c;
  c.Add("ab", Tensor<float>({2}, std::vector<float>{1.0f, -2.0f}));
  c.AddScalar("s", 0.5);
  Bytes want{'S', 'P', 'I', 'N'};
  PutU32(want, 1);
  PutU32(want, 2);
  want.insert(want.end(), {2, 0, 'a', 'b', 0, 1});
  PutU32(want, 2);
  PutU32(want, 0x3F800000u);  // 1.0f
  PutU32(want, 0xC0000000u);  // -2.0f
  want.insert(want.end(), {1, 0, 's', 1, 1});
  PutU32(want, 1);
  PutU32(want, 0x00000000u);  // 0.5 as f64, low word
  PutU32(want, 0x3FE00000u);  // high word
  PutU32(want, CrcOracle(want, want.size()));
  CHECK(SerializeCheckpoint(c) == want);
}

TEST_CASE("model checkpoints round-trip bit-exactly, optimizer state included") {
  SparseInstModel<float> model(SmallConfig(), 3);
  AdamW<float> opt(model.parameters(), {});
  SplitMix64 rng(4);
  for (auto& [name, t] : model.parameters().entries()) {
    Tensor<float> p = t;
    for (auto& g : p.mutable_grad()) g = static_cast<float>(rng.Uniform(-1, 1));
  }
  opt.Step(1e-3);
  opt.Step(1e-3);
  const Checkpoint c = MakeCheckpoint(model, &opt, 2);
  const Checkpoint back = ParseCheckpoint(SerializeCheckpoint(c));
  REQUIRE(back.tensors().size() == c.tensors().size());
  for (std::size_t i = 0; i < c.tensors().size(); ++i) CHECK(BitEqual(c.tensors()[i], back.tensors()[i]));
  CHECK(back.Scalar("adamw.step") == 2.0);
  CHECK(back.Scalar("train.step") == 2.0);
  CHECK(back.Find("adamw.m/decoder.cls.weight") != nullptr);
  CHECK(back.Find("adamw.v/backbone.stem.weight") != nullptr);

  const auto loaded = LoadModel(back);
  CHECK(loaded->config().iam_variant == IamVariant::kGroup4);
  CHECK(loaded->config().backbone_channels == SmallConfig().backbone_channels);
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const auto& a = model.parameters().entries()[i].second;
    const auto& b = loaded->parameters().entries()[i].second;
    CHECK(std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0);
  }
}

TEST_CASE("files round-trip and checksums are stable") {
  const auto dir = TempDir("checkpoint_files");
  const SparseInstModel<float> model(SmallConfig(), 5);
  SaveCheckpoint(MakeCheckpoint(model, nullptr, 0), dir / "m.spin");
  CHECK_FALSE(std::filesystem::exists(dir / "m.spin.tmp"));
  const Checkpoint c = LoadCheckpoint(dir / "m.spin");
  CHECK(c.Find("adamw.step") == nullptr);
  SaveCheckpoint(c, dir / "n.spin");
  CHECK(FileChecksum(dir / "m.spin") == FileChecksum(dir / "n.spin"));
  CHECK(FileChecksum(dir / "m.spin").size() == 16);
  // Different checkpoints must not collide even though each ends in its own CRC.
  SaveCheckpoint(MakeCheckpoint(SparseInstModel<float>(SmallConfig(), 6), nullptr, 0), dir / "o.spin");
  CHECK(FileChecksum(dir / "o.spin") != FileChecksum(dir / "m.spin"));

  const auto sub = TempDir("checkpoint_tree");
  std::ofstream(sub / "a.txt") << "one";
  std::filesystem::create_directories(sub / "b");
  std::ofstream(sub / "b" / "c.txt") << "two";
  const std::string before = FileChecksum(sub);
  CHECK(FileChecksum(sub) == before);
  std::ofstream(sub / "b" / "c.txt") << "tw0";
  CHECK(FileChecksum(sub) != before);

  try {
    LoadCheckpoint(dir / "missing.spin");
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("missing.spin") != std::string::npos);
  }
}

TEST_CASE("corruption is rejected with a specific diagnostic") {
  Checkpoint c;
  SplitMix64 rng(6);
  c.Add("w", RandomTensor<float>(rng, {3, 4}));
  c.Add("d", RandomTensor<double>(rng, {5}));
  const Bytes good = SerializeCheckpoint(c);

  for (std::size_t n = 0; n < good.size(); ++n) {
    CHECK_THROWS_AS(ParseCheckpoint(std::span(good.data(), n)), std::runtime_error);
  }
  for (std::size_t i = 0; i < good.size(); ++i) {
    Bytes bad = good;
    bad[i] ^= 0x10;
    CHECK_THROWS_AS(ParseCheckpoint(bad), std::runtime_error);
    const std::string expect = i < 4 ? "magic" : "CRC";
    CHECK(ParseError(bad).find(expect) != std::string::npos);
  }

  Bytes magic = good;
  magic[0] = 'X';
  Reseal(magic);
  CHECK(ParseError(magic).find("magic") != std::string::npos);

  Bytes version = good;
  version[4] = 2;
  Reseal(version);
  CHECK(ParseError(version).find("version") != std::string::npos);

  Bytes trailing = good;
  trailing.insert(trailing.end() - 4, 0);
  Reseal(trailing);
  CHECK_FALSE(ParseError(trailing).empty());

  Bytes dtype = good;
  dtype[12 + 2 + 1] = 7;
  Reseal(dtype);
  CHECK_FALSE(ParseError(dtype).empty());
}

TEST_CASE("loading parameters checks names and shapes") {
  SparseInstModel<float> model(SmallConfig(), 7);
  Checkpoint c = MakeCheckpoint(model, nullptr, 0);

  Checkpoint missing;
  for (const auto& t : c.tensors()) {
    if (t.name == "decoder.obj.bias") continue;
    if (t.dtype == DType::kF32) {
      missing.Add(t.name, Tensor<float>(t.shape, t.f32));
    } else {
      missing.Add(t.name, Tensor<double>(t.shape, t.f64));
    }
  }
  CHECK_THROWS_WITH_AS(LoadParameters(missing, model), doctest::Contains("decoder.obj.bias"),
                       std::runtime_error);

  ModelConfig wider = SmallConfig();
  wider.mask_dim = 8;
  SparseInstModel<float> other(wider, 7);
  CHECK_THROWS_AS(LoadParameters(c, other), std::runtime_error);

  Checkpoint extra = c;
  extra.Add("decoder.unknown", Tensor<float>({1}));
  CHECK_THROWS_AS(LoadParameters(extra, model), std::runtime_error);
}
