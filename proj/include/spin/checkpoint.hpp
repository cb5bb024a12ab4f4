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

// Binary checkpoint container. All integers are little-endian.
//
//   "SPIN"            4 bytes magic
//   version           u32 (= 1)
//   count             u32
//   count x {
//     name_len        u16
//     name            UTF-8, name_len bytes
//     dtype           u8 (0 = f32, 1 = f64)
//     rank            u8
//     dims            rank x u32
//     data            prod(dims) x dtype, little-endian
//   }
//   crc32             u32 over every preceding byte (zlib polynomial)

#ifndef SPIN_CHECKPOINT_HPP_
#define SPIN_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "spin/tensor.hpp"

namespace spin {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

struct NamedTensor {
  std::string name;
  DType dtype = DType::kF32;
  Shape shape;
  std::vector<float> f32;
  std::vector<double> f64;
};

class Checkpoint {
 public:
  void Add(const std::string& name, const Tensor<float>& t);
  void Add(const std::string& name, const Tensor<double>& t);
  void AddScalar(const std::string& name, double value);

  const std::vector<NamedTensor>& tensors() const { return tensors_; }
  /// nullptr if absent.
  const NamedTensor* Find(const std::string& name) const;
  /// Throws std::runtime_error naming the missing entry.
  double Scalar(const std::string& name) const;

 private:
  std::vector<NamedTensor> tensors_;
};

std::vector<std::uint8_t> SerializeCheckpoint(const Checkpoint& checkpoint);
/// Throws std::runtime_error on bad magic, version, length or CRC. Nothing is
/// returned unless the whole buffer validates.
Checkpoint ParseCheckpoint(std::span<const std::uint8_t> bytes);

void SaveCheckpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

std::uint32_t Crc32(std::span<const std::uint8_t> bytes);

/// 16 lowercase hex digits (CRC32 then Adler-32) over a file, or over every
/// regular file under a directory (sorted by relative path, path bytes
/// included). Each record is length-prefixed before hashing.
std::string FileChecksum(const std::filesystem::path& path);

}  // namespace spin

#endif  // SPIN_CHECKPOINT_HPP_
