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

#include "spin/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <stdexcept>

namespace spin {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

class Writer {
 public:
  template <typename U>
  void Put(U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(U));
  }
  void PutRaw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename U>
  U Get(const char* what) {
    U v;
    GetRaw(&v, sizeof(U), what);
    return v;
  }
  void GetRaw(void* out, std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
    }
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::string Hex(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08x", v);
  return buf;
}

std::vector<std::uint8_t> ReadFileBytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::uint32_t Crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const std::size_t chunk =
        std::min<std::size_t>(bytes.size() - done, std::numeric_limits<uInt>::max());
    crc = crc32(crc, bytes.data() + done, static_cast<uInt>(chunk));
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void Checkpoint::Add(const std::string& name, const Tensor<float>& t) {
  NamedTensor n{name, DType::kF32, t.shape(), {t.data().begin(), t.data().end()}, {}};
  tensors_.push_back(std::move(n));
}

void Checkpoint::Add(const std::string& name, const Tensor<double>& t) {
  NamedTensor n{name, DType::kF64, t.shape(), {}, {t.data().begin(), t.data().end()}};
  tensors_.push_back(std::move(n));
}

void Checkpoint::AddScalar(const std::string& name, double value) {
  tensors_.push_back({name, DType::kF64, {1}, {}, {value}});
}

const NamedTensor* Checkpoint::Find(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

double Checkpoint::Scalar(const std::string& name) const {
  const NamedTensor* t = Find(name);
  if (t == nullptr) throw std::runtime_error("checkpoint has no entry '" + name + "'");
  if (ShapeNumel(t->shape) != 1) {
    throw std::runtime_error("checkpoint entry '" + name + "' is not a scalar");
  }
  return t->dtype == DType::kF64 ? t->f64[0] : t->f32[0];
}

std::vector<std::uint8_t> SerializeCheckpoint(const Checkpoint& checkpoint) {
  Writer w;
  w.PutRaw("SPIN", 4);
  w.Put<std::uint32_t>(kCheckpointVersion);
  w.Put<std::uint32_t>(static_cast<std::uint32_t>(checkpoint.tensors().size()));
  for (const auto& t : checkpoint.tensors()) {
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw std::invalid_argument("checkpoint tensor name too long: " + t.name);
    }
    if (t.shape.size() > std::numeric_limits<std::uint8_t>::max()) {
      throw std::invalid_argument("checkpoint tensor rank too large: " + t.name);
    }
    w.Put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
    w.PutRaw(t.name.data(), t.name.size());
    w.Put<std::uint8_t>(static_cast<std::uint8_t>(t.dtype));
    w.Put<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
    for (int d : t.shape) w.Put<std::uint32_t>(static_cast<std::uint32_t>(d));
    const std::size_t n = ShapeNumel(t.shape);
    if (t.dtype == DType::kF32) {
      if (t.f32.size() != n) throw std::invalid_argument("checkpoint tensor size mismatch: " + t.name);
      w.PutRaw(t.f32.data(), n * sizeof(float));
    } else {
      if (t.f64.size() != n) throw std::invalid_argument("checkpoint tensor size mismatch: " + t.name);
      w.PutRaw(t.f64.data(), n * sizeof(double));
    }
  }
  const std::uint32_t crc = Crc32(w.bytes());
  w.Put<std::uint32_t>(crc);
  return std::move(w.bytes());
}

Checkpoint ParseCheckpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) {
    throw std::runtime_error("checkpoint too short (" + std::to_string(bytes.size()) +
                             " bytes)");
  }
  if (std::memcmp(bytes.data(), "SPIN", 4) != 0) {
    throw std::runtime_error("checkpoint has bad magic (expected \"SPIN\")");
  }
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  const std::uint32_t actual = Crc32(body);
  if (stored != actual) {
    throw std::runtime_error("checkpoint CRC mismatch: stored " + Hex(stored) + ", computed " +
                             Hex(actual));
  }
  Reader r(body);
  char magic[4];
  r.GetRaw(magic, 4, "magic");
  const auto version = r.Get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.Get<std::uint32_t>("tensor count");
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.Get<std::uint16_t>("name length");
    std::string name(len, '\0');
    r.GetRaw(name.data(), len, "name");
    const auto dtype = r.Get<std::uint8_t>("dtype");
    if (dtype > 1) {
      throw std::runtime_error("checkpoint tensor '" + name + "' has unknown dtype " +
                               std::to_string(dtype));
    }
    const auto rank = r.Get<std::uint8_t>("rank");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      const auto dim = r.Get<std::uint32_t>("dims");
      if (dim == 0 || dim > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) {
        throw std::runtime_error("checkpoint tensor '" + name + "' has invalid extent");
      }
      d = static_cast<int>(dim);
      n *= dim;
    }
    const std::size_t elem = dtype == 0 ? sizeof(float) : sizeof(double);
    if (n > r.remaining() / elem) {
      throw std::runtime_error("checkpoint truncated in tensor '" + name + "'");
    }
    if (dtype == 0) {
      std::vector<float> data(n);
      r.GetRaw(data.data(), n * elem, "data");
      ckpt.Add(name, Tensor<float>(shape, std::move(data)));
    } else {
      std::vector<double> data(n);
      r.GetRaw(data.data(), n * elem, "data");
      ckpt.Add(name, Tensor<double>(shape, std::move(data)));
    }
  }
  if (r.remaining() != 0) {
    throw std::runtime_error("checkpoint has " + std::to_string(r.remaining()) +
                             " trailing bytes before the CRC");
  }
  return ckpt;
}

void SaveCheckpoint(const Checkpoint& checkpoint, const fs::path& path) {
  const std::vector<std::uint8_t> bytes = SerializeCheckpoint(checkpoint);
  // Write to a sibling temp file first so a crash never leaves a torn file.
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint LoadCheckpoint(const fs::path& path) {
  const std::vector<std::uint8_t> bytes = ReadFileBytes(path);
  try {
    return ParseCheckpoint(bytes);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::string FileChecksum(const fs::path& path) {
  // Each record is length-prefixed: a bare CRC32 over a file that ends in its
  // own CRC32 is the same constant for every such file.
  uLong crc = crc32(0L, Z_NULL, 0);
  uLong adler = adler32(0L, Z_NULL, 0);
  auto feed = [&](const std::uint8_t* data, std::size_t n) {
    std::uint8_t len[8];
    for (int i = 0; i < 8; ++i) len[i] = static_cast<std::uint8_t>(static_cast<std::uint64_t>(n) >> (8 * i));
    crc = crc32(crc, len, 8);
    crc = crc32(crc, data, static_cast<uInt>(n));
    adler = adler32(adler, len, 8);
    adler = adler32(adler, data, static_cast<uInt>(n));
  };
  if (!fs::is_directory(path)) {
    const auto bytes = ReadFileBytes(path);
    feed(bytes.data(), bytes.size());
  } else {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(path)) {
      if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), path));
    }
    std::sort(files.begin(), files.end());
    for (const auto& rel : files) {
      const std::string name = rel.generic_string();
      feed(reinterpret_cast<const std::uint8_t*>(name.data()), name.size());
      const auto bytes = ReadFileBytes(path / rel);
      feed(bytes.data(), bytes.size());
    }
  }
  return Hex(static_cast<std::uint32_t>(crc)) + Hex(static_cast<std::uint32_t>(adler));
}

}  // namespace spin
