// Copyright 2026 The WPEDL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "wpedl/error.hpp"
#include "wpedl/signal_io.hpp"

namespace wpedl {

/// Shape-tagged parameter block.
struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;

  NamedTensor() = default;
  NamedTensor(std::string n, std::vector<std::size_t> s)
      : name(std::move(n)), shape(std::move(s)),
        data(std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{}), 0.0) {}

  std::size_t size() const noexcept { return data.size(); }
  bool operator==(const NamedTensor&) const = default;
};

/// On-disk model image. Layout (all integers little-endian):
///
///   "WPEDL/" <version digits> "\n"
///   u64 meta_len, meta_len bytes of JSON {backend, identity, hyperparameters, labels, init}
///   u32 tensor_count, then per tensor:
///     u32 name_len, name bytes, u32 rank, rank x u64 dims, prod(dims) x f64
struct Checkpoint {
  static constexpr int kVersion = 1;

  std::string backend;
  std::string identity;
  nlohmann::json hyperparameters = nlohmann::json::object();
  std::vector<std::string> labels;
  std::string init = "he_uniform";
  std::vector<NamedTensor> tensors;

  const NamedTensor& tensor(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    fail(ErrorCode::Truncated, "checkpoint has no tensor '" + name + "'");
  }
};

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    auto b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  template <class U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) { raw(s.data(), s.size()); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) fail(ErrorCode::Truncated, "checkpoint ends early at byte " + std::to_string(pos_));
  }
  template <class U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return b_.size() - pos_; }
  std::uint8_t peek() const {
    need(1);
    return b_[pos_];
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck, int version = Checkpoint::kVersion) {
  detail::ByteWriter w;
  w.str("WPEDL/" + std::to_string(version) + "\n");
  const nlohmann::json meta = {{"backend", ck.backend},
                               {"identity", ck.identity},
                               {"hyperparameters", ck.hyperparameters},
                               {"labels", ck.labels},
                               {"init", ck.init}};
  const std::string meta_text = meta.dump();
  w.le<std::uint64_t>(meta_text.size());
  w.str(meta_text);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.str(t.name);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.le<std::uint64_t>(d);
    for (double v : t.data) w.f64(v);
  }
  return w.take();
}

inline Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  static constexpr char kMagic[] = "WPEDL/";
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 6) != 0) fail(ErrorCode::BadMagic, "not a WPEDL checkpoint");
  r.skip(6);
  std::string digits;
  while (r.peek() != '\n') {
    const char c = static_cast<char>(r.le<std::uint8_t>());
    if (c < '0' || c > '9' || digits.size() > 8) fail(ErrorCode::BadMagic, "malformed checkpoint version");
    digits += c;
  }
  r.skip(1);
  if (digits.empty()) fail(ErrorCode::BadMagic, "missing checkpoint version");
  if (std::stoi(digits) != Checkpoint::kVersion)
    fail(ErrorCode::VersionMismatch, "checkpoint version " + digits + ", reader supports " +
                                         std::to_string(Checkpoint::kVersion));
  const auto meta_len = r.le<std::uint64_t>();
  if (meta_len > r.remaining()) fail(ErrorCode::Truncated, "checkpoint metadata block overruns file");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.str(static_cast<std::size_t>(meta_len)));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Truncated, std::string("checkpoint metadata unreadable: ") + e.what());
  }
  Checkpoint ck;
  try {
    ck.backend = meta.at("backend").get<std::string>();
    ck.identity = meta.at("identity").get<std::string>();
    ck.hyperparameters = meta.at("hyperparameters");
    ck.labels = meta.at("labels").get<std::vector<std::string>>();
    ck.init = meta.value("init", std::string("he_uniform"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Truncated, std::string("checkpoint metadata incomplete: ") + e.what());
  }
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str(r.le<std::uint32_t>());
    const auto rank = r.le<std::uint32_t>();
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.shape.push_back(static_cast<std::size_t>(r.le<std::uint64_t>()));
      n *= t.shape.back();
    }
    if (n > r.remaining() / 8) fail(ErrorCode::Truncated, "tensor '" + t.name + "' overruns file");
    t.data.resize(n);
    for (auto& v : t.data) v = r.f64();
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
  const auto bytes = serialize_checkpoint(ck);
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::MissingFile, path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace wpedl
