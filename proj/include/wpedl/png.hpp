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

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "wpedl/error.hpp"
#include "wpedl/stft.hpp"

namespace wpedl {

/// Decoded 8-bit RGB raster.
struct RgbRaster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

namespace detail {

inline constexpr std::array<std::uint8_t, 8> kPngSignature = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

inline void put_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32be(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char (&type)[5], std::span<const std::uint8_t> data) {
  put_u32be(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t type_pos = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uLong crc = crc32(0L, out.data() + type_pos, static_cast<uInt>(4 + data.size()));
  put_u32be(out, static_cast<std::uint32_t>(crc));
}

inline std::uint8_t paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  if (pb <= pc) return static_cast<std::uint8_t>(b);
  return static_cast<std::uint8_t>(c);
}

}  // namespace detail

/// Encodes an 8-bit RGB, non-interlaced PNG (filter type 0 on every row).
inline std::vector<std::uint8_t> encode_png(std::size_t width, std::size_t height,
                                            std::span<const std::uint8_t> rgb) {
  if (rgb.size() != width * height * 3) fail(ErrorCode::ShapeMismatch, "encode_png: pixel buffer size mismatch");
  std::vector<std::uint8_t> out(detail::kPngSignature.begin(), detail::kPngSignature.end());

  std::vector<std::uint8_t> ihdr;
  detail::put_u32be(ihdr, static_cast<std::uint32_t>(width));
  detail::put_u32be(ihdr, static_cast<std::uint32_t>(height));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // depth 8, RGB, deflate, adaptive filtering, no interlace
  detail::put_chunk(out, "IHDR", ihdr);

  std::vector<std::uint8_t> raw;
  raw.reserve(height * (width * 3 + 1));
  for (std::size_t r = 0; r < height; ++r) {
    raw.push_back(0);
    auto row = rgb.subspan(r * width * 3, width * 3);
    raw.insert(raw.end(), row.begin(), row.end());
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    fail(ErrorCode::IoError, "encode_png: deflate failed");
  z.resize(zlen);
  detail::put_chunk(out, "IDAT", z);
  detail::put_chunk(out, "IEND", {});
  return out;
}

inline std::vector<std::uint8_t> encode_png(const SpectralImage& img) {
  return encode_png(img.width, img.height, img.pixels);
}

/// Decodes 8-bit RGB non-interlaced PNGs (any filter types).
inline RgbRaster decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || !std::equal(detail::kPngSignature.begin(), detail::kPngSignature.end(), bytes.begin()))
    fail(ErrorCode::BadMagic, "not a PNG stream");
  RgbRaster img;
  std::vector<std::uint8_t> z;
  std::size_t pos = 8;
  bool seen_header = false, seen_end = false;
  while (pos + 12 <= bytes.size() && !seen_end) {
    const std::uint32_t len = detail::get_u32be(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) fail(ErrorCode::Truncated, "PNG chunk overruns stream");
    const std::string type(reinterpret_cast<const char*>(&bytes[pos + 4]), 4);
    const std::uint8_t* data = &bytes[pos + 8];
    uLong crc = crc32(0L, &bytes[pos + 4], len + 4);
    if (crc != detail::get_u32be(data + len)) fail(ErrorCode::IoError, "PNG chunk CRC mismatch in " + type);
    if (type == "IHDR") {
      if (len != 13) fail(ErrorCode::IoError, "bad IHDR length");
      img.width = detail::get_u32be(data);
      img.height = detail::get_u32be(data + 4);
      if (data[8] != 8 || data[9] != 2 || data[12] != 0)
        fail(ErrorCode::ShapeMismatch, "only 8-bit RGB non-interlaced PNGs are supported");
      seen_header = true;
    } else if (type == "IDAT") {
      z.insert(z.end(), data, data + len);
    } else if (type == "IEND") {
      seen_end = true;
    }
    pos += 12 + len;
  }
  if (!seen_header || !seen_end) fail(ErrorCode::Truncated, "PNG stream missing IHDR or IEND");

  const std::size_t stride = img.width * 3;
  std::vector<std::uint8_t> raw(img.height * (stride + 1));
  uLongf rawlen = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &rawlen, z.data(), static_cast<uLong>(z.size())) != Z_OK || rawlen != raw.size())
    fail(ErrorCode::IoError, "PNG image data failed to inflate");

  img.pixels.resize(img.height * stride);
  for (std::size_t r = 0; r < img.height; ++r) {
    const std::uint8_t filter = raw[r * (stride + 1)];
    const std::uint8_t* src = &raw[r * (stride + 1) + 1];
    std::uint8_t* dst = &img.pixels[r * stride];
    const std::uint8_t* up = r ? &img.pixels[(r - 1) * stride] : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= 3 ? dst[i - 3] : 0;
      const int b = up ? up[i] : 0;
      const int c = (up && i >= 3) ? up[i - 3] : 0;
      int pred = 0;
      switch (filter) {
        case 0: pred = 0; break;
        case 1: pred = a; break;
        case 2: pred = b; break;
        case 3: pred = (a + b) / 2; break;
        case 4: pred = detail::paeth(a, b, c); break;
        default: fail(ErrorCode::IoError, "unknown PNG filter type");
      }
      dst[i] = static_cast<std::uint8_t>(src[i] + pred);
    }
  }
  return img;
}

inline void export_png(const SpectralImage& img, const fs::path& path) {
  const auto bytes = encode_png(img);
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "write failed for " + path.string());
}

inline RgbRaster read_png(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::MissingFile, path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

}  // namespace wpedl
