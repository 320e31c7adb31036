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
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "wpedl/detail/viridis.hpp"
#include "wpedl/error.hpp"
#include "wpedl/signal_io.hpp"

namespace wpedl {

enum class WindowFn { Hann, Hamming, Rectangular };

inline std::string to_string(WindowFn w) {
  switch (w) {
    case WindowFn::Hann: return "hann";
    case WindowFn::Hamming: return "hamming";
    case WindowFn::Rectangular: return "rectangular";
  }
  return "hann";
}

inline WindowFn parse_window(const std::string& s) {
  if (s == "hann") return WindowFn::Hann;
  if (s == "hamming") return WindowFn::Hamming;
  if (s == "rectangular" || s == "rect") return WindowFn::Rectangular;
  fail(ErrorCode::InvalidConfig, "unknown window function '" + s + "'");
}

struct StftParams {
  std::size_t window_len = 256;
  std::size_t hop = 64;
  WindowFn window = WindowFn::Hann;
  std::size_t fft_pad = 256;

  std::size_t bins() const { return fft_pad / 2 + 1; }
  std::size_t frames(std::size_t length) const { return length < window_len ? 0 : (length - window_len) / hop + 1; }
  bool operator==(const StftParams&) const = default;
};

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline void validate(const StftParams& p) {
  if (!(1 <= p.hop && p.hop <= p.window_len && p.window_len <= p.fft_pad))
    fail(ErrorCode::InvalidConfig, "stft params must satisfy 1 <= hop <= window_len <= fft_pad");
  if (!is_power_of_two(p.fft_pad)) fail(ErrorCode::InvalidConfig, "fft_pad must be a power of two");
}

inline nlohmann::json to_json(const StftParams& p) {
  return {{"window_len", p.window_len}, {"hop", p.hop}, {"window", to_string(p.window)}, {"fft_pad", p.fft_pad}};
}

inline StftParams stft_params_from_json(const nlohmann::json& j) {
  detail::check_fields(j, {"window_len", "hop", "window", "fft_pad"}, "stft");
  StftParams p;
  p.window_len = j.value("window_len", p.window_len);
  p.hop = j.value("hop", p.window_len / 4);
  p.window = parse_window(j.value("window", std::string("hann")));
  p.fft_pad = j.value("fft_pad", p.window_len);
  validate(p);
  return p;
}

/// Periodic window of length n.
inline std::vector<double> make_window(WindowFn fn, std::size_t n) {
  std::vector<double> w(n, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < n; ++i) {
    const double phase = two_pi * static_cast<double>(i) / static_cast<double>(n);
    if (fn == WindowFn::Hann) w[i] = 0.5 - 0.5 * std::cos(phase);
    if (fn == WindowFn::Hamming) w[i] = 0.54 - 0.46 * std::cos(phase);
  }
  return w;
}

/// In-place iterative radix-2 forward FFT; size must be a power of two.
inline void fft_inplace(std::span<std::complex<double>> a) {
  const std::size_t n = a.size();
  if (!is_power_of_two(n)) fail(ErrorCode::InvalidConfig, "fft size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  // Twiddles evaluated directly (not by recurrence) to keep rounding error at O(eps log n).
  std::vector<std::complex<double>> tw(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k)
    tw[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2, stride = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        auto u = a[i + k];
        auto v = a[i + k + half] * tw[k * stride];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

/// Magnitude STFT. `magnitude` is bins x frames, row-major by bin.
struct Spectrogram {
  std::size_t bins = 0;
  std::size_t frames = 0;
  std::vector<double> magnitude;
  StftParams params;
  double sample_rate = 0.0;

  double at(std::size_t bin, std::size_t frame) const { return magnitude[bin * frames + frame]; }
  double bin_hz(std::size_t bin) const { return static_cast<double>(bin) * sample_rate / static_cast<double>(params.fft_pad); }
};

inline Spectrogram stft(std::span<const double> x, double sample_rate, const StftParams& params) {
  validate(params);
  if (x.size() < params.window_len)
    fail(ErrorCode::TooShort, "segment of " + std::to_string(x.size()) + " samples is shorter than the " +
                                  std::to_string(params.window_len) + "-sample window");
  Spectrogram s;
  s.params = params;
  s.sample_rate = sample_rate;
  s.bins = params.bins();
  s.frames = params.frames(x.size());
  s.magnitude.assign(s.bins * s.frames, 0.0);
  const auto w = make_window(params.window, params.window_len);
  std::vector<std::complex<double>> buf(params.fft_pad);
  for (std::size_t m = 0; m < s.frames; ++m) {
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    const std::size_t start = m * params.hop;
    for (std::size_t n = 0; n < params.window_len; ++n) buf[n] = x[start + n] * w[n];
    fft_inplace(buf);
    for (std::size_t k = 0; k < s.bins; ++k) s.magnitude[k * s.frames + m] = std::abs(buf[k]);
  }
  return s;
}

inline Spectrogram stft(const TimeSeriesSegment& seg, const StftParams& params) {
  return stft(seg.samples, seg.sample_rate, params);
}

// ---------------------------------------------------------------------------
// Rendering

enum class Colormap { Viridis, Gray };

inline std::string to_string(Colormap c) { return c == Colormap::Gray ? "gray" : "viridis"; }

inline Colormap parse_colormap(const std::string& s) {
  if (s == "viridis") return Colormap::Viridis;
  if (s == "gray") return Colormap::Gray;
  fail(ErrorCode::InvalidConfig, "unknown colormap '" + s + "'");
}

inline std::array<std::uint8_t, 3> apply_colormap(Colormap cmap, double t) {
  t = std::clamp(t, 0.0, 1.0);
  const auto idx = static_cast<std::size_t>(std::lround(t * 255.0));
  if (cmap == Colormap::Gray) {
    auto g = static_cast<std::uint8_t>(idx);
    return {g, g, g};
  }
  return detail::kViridis[idx];
}

struct RenderOptions {
  std::size_t image_size = 224;
  double db_floor = -80.0;
  Colormap colormap = Colormap::Viridis;
  bool operator==(const RenderOptions&) const = default;
};

inline constexpr double kMagnitudeEpsilon = 1e-10;

/// Square 8-bit RGB rendering of a spectrogram; row 0 is the highest frequency.
struct SpectralImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB
  Colormap colormap = Colormap::Viridis;
  double db_floor = -80.0;
  StftParams params;
  double sample_rate = 0.0;

  std::uint8_t at(std::size_t row, std::size_t col, std::size_t ch) const { return pixels[(row * width + col) * 3 + ch]; }
};

/// Log-magnitude in [0,1]: 20 log10(|X| + eps), clamped to the top |db_floor| dB
/// and mapped affinely so the maximum is 1. A constant input maps to 0.
inline std::vector<double> log_scaled(const Spectrogram& spec, double db_floor) {
  std::vector<double> v(spec.magnitude.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 20.0 * std::log10(spec.magnitude[i] + kMagnitudeEpsilon);
  auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double hi = *hi_it, span = std::abs(db_floor);
  if (*lo_it == hi || span == 0.0) {
    std::fill(v.begin(), v.end(), 0.0);
    return v;
  }
  for (double& x : v) x = (std::max(x, hi - span) - (hi - span)) / span;
  return v;
}

inline SpectralImage render(const Spectrogram& spec, const RenderOptions& opt) {
  if (spec.magnitude.empty()) fail(ErrorCode::EmptyInput, "cannot render an empty spectrogram");
  if (opt.image_size < 1) fail(ErrorCode::InvalidConfig, "image_size must be >= 1");
  const auto level = log_scaled(spec, opt.db_floor);
  const std::size_t S = opt.image_size, F = spec.bins, T = spec.frames;

  // Align-corners bilinear sample positions.
  auto coord = [S](std::size_t i, std::size_t n) {
    return S == 1 || n == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(n - 1) / static_cast<double>(S - 1);
  };
  SpectralImage img;
  img.height = img.width = S;
  img.pixels.resize(S * S * 3);
  img.colormap = opt.colormap;
  img.db_floor = opt.db_floor;
  img.params = spec.params;
  img.sample_rate = spec.sample_rate;
  for (std::size_t r = 0; r < S; ++r) {
    const double fy = coord(S - 1 - r, F);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, F - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t c = 0; c < S; ++c) {
      const double fx = coord(c, T);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, T - 1);
      const double wx = fx - static_cast<double>(x0);
      const double v = (1 - wy) * ((1 - wx) * level[y0 * T + x0] + wx * level[y0 * T + x1]) +
                       wy * ((1 - wx) * level[y1 * T + x0] + wx * level[y1 * T + x1]);
      const auto rgb = apply_colormap(opt.colormap, v);
      std::copy(rgb.begin(), rgb.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>((r * S + c) * 3));
    }
  }
  return img;
}

}  // namespace wpedl
