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
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "wpedl/checkpoint.hpp"
#include "wpedl/training.hpp"

namespace wpedl {

struct TensorShape {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;

  std::size_t size() const { return channels * height * width; }
  bool operator==(const TensorShape&) const = default;
};

/// Stack of (conv kxk "same" -> relu -> maxpool) blocks, then dense -> relu -> dense.
struct CnnArch {
  std::vector<std::size_t> conv_channels = {8, 16};
  std::size_t kernel = 3;
  std::size_t pool = 2;
  std::size_t hidden = 32;

  bool operator==(const CnnArch&) const = default;
};

inline nlohmann::json to_json(const CnnArch& a) {
  return {{"conv_channels", a.conv_channels}, {"kernel", a.kernel}, {"pool", a.pool}, {"hidden", a.hidden}};
}

inline CnnArch cnn_arch_from_json(const nlohmann::json& j) {
  detail::check_fields(j, {"conv_channels", "kernel", "pool", "hidden"}, "cnn arch");
  CnnArch a;
  a.conv_channels = j.value("conv_channels", a.conv_channels);
  a.kernel = j.value("kernel", a.kernel);
  a.pool = j.value("pool", a.pool);
  a.hidden = j.value("hidden", a.hidden);
  if (a.kernel % 2 == 0 || a.kernel < 1) fail(ErrorCode::InvalidConfig, "cnn kernel must be odd");
  if (a.pool < 1 || a.hidden < 1) fail(ErrorCode::InvalidConfig, "cnn pool and hidden must be >= 1");
  return a;
}

class Cnn {
 public:
  Cnn() = default;

  Cnn(TensorShape input, std::size_t classes, CnnArch arch, std::uint64_t seed)
      : input_(input), classes_(classes), arch_(std::move(arch)) {
    if (classes < 2) fail(ErrorCode::InvalidConfig, "cnn needs at least 2 classes");
    build_shapes();
    std::mt19937_64 rng(seed);
    std::size_t in_ch = input_.channels;
    const std::size_t k = arch_.kernel;
    for (std::size_t l = 0; l < arch_.conv_channels.size(); ++l) {
      const std::size_t out_ch = arch_.conv_channels[l];
      params_.emplace_back("conv" + std::to_string(l) + ".weight", std::vector<std::size_t>{out_ch, in_ch, k, k});
      detail::he_uniform(params_.back(), in_ch * k * k, rng);
      params_.emplace_back("conv" + std::to_string(l) + ".bias", std::vector<std::size_t>{out_ch});
      in_ch = out_ch;
    }
    params_.emplace_back("hidden.weight", std::vector<std::size_t>{arch_.hidden, flat_});
    detail::he_uniform(params_.back(), flat_, rng);
    params_.emplace_back("hidden.bias", std::vector<std::size_t>{arch_.hidden});
    params_.emplace_back("output.weight", std::vector<std::size_t>{classes_, arch_.hidden});
    detail::he_uniform(params_.back(), arch_.hidden, rng);
    params_.emplace_back("output.bias", std::vector<std::size_t>{classes_});
  }

  static Cnn from_tensors(TensorShape input, std::size_t classes, CnnArch arch, std::vector<NamedTensor> tensors) {
    Cnn m;
    m.input_ = input;
    m.classes_ = classes;
    m.arch_ = std::move(arch);
    m.build_shapes();
    Cnn reference(input, classes, m.arch_, 0);
    if (tensors.size() != reference.params_.size())
      fail(ErrorCode::ShapeMismatch, "cnn checkpoint has the wrong number of tensors");
    for (std::size_t i = 0; i < tensors.size(); ++i)
      if (tensors[i].name != reference.params_[i].name || tensors[i].shape != reference.params_[i].shape)
        fail(ErrorCode::ShapeMismatch, "cnn tensor '" + tensors[i].name + "' does not match the architecture");
    m.params_ = std::move(tensors);
    return m;
  }

  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::size_t input_dim() const { return input_.size(); }
  std::size_t class_count() const { return classes_; }
  const TensorShape& input_shape() const { return input_; }
  const CnnArch& arch() const { return arch_; }

  std::vector<double> logits(std::span<const double> x) const {
    Cache cache;
    forward(x, cache);
    return cache.logits;
  }

  double accumulate_gradient(std::span<const double> x, int label, std::vector<NamedTensor>& grads) const {
    Cache cache;
    forward(x, cache);
    std::vector<double> dlogits;
    const double loss = detail::cross_entropy(cache.logits, label, dlogits);
    backward(x, cache, dlogits, grads);
    return loss;
  }

 private:
  struct ConvCache {
    std::vector<double> pre;     // conv output before relu, out x h x w
    std::vector<double> pooled;  // after relu + maxpool, out x ph x pw
    std::vector<std::size_t> argmax;
  };
  struct Cache {
    std::vector<ConvCache> conv;
    std::vector<double> hidden_pre;
    std::vector<double> hidden;
    std::vector<double> logits;
  };

  void build_shapes() {
    shapes_.clear();
    TensorShape s = input_;
    for (auto out_ch : arch_.conv_channels) {
      TensorShape pooled{out_ch, s.height / arch_.pool, s.width / arch_.pool};
      if (pooled.height == 0 || pooled.width == 0)
        fail(ErrorCode::InvalidConfig, "cnn input too small for the configured pooling depth");
      shapes_.push_back({s, pooled});
      s = pooled;
    }
    flat_ = s.size();
  }

  // Parameter slots: conv l -> (2l, 2l+1); hidden -> 2L, 2L+1; output -> 2L+2, 2L+3.
  std::size_t hidden_slot() const { return 2 * arch_.conv_channels.size(); }

  void forward(std::span<const double> x, Cache& cache) const {
    const std::size_t k = arch_.kernel, pad = k / 2, pool = arch_.pool;
    std::span<const double> in = x;
    cache.conv.resize(shapes_.size());
    for (std::size_t l = 0; l < shapes_.size(); ++l) {
      const auto& [is, os] = shapes_[l];
      const auto& w = params_[2 * l].data;
      const auto& b = params_[2 * l + 1].data;
      auto& cc = cache.conv[l];
      const std::size_t H = is.height, W = is.width;
      cc.pre.assign(os.channels * H * W, 0.0);
      for (std::size_t o = 0; o < os.channels; ++o) {
        double* out = &cc.pre[o * H * W];
        std::fill(out, out + H * W, b[o]);
        for (std::size_t i = 0; i < is.channels; ++i) {
          const double* src = &in[i * H * W];
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              const double wv = w[((o * is.channels + i) * k + ky) * k + kx];
              const std::size_t y_lo = ky < pad ? pad - ky : 0, x_lo = kx < pad ? pad - kx : 0;
              const std::size_t y_hi = std::min(H, H + pad - ky), x_hi = std::min(W, W + pad - kx);
              for (std::size_t y = y_lo; y < y_hi; ++y) {
                const double* srow = src + (y + ky - pad) * W + x_lo + kx - pad;
                double* orow = out + y * W + x_lo;
                for (std::size_t xx = 0; xx < x_hi - x_lo; ++xx) orow[xx] += wv * srow[xx];
              }
            }
          }
        }
      }
      cc.pooled.assign(os.size(), 0.0);
      cc.argmax.assign(os.size(), 0);
      for (std::size_t o = 0; o < os.channels; ++o) {
        for (std::size_t py = 0; py < os.height; ++py) {
          for (std::size_t px = 0; px < os.width; ++px) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t best_at = 0;
            for (std::size_t dy = 0; dy < pool; ++dy) {
              for (std::size_t dx = 0; dx < pool; ++dx) {
                const std::size_t at = (o * H + py * pool + dy) * W + px * pool + dx;
                if (cc.pre[at] > best) {
                  best = cc.pre[at];
                  best_at = at;
                }
              }
            }
            const std::size_t dst = (o * os.height + py) * os.width + px;
            cc.pooled[dst] = std::max(best, 0.0);  // relu and max commute
            cc.argmax[dst] = best_at;
          }
        }
      }
      in = cc.pooled;
    }

    const std::size_t hs = hidden_slot();
    const auto& hw = params_[hs].data;
    const auto& hb = params_[hs + 1].data;
    cache.hidden_pre.assign(arch_.hidden, 0.0);
    cache.hidden.assign(arch_.hidden, 0.0);
    for (std::size_t h = 0; h < arch_.hidden; ++h) {
      double acc = hb[h];
      const double* row = &hw[h * flat_];
      for (std::size_t j = 0; j < flat_; ++j) acc += row[j] * in[j];
      cache.hidden_pre[h] = acc;
      cache.hidden[h] = std::max(acc, 0.0);
    }
    const auto& ow = params_[hs + 2].data;
    const auto& ob = params_[hs + 3].data;
    cache.logits.assign(classes_, 0.0);
    for (std::size_t c = 0; c < classes_; ++c) {
      double acc = ob[c];
      for (std::size_t h = 0; h < arch_.hidden; ++h) acc += ow[c * arch_.hidden + h] * cache.hidden[h];
      cache.logits[c] = acc;
    }
  }

  void backward(std::span<const double> x, const Cache& cache, const std::vector<double>& dlogits,
                std::vector<NamedTensor>& grads) const {
    const std::size_t hs = hidden_slot(), Hd = arch_.hidden;
    const auto& ow = params_[hs + 2].data;
    auto& gow = grads[hs + 2].data;
    auto& gob = grads[hs + 3].data;
    std::vector<double> dh(Hd, 0.0);
    for (std::size_t c = 0; c < classes_; ++c) {
      if (dlogits[c] == 0.0) continue;
      gob[c] += dlogits[c];
      for (std::size_t h = 0; h < Hd; ++h) {
        gow[c * Hd + h] += dlogits[c] * cache.hidden[h];
        dh[h] += dlogits[c] * ow[c * Hd + h];
      }
    }
    for (std::size_t h = 0; h < Hd; ++h)
      if (cache.hidden_pre[h] <= 0.0) dh[h] = 0.0;

    std::span<const double> flat_in = shapes_.empty() ? x : std::span<const double>(cache.conv.back().pooled);
    const auto& hw = params_[hs].data;
    auto& ghw = grads[hs].data;
    auto& ghb = grads[hs + 1].data;
    std::vector<double> dflat(flat_, 0.0);
    for (std::size_t h = 0; h < Hd; ++h) {
      if (dh[h] == 0.0) continue;
      ghb[h] += dh[h];
      const double* row = &hw[h * flat_];
      double* grow = &ghw[h * flat_];
      for (std::size_t j = 0; j < flat_; ++j) {
        grow[j] += dh[h] * flat_in[j];
        dflat[j] += dh[h] * row[j];
      }
    }

    const std::size_t k = arch_.kernel, pad = k / 2;
    std::vector<double> dout = std::move(dflat);
    for (std::size_t l = shapes_.size(); l-- > 0;) {
      const auto& [is, os] = shapes_[l];
      const auto& cc = cache.conv[l];
      const std::size_t H = is.height, W = is.width;
      // Through maxpool + relu into the conv pre-activation.
      std::vector<double> dpre(cc.pre.size(), 0.0);
      for (std::size_t j = 0; j < os.size(); ++j)
        if (cc.pooled[j] > 0.0) dpre[cc.argmax[j]] += dout[j];

      std::span<const double> in = l == 0 ? x : std::span<const double>(cache.conv[l - 1].pooled);
      const auto& w = params_[2 * l].data;
      auto& gw = grads[2 * l].data;
      auto& gb = grads[2 * l + 1].data;
      std::vector<double> din(l == 0 ? 0 : is.size(), 0.0);
      for (std::size_t o = 0; o < os.channels; ++o) {
        const double* d = &dpre[o * H * W];
        for (std::size_t p = 0; p < H * W; ++p) gb[o] += d[p];
        for (std::size_t i = 0; i < is.channels; ++i) {
          const double* src = &in[i * H * W];
          double* dsrc = din.empty() ? nullptr : &din[i * H * W];
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::size_t widx = ((o * is.channels + i) * k + ky) * k + kx;
              const std::size_t y_lo = ky < pad ? pad - ky : 0, x_lo = kx < pad ? pad - kx : 0;
              const std::size_t y_hi = std::min(H, H + pad - ky), x_hi = std::min(W, W + pad - kx);
              double acc = 0.0;
              for (std::size_t y = y_lo; y < y_hi; ++y) {
                const std::size_t off = (y + ky - pad) * W - pad + kx;
                const double* drow = d + y * W;
                for (std::size_t xx = x_lo; xx < x_hi; ++xx) acc += drow[xx] * src[off + xx];
                if (dsrc) {
                  const double wv = w[widx];
                  for (std::size_t xx = x_lo; xx < x_hi; ++xx) dsrc[off + xx] += drow[xx] * wv;
                }
              }
              gw[widx] += acc;
            }
          }
        }
      }
      dout = std::move(din);
    }
  }

  struct LayerShapes {
    TensorShape input;
    TensorShape pooled;
  };

  TensorShape input_;
  std::size_t classes_ = 0;
  CnnArch arch_;
  std::vector<LayerShapes> shapes_;
  std::size_t flat_ = 0;
  std::vector<NamedTensor> params_;
};

static_assert(GradientModel<Cnn>);

struct CnnTrainResult {
  Cnn model;
  TrainingTrace trace;
};

inline CnnTrainResult train_cnn(const Dataset& data, TensorShape input, std::size_t classes, const CnnArch& arch,
                                const GdHyper& hyper) {
  if (data.size() == 0) fail(ErrorCode::EmptyClass, "no training examples");
  CnnTrainResult out{Cnn(input, classes, arch, derive_seed(hyper.seed, "init")), {}};
  out.trace = train_gd(out.model, data, hyper);
  return out;
}

}  // namespace wpedl
