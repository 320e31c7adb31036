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

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "wpedl/checkpoint.hpp"
#include "wpedl/training.hpp"

namespace wpedl {

/// Multinomial logistic regression: logits = W x + b.
class SoftmaxRegression {
 public:
  SoftmaxRegression() = default;

  SoftmaxRegression(std::size_t input_dim, std::size_t classes, std::uint64_t seed)
      : dim_(input_dim), classes_(classes) {
    if (classes < 2) fail(ErrorCode::InvalidConfig, "softmax regression needs at least 2 classes");
    if (input_dim < 1) fail(ErrorCode::InvalidConfig, "softmax regression needs at least 1 feature");
    params_.emplace_back("linear.weight", std::vector<std::size_t>{classes, input_dim});
    params_.emplace_back("linear.bias", std::vector<std::size_t>{classes});
    std::mt19937_64 rng(seed);
    detail::he_uniform(params_[0], input_dim, rng);
  }

  /// Rebuilds a model from stored tensors.
  static SoftmaxRegression from_tensors(std::vector<NamedTensor> tensors) {
    SoftmaxRegression m;
    if (tensors.size() != 2 || tensors[0].shape.size() != 2 || tensors[1].shape.size() != 1 ||
        tensors[0].shape[0] != tensors[1].shape[0])
      fail(ErrorCode::ShapeMismatch, "softmax regression tensors malformed");
    m.classes_ = tensors[0].shape[0];
    m.dim_ = tensors[0].shape[1];
    m.params_ = std::move(tensors);
    return m;
  }

  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::size_t input_dim() const { return dim_; }
  std::size_t class_count() const { return classes_; }

  std::vector<double> logits(std::span<const double> x) const {
    const auto& w = params_[0].data;
    const auto& b = params_[1].data;
    std::vector<double> z(classes_);
    for (std::size_t c = 0; c < classes_; ++c) {
      double acc = b[c];
      const double* row = &w[c * dim_];
      for (std::size_t j = 0; j < dim_; ++j) acc += row[j] * x[j];
      z[c] = acc;
    }
    return z;
  }

  double accumulate_gradient(std::span<const double> x, int label, std::vector<NamedTensor>& grads) const {
    std::vector<double> dz;
    const double loss = detail::cross_entropy(logits(x), label, dz);
    auto& gw = grads[0].data;
    auto& gb = grads[1].data;
    for (std::size_t c = 0; c < classes_; ++c) {
      if (dz[c] == 0.0) continue;
      gb[c] += dz[c];
      double* row = &gw[c * dim_];
      for (std::size_t j = 0; j < dim_; ++j) row[j] += dz[c] * x[j];
    }
    return loss;
  }

 private:
  std::size_t dim_ = 0;
  std::size_t classes_ = 0;
  std::vector<NamedTensor> params_;
};

static_assert(GradientModel<SoftmaxRegression>);

struct SoftmaxTrainResult {
  SoftmaxRegression model;
  TrainingTrace trace;
};

/// Trains multinomial logistic regression on feature vectors.
inline SoftmaxTrainResult train_softmax(const Dataset& data, std::size_t classes, const GdHyper& hyper) {
  if (data.size() == 0) fail(ErrorCode::EmptyClass, "no training examples");
  SoftmaxTrainResult out{SoftmaxRegression(data.inputs.front().size(), classes, derive_seed(hyper.seed, "init")), {}};
  out.trace = train_gd(out.model, data, hyper);
  return out;
}

}  // namespace wpedl
