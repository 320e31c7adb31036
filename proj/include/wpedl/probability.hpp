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
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wpedl/error.hpp"

namespace wpedl {

/// Length-C (C >= 2) nonnegative vector summing to 1 within 1e-9.
class ProbabilityVector {
 public:
  static constexpr double kSumTolerance = 1e-9;

  ProbabilityVector() = default;

  explicit ProbabilityVector(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.size() < 2) fail(ErrorCode::InvalidProbability, "probability vector needs at least 2 classes");
    double sum = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::InvalidProbability, "probability outside [0,1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kSumTolerance)
      fail(ErrorCode::InvalidProbability, "probabilities sum to " + std::to_string(sum));
  }

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> values() const noexcept { return probs_; }
  auto begin() const noexcept { return probs_.begin(); }
  auto end() const noexcept { return probs_.end(); }

  /// Index of the largest entry; ties resolve to the smallest index.
  std::size_t argmax() const noexcept {
    return static_cast<std::size_t>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
  }

  bool operator==(const ProbabilityVector&) const = default;

 private:
  std::vector<double> probs_;
};

/// Softmax with max-subtraction; exact shift invariance up to rounding.
inline ProbabilityVector softmax(std::span<const double> logits) {
  if (logits.size() < 2) fail(ErrorCode::InvalidProbability, "softmax needs at least 2 logits");
  const double hi = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(hi)) fail(ErrorCode::NonFinite, "non-finite logit");
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp(logits[i] - hi);
  for (double& v : p) v /= z;
  return ProbabilityVector(std::move(p));
}

/// log(sum(exp(logits))), stabilized.
inline double log_sum_exp(std::span<const double> logits) {
  const double hi = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - hi);
  return hi + std::log(z);
}

}  // namespace wpedl
