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
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "wpedl/checkpoint.hpp"
#include "wpedl/error.hpp"
#include "wpedl/probability.hpp"
#include "wpedl/rng.hpp"

namespace wpedl {

/// Flattened inputs with integer class labels.
struct Dataset {
  std::vector<std::vector<double>> inputs;
  std::vector<int> labels;

  std::size_t size() const noexcept { return inputs.size(); }
};

/// Plain mini-batch gradient descent settings shared by the native backends.
struct GdHyper {
  double lr = 0.1;
  std::size_t epochs = 20;
  std::size_t batch = 32;
  double l2 = 1e-4;
  std::uint64_t seed = 0;

  bool operator==(const GdHyper&) const = default;
};

inline nlohmann::json to_json(const GdHyper& h) {
  return {{"lr", h.lr}, {"epochs", h.epochs}, {"batch", h.batch}, {"l2", h.l2}, {"seed", h.seed}};
}

inline GdHyper gd_hyper_from_json(const nlohmann::json& j, GdHyper defaults = {}) {
  GdHyper h = defaults;
  h.lr = j.value("lr", h.lr);
  h.epochs = j.value("epochs", h.epochs);
  h.batch = j.value("batch", h.batch);
  h.l2 = j.value("l2", h.l2);
  h.seed = j.value("seed", h.seed);
  if (h.batch < 1) fail(ErrorCode::InvalidConfig, "batch must be >= 1");
  if (!(h.lr >= 0.0) || !(h.l2 >= 0.0)) fail(ErrorCode::InvalidConfig, "lr and l2 must be >= 0");
  return h;
}

/// Per-sample cross-entropy is capped at -log(1e-12); past the cap the sample
/// contributes no gradient.
inline constexpr double kProbabilityFloor = 1e-12;

/// A model trainable by `train_gd`: exposes its parameters, per-sample logits,
/// and a per-sample loss whose gradient it adds into `grads`.
template <class M>
concept GradientModel = requires(M& m, const M& cm, std::span<const double> x, int y, std::vector<NamedTensor>& g) {
  { m.parameters() } -> std::same_as<std::vector<NamedTensor>&>;
  { cm.parameters() } -> std::same_as<const std::vector<NamedTensor>&>;
  { cm.logits(x) } -> std::same_as<std::vector<double>>;
  { cm.accumulate_gradient(x, y, g) } -> std::same_as<double>;
  { cm.input_dim() } -> std::convertible_to<std::size_t>;
  { cm.class_count() } -> std::convertible_to<std::size_t>;
};

namespace detail {

inline bool is_weight(const NamedTensor& t) {
  return t.name.size() >= 7 && t.name.compare(t.name.size() - 7, 7, ".weight") == 0;
}

/// Loss of one sample from its logits; writes d(loss)/d(logits) into `dlogits`.
inline double cross_entropy(std::span<const double> logits, int label, std::vector<double>& dlogits) {
  const double lse = log_sum_exp(logits);
  const double cap = -std::log(kProbabilityFloor);
  const double loss = lse - logits[static_cast<std::size_t>(label)];
  dlogits.assign(logits.size(), 0.0);
  if (loss >= cap) return cap;
  for (std::size_t k = 0; k < logits.size(); ++k) dlogits[k] = std::exp(logits[k] - lse);
  dlogits[static_cast<std::size_t>(label)] -= 1.0;
  return loss;
}

inline std::vector<NamedTensor> zeros_like(const std::vector<NamedTensor>& params) {
  std::vector<NamedTensor> g;
  g.reserve(params.size());
  for (const auto& p : params) g.emplace_back(p.name, p.shape);
  return g;
}

/// He-style uniform initialization: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
inline void he_uniform(NamedTensor& t, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data) v = dist(rng);
}

}  // namespace detail

/// Checks that every class in [0, classes) is represented and shapes agree.
inline void validate_dataset(const Dataset& data, std::size_t classes, std::size_t input_dim) {
  if (data.inputs.size() != data.labels.size()) fail(ErrorCode::LengthMismatch, "inputs and labels differ in length");
  std::vector<std::size_t> per_class(classes, 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.inputs[i].size() != input_dim)
      fail(ErrorCode::ShapeMismatch, "example " + std::to_string(i) + " has " + std::to_string(data.inputs[i].size()) +
                                         " features, expected " + std::to_string(input_dim));
    const int y = data.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      fail(ErrorCode::LabelOutOfRange, "label " + std::to_string(y) + " out of range");
    ++per_class[static_cast<std::size_t>(y)];
  }
  for (std::size_t c = 0; c < classes; ++c)
    if (per_class[c] == 0) fail(ErrorCode::EmptyClass, "class " + std::to_string(c) + " has no training examples");
}

/// Mean cross-entropy over `idx` plus (l2/2)*||weights||^2. When `grads` is
/// given it receives the matching gradient (overwritten).
template <GradientModel M>
double batch_loss(const M& model, const Dataset& data, std::span<const std::size_t> idx, double l2,
                  std::vector<NamedTensor>* grads = nullptr) {
  std::vector<NamedTensor> local;
  std::vector<NamedTensor>& g = grads ? *grads : local;
  g = detail::zeros_like(model.parameters());
  double loss = 0.0;
  for (auto i : idx) loss += model.accumulate_gradient(data.inputs[i], data.labels[i], g);
  const double inv = idx.empty() ? 0.0 : 1.0 / static_cast<double>(idx.size());
  loss *= inv;
  const auto& params = model.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (auto& v : g[p].data) v *= inv;
    if (!detail::is_weight(params[p])) continue;
    for (std::size_t k = 0; k < params[p].size(); ++k) {
      const double w = params[p].data[k];
      loss += 0.5 * l2 * w * w;
      g[p].data[k] += l2 * w;
    }
  }
  return loss;
}

/// Result of a training run; `epoch_loss[e]` is the mean mini-batch loss seen in epoch e.
struct TrainingTrace {
  std::vector<double> epoch_loss;
};

template <GradientModel M>
TrainingTrace train_gd(M& model, const Dataset& data, const GdHyper& hyper) {
  validate_dataset(data, model.class_count(), model.input_dim());
  TrainingTrace trace;
  std::vector<std::size_t> order(data.size());
  std::vector<NamedTensor> grads;
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(hyper.seed, {0x5eedULL, epoch}));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      const std::size_t stop = std::min(order.size(), start + hyper.batch);
      const double loss = batch_loss(model, data, std::span(order).subspan(start, stop - start), hyper.l2, &grads);
      if (!std::isfinite(loss))
        fail(ErrorCode::NonFiniteLoss, "non-finite training loss in epoch " + std::to_string(epoch));
      total += loss;
      ++batches;
      auto& params = model.parameters();
      for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t k = 0; k < params[p].size(); ++k) params[p].data[k] -= hyper.lr * grads[p].data[k];
    }
    trace.epoch_loss.push_back(total / static_cast<double>(std::max<std::size_t>(batches, 1)));
  }
  return trace;
}

template <GradientModel M>
ProbabilityVector predict_proba(const M& model, std::span<const double> x) {
  if (x.size() != model.input_dim())
    fail(ErrorCode::ShapeMismatch, "input has " + std::to_string(x.size()) + " features, model expects " +
                                       std::to_string(model.input_dim()));
  return softmax(model.logits(x));
}

}  // namespace wpedl
