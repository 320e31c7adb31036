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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "wpedl/checkpoint.hpp"
#include "wpedl/cnn.hpp"
#include "wpedl/error.hpp"
#include "wpedl/png.hpp"
#include "wpedl/probability.hpp"
#include "wpedl/signal_io.hpp"
#include "wpedl/softmax_regression.hpp"
#include "wpedl/stft.hpp"

namespace wpedl {

/// Non-owning view of an 8-bit RGB raster.
struct ImageView {
  std::size_t width = 0;
  std::size_t height = 0;
  std::span<const std::uint8_t> pixels;

  ImageView() = default;
  ImageView(std::size_t w, std::size_t h, std::span<const std::uint8_t> p) : width(w), height(h), pixels(p) {}
  ImageView(const SpectralImage& img) : ImageView(img.width, img.height, img.pixels) {}  // NOLINT
  ImageView(const RgbRaster& img) : ImageView(img.width, img.height, img.pixels) {}      // NOLINT
};

/// One item presented to a classifier: external backends key on `id`,
/// native backends read `image`.
struct Sample {
  std::string id;
  ImageView image;
};

/// Box-averages an image onto a rows x cols grid, channel-major, scaled to [-0.5, 0.5].
inline std::vector<double> pool_image(const ImageView& img, std::size_t rows, std::size_t cols) {
  if (img.width == 0 || img.height == 0 || img.pixels.size() != img.width * img.height * 3)
    fail(ErrorCode::ShapeMismatch, "image buffer does not match its dimensions");
  std::vector<double> out(3 * rows * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t y0 = r * img.height / rows, y1 = std::max(y0 + 1, (r + 1) * img.height / rows);
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t x0 = c * img.width / cols, x1 = std::max(x0 + 1, (c + 1) * img.width / cols);
      double sum[3] = {0, 0, 0};
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x)
          for (std::size_t ch = 0; ch < 3; ++ch) sum[ch] += img.pixels[(y * img.width + x) * 3 + ch];
      const double n = static_cast<double>((y1 - y0) * (x1 - x0)) * 255.0;
      for (std::size_t ch = 0; ch < 3; ++ch) out[(ch * rows + r) * cols + c] = sum[ch] / n - 0.5;
    }
  }
  return out;
}

/// Per-feature standardization fitted on the training inputs. Without it the pooled
/// pixels share a large common offset and plain gradient descent oscillates between
/// neighbouring classes from one epoch to the next.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> inv_scale;

  bool empty() const noexcept { return mean.empty(); }

  static FeatureScaler fit(const std::vector<std::vector<double>>& inputs) {
    FeatureScaler s;
    if (inputs.empty()) return s;
    const std::size_t d = inputs.front().size();
    const double n = static_cast<double>(inputs.size());
    s.mean.assign(d, 0.0);
    s.inv_scale.assign(d, 0.0);
    for (const auto& x : inputs)
      for (std::size_t k = 0; k < d; ++k) s.mean[k] += x[k];
    for (double& m : s.mean) m /= n;
    for (const auto& x : inputs)
      for (std::size_t k = 0; k < d; ++k) s.inv_scale[k] += (x[k] - s.mean[k]) * (x[k] - s.mean[k]);
    for (double& v : s.inv_scale) {
      const double sd = std::sqrt(v / n);
      v = sd > 1e-9 ? 1.0 / sd : 1.0;  // constant features are only centred
    }
    return s;
  }

  void apply(std::vector<double>& x) const {
    if (empty()) return;
    if (x.size() != mean.size()) fail(ErrorCode::ShapeMismatch, "feature vector does not match the scaler");
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = (x[k] - mean[k]) * inv_scale[k];
  }

  void append_to(std::vector<NamedTensor>& tensors) const {
    if (empty()) return;
    NamedTensor m("input.mean", {mean.size()}), s("input.inv_scale", {inv_scale.size()});
    m.data = mean;
    s.data = inv_scale;
    tensors.push_back(std::move(m));
    tensors.push_back(std::move(s));
  }

  /// Removes the scaler tensors from a checkpoint tensor list, returning them.
  static FeatureScaler extract(std::vector<NamedTensor>& tensors, bool expected) {
    FeatureScaler s;
    std::vector<NamedTensor> rest;
    for (auto& t : tensors) {
      if (t.name == "input.mean") s.mean = std::move(t.data);
      else if (t.name == "input.inv_scale") s.inv_scale = std::move(t.data);
      else rest.push_back(std::move(t));
    }
    tensors = std::move(rest);
    if (expected != !s.empty() || s.mean.size() != s.inv_scale.size())
      fail(ErrorCode::ShapeMismatch, "checkpoint input scaling disagrees with its metadata");
    return s;
  }
};

namespace detail {

inline Dataset pooled_dataset(std::span<const ImageView> images, std::span<const int> targets, std::size_t size,
                              bool standardize, FeatureScaler& scaler) {
  Dataset data;
  for (const auto& img : images) data.inputs.push_back(pool_image(img, size, size));
  data.labels.assign(targets.begin(), targets.end());
  scaler = standardize ? FeatureScaler::fit(data.inputs) : FeatureScaler{};
  for (auto& x : data.inputs) scaler.apply(x);
  return data;
}

inline std::vector<double> pooled_input(const ImageView& img, std::size_t size, const FeatureScaler& scaler) {
  auto x = pool_image(img, size, size);
  scaler.apply(x);
  return x;
}

}  // namespace detail

/// Uniform probabilistic classifier used by the ensemble.
class ClassifierBackend {
 public:
  virtual ~ClassifierBackend() = default;

  virtual std::string backend() const = 0;
  virtual const std::string& identity() const = 0;
  virtual const std::vector<std::string>& labels() const = 0;
  virtual ProbabilityVector predict_proba(const Sample& sample) const = 0;
  virtual void save(const fs::path& path) const = 0;

  std::size_t class_count() const { return labels().size(); }
};

// ---------------------------------------------------------------------------
// Native backends

struct SoftmaxBackendHyper {
  GdHyper gd{0.01, 30, 32, 1e-4, 0};
  std::size_t grid = 16;  // images are pooled to grid x grid x 3 features
  bool standardize = true;

  bool operator==(const SoftmaxBackendHyper&) const = default;
};

inline nlohmann::json to_json(const SoftmaxBackendHyper& h) {
  auto j = to_json(h.gd);
  j["grid"] = h.grid;
  j["standardize"] = h.standardize;
  return j;
}

inline SoftmaxBackendHyper softmax_hyper_from_json(const nlohmann::json& j) {
  detail::check_fields(j, {"lr", "epochs", "batch", "l2", "seed", "grid", "standardize"}, "softmax hyperparameters");
  SoftmaxBackendHyper h;
  h.gd = gd_hyper_from_json(j, h.gd);
  h.grid = j.value("grid", h.grid);
  h.standardize = j.value("standardize", h.standardize);
  if (h.grid < 1) fail(ErrorCode::InvalidConfig, "softmax grid must be >= 1");
  return h;
}

class SoftmaxClassifier final : public ClassifierBackend {
 public:
  SoftmaxClassifier(std::string identity, std::vector<std::string> labels, SoftmaxBackendHyper hyper,
                    SoftmaxRegression model, FeatureScaler scaler = {})
      : identity_(std::move(identity)),
        labels_(std::move(labels)),
        hyper_(hyper),
        model_(std::move(model)),
        scaler_(std::move(scaler)) {}

  static std::pair<SoftmaxClassifier, TrainingTrace> train(std::string identity, std::vector<std::string> labels,
                                                           std::span<const ImageView> images,
                                                           std::span<const int> targets,
                                                           const SoftmaxBackendHyper& hyper) {
    FeatureScaler scaler;
    auto data = detail::pooled_dataset(images, targets, hyper.grid, hyper.standardize, scaler);
    auto result = train_softmax(data, labels.size(), hyper.gd);
    return {SoftmaxClassifier(std::move(identity), std::move(labels), hyper, std::move(result.model), std::move(scaler)),
            std::move(result.trace)};
  }

  std::string backend() const override { return "softmax"; }
  const std::string& identity() const override { return identity_; }
  const std::vector<std::string>& labels() const override { return labels_; }
  const SoftmaxRegression& model() const { return model_; }

  ProbabilityVector predict_proba(const Sample& sample) const override {
    return wpedl::predict_proba(model_, detail::pooled_input(sample.image, hyper_.grid, scaler_));
  }

  Checkpoint checkpoint() const {
    auto tensors = model_.parameters();
    scaler_.append_to(tensors);
    return {backend(), identity_, to_json(hyper_), labels_, "he_uniform", std::move(tensors)};
  }
  void save(const fs::path& path) const override { save_checkpoint(checkpoint(), path); }

  static SoftmaxClassifier from_checkpoint(const Checkpoint& ck) {
    auto hyper = softmax_hyper_from_json(ck.hyperparameters);
    auto tensors = ck.tensors;
    auto scaler = FeatureScaler::extract(tensors, hyper.standardize);
    auto model = SoftmaxRegression::from_tensors(std::move(tensors));
    const std::size_t dim = 3 * hyper.grid * hyper.grid;
    if (model.class_count() != ck.labels.size() || model.input_dim() != dim || (!scaler.empty() && scaler.mean.size() != dim))
      fail(ErrorCode::ShapeMismatch, "softmax checkpoint shapes disagree with its metadata");
    return SoftmaxClassifier(ck.identity, ck.labels, hyper, std::move(model), std::move(scaler));
  }

 private:
  std::string identity_;
  std::vector<std::string> labels_;
  SoftmaxBackendHyper hyper_;
  SoftmaxRegression model_;
  FeatureScaler scaler_;
};

struct CnnBackendHyper {
  GdHyper gd{0.02, 10, 32, 0.0, 0};
  CnnArch arch;
  std::size_t input_size = 32;  // images are pooled to input_size x input_size x 3
  bool standardize = true;

  bool operator==(const CnnBackendHyper&) const = default;
};

inline nlohmann::json to_json(const CnnBackendHyper& h) {
  auto j = to_json(h.gd);
  j["arch"] = to_json(h.arch);
  j["input_size"] = h.input_size;
  j["standardize"] = h.standardize;
  return j;
}

inline CnnBackendHyper cnn_hyper_from_json(const nlohmann::json& j) {
  detail::check_fields(j, {"lr", "epochs", "batch", "l2", "seed", "arch", "input_size", "standardize"}, "cnn hyperparameters");
  CnnBackendHyper h;
  h.gd = gd_hyper_from_json(j, h.gd);
  if (j.contains("arch")) h.arch = cnn_arch_from_json(j.at("arch"));
  h.input_size = j.value("input_size", h.input_size);
  h.standardize = j.value("standardize", h.standardize);
  if (h.input_size < 1) fail(ErrorCode::InvalidConfig, "cnn input_size must be >= 1");
  return h;
}

class CnnClassifier final : public ClassifierBackend {
 public:
  CnnClassifier(std::string identity, std::vector<std::string> labels, CnnBackendHyper hyper, Cnn model,
                FeatureScaler scaler = {})
      : identity_(std::move(identity)),
        labels_(std::move(labels)),
        hyper_(std::move(hyper)),
        model_(std::move(model)),
        scaler_(std::move(scaler)) {}

  static TensorShape input_shape(const CnnBackendHyper& h) { return {3, h.input_size, h.input_size}; }

  static std::pair<CnnClassifier, TrainingTrace> train(std::string identity, std::vector<std::string> labels,
                                                       std::span<const ImageView> images, std::span<const int> targets,
                                                       const CnnBackendHyper& hyper) {
    FeatureScaler scaler;
    auto data = detail::pooled_dataset(images, targets, hyper.input_size, hyper.standardize, scaler);
    auto result = train_cnn(data, input_shape(hyper), labels.size(), hyper.arch, hyper.gd);
    return {CnnClassifier(std::move(identity), std::move(labels), hyper, std::move(result.model), std::move(scaler)),
            std::move(result.trace)};
  }

  std::string backend() const override { return "cnn"; }
  const std::string& identity() const override { return identity_; }
  const std::vector<std::string>& labels() const override { return labels_; }
  const Cnn& model() const { return model_; }

  ProbabilityVector predict_proba(const Sample& sample) const override {
    return wpedl::predict_proba(model_, detail::pooled_input(sample.image, hyper_.input_size, scaler_));
  }

  Checkpoint checkpoint() const {
    auto tensors = model_.parameters();
    scaler_.append_to(tensors);
    return {backend(), identity_, to_json(hyper_), labels_, "he_uniform", std::move(tensors)};
  }
  void save(const fs::path& path) const override { save_checkpoint(checkpoint(), path); }

  static CnnClassifier from_checkpoint(const Checkpoint& ck) {
    auto hyper = cnn_hyper_from_json(ck.hyperparameters);
    auto tensors = ck.tensors;
    auto scaler = FeatureScaler::extract(tensors, hyper.standardize);
    if (!scaler.empty() && scaler.mean.size() != 3 * hyper.input_size * hyper.input_size)
      fail(ErrorCode::ShapeMismatch, "cnn checkpoint input scaling has the wrong size");
    auto model = Cnn::from_tensors(input_shape(hyper), ck.labels.size(), hyper.arch, std::move(tensors));
    return CnnClassifier(ck.identity, ck.labels, hyper, std::move(model), std::move(scaler));
  }

 private:
  std::string identity_;
  std::vector<std::string> labels_;
  CnnBackendHyper hyper_;
  Cnn model_;
  FeatureScaler scaler_;
};

// ---------------------------------------------------------------------------
// External probability files: "sample_id,p_<label1>,...,p_<labelC>"

/// Row-sum tolerance accepted from external files.
inline constexpr double kExternalRowTolerance = 1e-6;

inline void write_probability_csv(const fs::path& path, const std::vector<std::string>& labels,
                                  const std::vector<std::pair<std::string, ProbabilityVector>>& rows) {
  std::string text = "sample_id";
  for (const auto& l : labels) text += ",p_" + l;
  text += '\n';
  for (const auto& [id, pv] : rows) {
    if (pv.size() != labels.size()) fail(ErrorCode::ShapeMismatch, "probability row width differs from label count");
    text += id;
    for (double p : pv) text += "," + detail::format_double(p);
    text += '\n';
  }
  detail::write_text(path, text);
}

/// Frozen backend that replays stored probability vectors by sample id.
class ExternalBackend final : public ClassifierBackend {
 public:
  ExternalBackend(std::string identity, std::vector<std::string> labels,
                  std::vector<std::pair<std::string, ProbabilityVector>> rows)
      : identity_(std::move(identity)), labels_(std::move(labels)), order_() {
    for (auto& [id, pv] : rows) {
      if (!by_id_.emplace(id, std::move(pv)).second) fail(ErrorCode::DuplicateSample, "duplicate sample id '" + id + "'");
      order_.push_back(id);
    }
  }

  std::string backend() const override { return "external"; }
  const std::string& identity() const override { return identity_; }
  const std::vector<std::string>& labels() const override { return labels_; }
  std::size_t size() const { return by_id_.size(); }
  const std::vector<std::string>& sample_ids() const { return order_; }
  bool contains(const std::string& id) const { return by_id_.count(id) != 0; }

  ProbabilityVector predict_proba(const Sample& sample) const override {
    auto it = by_id_.find(sample.id);
    if (it == by_id_.end()) fail(ErrorCode::UnknownSample, identity_ + ": no stored prediction for '" + sample.id + "'");
    return it->second;
  }

  void save(const fs::path& path) const override {
    std::vector<std::pair<std::string, ProbabilityVector>> rows;
    for (const auto& id : order_) rows.emplace_back(id, by_id_.at(id));
    write_probability_csv(path, labels_, rows);
  }

 private:
  std::string identity_;
  std::vector<std::string> labels_;
  std::map<std::string, ProbabilityVector> by_id_;
  std::vector<std::string> order_;
};

/// Loads a probability CSV. Columns are reordered to `expected_labels`; rows whose
/// sum is off by more than 1e-9 (but within 1e-6) are renormalized.
inline ExternalBackend import_external(const fs::path& path, const std::vector<std::string>& expected_labels,
                                       std::string identity = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::MissingFile, path.string());
  if (identity.empty()) identity = path.stem().string();
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::MalformedCsv, path.string() + ": empty file");
  const auto head = detail::split_csv_line(line);
  if (head.empty() || head[0] != "sample_id") fail(ErrorCode::MalformedCsv, path.string() + ": first column must be sample_id");
  std::vector<std::string> file_labels;
  for (std::size_t c = 1; c < head.size(); ++c) {
    if (head[c].substr(0, 2) != "p_") fail(ErrorCode::MalformedCsv, path.string() + ": probability columns must start with p_");
    file_labels.emplace_back(head[c].substr(2));
  }
  if (std::set<std::string>(file_labels.begin(), file_labels.end()) !=
          std::set<std::string>(expected_labels.begin(), expected_labels.end()) ||
      file_labels.size() != expected_labels.size())
    fail(ErrorCode::LabelSetMismatch, path.string() + ": label columns do not match the expected label set");
  std::vector<std::size_t> column_of(expected_labels.size());
  for (std::size_t k = 0; k < expected_labels.size(); ++k)
    column_of[k] = static_cast<std::size_t>(std::find(file_labels.begin(), file_labels.end(), expected_labels[k]) -
                                            file_labels.begin());

  std::vector<std::pair<std::string, ProbabilityVector>> rows;
  std::set<std::string> seen;
  std::size_t line_no = 1, row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (cells.size() != head.size()) fail(ErrorCode::MalformedCsv, where + ": wrong number of columns");
    std::string id(cells[0]);
    if (!seen.insert(id).second) fail(ErrorCode::DuplicateSample, where + ": duplicate sample id '" + id + "'");
    std::vector<double> file_values(file_labels.size());
    double sum = 0.0;
    for (std::size_t c = 0; c < file_values.size(); ++c) {
      if (!detail::parse_double(cells[c + 1], file_values[c]) || !std::isfinite(file_values[c]))
        fail(ErrorCode::MalformedCsv, where + ": unreadable probability");
      if (file_values[c] < 0.0 || file_values[c] > 1.0)
        fail(ErrorCode::InvalidProbability, where + ": probability outside [0,1]");
      sum += file_values[c];
    }
    if (std::abs(sum - 1.0) > kExternalRowTolerance)
      fail(ErrorCode::RowSumViolation, where + ": row " + std::to_string(row) + " sums to " + std::to_string(sum));
    std::vector<double> probs(expected_labels.size());
    for (std::size_t k = 0; k < probs.size(); ++k) probs[k] = file_values[column_of[k]];
    if (std::abs(sum - 1.0) > ProbabilityVector::kSumTolerance)
      for (double& p : probs) p /= sum;
    rows.emplace_back(std::move(id), ProbabilityVector(std::move(probs)));
  }
  return ExternalBackend(std::move(identity), expected_labels, std::move(rows));
}

// ---------------------------------------------------------------------------

/// Loads any native checkpoint into the matching backend.
inline std::unique_ptr<ClassifierBackend> load_classifier(const fs::path& path) {
  const auto ck = load_checkpoint(path);
  if (ck.backend == "softmax") return std::make_unique<SoftmaxClassifier>(SoftmaxClassifier::from_checkpoint(ck));
  if (ck.backend == "cnn") return std::make_unique<CnnClassifier>(CnnClassifier::from_checkpoint(ck));
  fail(ErrorCode::InvalidConfig, "checkpoint " + path.string() + " names unknown backend '" + ck.backend + "'");
}

}  // namespace wpedl
