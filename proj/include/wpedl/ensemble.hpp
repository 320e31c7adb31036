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
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "wpedl/error.hpp"
#include "wpedl/metrics.hpp"
#include "wpedl/probability.hpp"

namespace wpedl {

/// Classifier weight: sum of tanh over {precision, recall, f1, auc}.
/// Accuracy is reported alongside but does not enter the weight.
inline double compute_weight(const ClassifierScore& s) {
  const double metrics[] = {s.precision, s.recall, s.f1, s.auc};
  double w = 0.0;
  for (double m : metrics) {
    if (!(m >= 0.0 && m <= 1.0)) fail(ErrorCode::MetricOutOfRange, "weighting metric " + std::to_string(m) + " outside [0,1]");
    w += std::tanh(m);
  }
  return w;
}

struct WeightedMember {
  std::string identity;
  double weight = 0.0;
  std::optional<ClassifierScore> score;  // absent when the weight was supplied directly
};

/// Ordered pool of classifier weights.
class EnsembleWeights {
 public:
  EnsembleWeights() = default;

  static EnsembleWeights from_scores(const std::vector<std::pair<std::string, ClassifierScore>>& scores) {
    EnsembleWeights w;
    for (const auto& [id, s] : scores) w.add({id, compute_weight(s), s});
    return w;
  }

  static EnsembleWeights explicit_weights(const std::vector<std::pair<std::string, double>>& weights) {
    EnsembleWeights w;
    for (const auto& [id, v] : weights) {
      if (!(v >= 0.0) || !std::isfinite(v)) fail(ErrorCode::InvalidConfig, "weight for '" + id + "' must be finite and >= 0");
      w.add({id, v, std::nullopt});
    }
    return w;
  }

  const std::vector<WeightedMember>& members() const noexcept { return members_; }
  std::size_t size() const noexcept { return members_.size(); }
  double total() const noexcept {
    double t = 0.0;
    for (const auto& m : members_) t += m.weight;
    return t;
  }

  std::size_t index_of(const std::string& identity) const {
    for (std::size_t i = 0; i < members_.size(); ++i)
      if (members_[i].identity == identity) return i;
    fail(ErrorCode::UnknownIdentity, "no classifier '" + identity + "' in the pool");
  }

  /// Members named in `identities`, kept in pool order.
  EnsembleWeights subset(const std::set<std::string>& identities) const {
    for (const auto& id : identities) index_of(id);
    EnsembleWeights w;
    for (const auto& m : members_)
      if (identities.count(m.identity)) w.members_.push_back(m);
    return w;
  }

  EnsembleWeights scaled(double lambda) const {
    EnsembleWeights w = *this;
    for (auto& m : w.members_) m.weight *= lambda;
    return w;
  }

 private:
  void add(WeightedMember m) {
    for (const auto& existing : members_)
      if (existing.identity == m.identity) fail(ErrorCode::DuplicateEntry, "duplicate classifier '" + m.identity + "'");
    members_.push_back(std::move(m));
  }

  std::vector<WeightedMember> members_;
};

enum class FusionStrategy {
  WeightedMean,  // sum_i w_i P_i / sum_i w_i, then argmax over classes
  ClassMax,      // per class, max over classifiers of (w_i / sum w) P_i, renormalized, then argmax
};

inline std::string to_string(FusionStrategy s) { return s == FusionStrategy::ClassMax ? "class_max" : "weighted_mean"; }

inline FusionStrategy parse_fusion_strategy(const std::string& s) {
  if (s == "weighted_mean") return FusionStrategy::WeightedMean;
  if (s == "class_max") return FusionStrategy::ClassMax;
  fail(ErrorCode::InvalidConfig, "unknown fusion strategy '" + s + "'");
}

struct EnsembleDecision {
  ProbabilityVector fused;
  int predicted = 0;
  std::vector<std::vector<double>> contributions;  // (w_i / sum w) * P_i per classifier
};

/// Fuses one sample's per-classifier vectors (ordered as the weights).
inline EnsembleDecision fuse(const EnsembleWeights& weights, std::span<const ProbabilityVector> vectors,
                             FusionStrategy strategy = FusionStrategy::WeightedMean) {
  if (vectors.size() != weights.size())
    fail(ErrorCode::LengthMismatch, "got " + std::to_string(vectors.size()) + " vectors for " +
                                        std::to_string(weights.size()) + " weights");
  const double total = weights.total();
  if (!(total > 0.0)) fail(ErrorCode::ZeroTotalWeight, "ensemble weights sum to zero");
  const std::size_t C = vectors.front().size();
  for (const auto& v : vectors) {
    if (v.size() != C) fail(ErrorCode::LengthMismatch, "probability vectors differ in length");
    if (v.size() < 2) fail(ErrorCode::InvalidProbability, "invalid probability vector");
  }

  EnsembleDecision d;
  std::vector<double> fused(C, 0.0);
  d.contributions.reserve(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const double coef = weights.members()[i].weight / total;
    std::vector<double> contrib(C);
    for (std::size_t c = 0; c < C; ++c) contrib[c] = coef * vectors[i][c];
    d.contributions.push_back(std::move(contrib));
  }
  if (strategy == FusionStrategy::WeightedMean) {
    for (std::size_t c = 0; c < C; ++c)
      for (const auto& contrib : d.contributions) fused[c] += contrib[c];
  } else {
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      for (const auto& contrib : d.contributions) fused[c] = std::max(fused[c], contrib[c]);
      z += fused[c];
    }
    for (auto& v : fused) v /= z;
  }
  // Clamp accumulated rounding so the result is always a valid probability vector.
  for (auto& v : fused) v = std::clamp(v, 0.0, 1.0);
  d.fused = ProbabilityVector(std::move(fused));
  d.predicted = static_cast<int>(d.fused.argmax());
  return d;
}

struct BatchFusion {
  std::vector<EnsembleDecision> decisions;
  std::optional<Evaluation> evaluation;  // present when truth was given and samples exist

  std::vector<ProbabilityVector> fused_vectors() const {
    std::vector<ProbabilityVector> out;
    out.reserve(decisions.size());
    for (const auto& d : decisions) out.push_back(d.fused);
    return out;
  }
  std::vector<int> predictions() const {
    std::vector<int> out;
    for (const auto& d : decisions) out.push_back(d.predicted);
    return out;
  }
};

/// Fuses every sample; `vectors[j][i]` is classifier i's vector for sample j.
inline BatchFusion fuse_batch(const EnsembleWeights& weights, const std::vector<std::vector<ProbabilityVector>>& vectors,
                              std::span<const int> truth = {}, Averaging mode = Averaging::Macro,
                              FusionStrategy strategy = FusionStrategy::WeightedMean) {
  BatchFusion out;
  for (std::size_t j = 0; j < vectors.size(); ++j) {
    if (vectors[j].size() != weights.size())
      fail(ErrorCode::ShapeMismatch, "ragged input: sample " + std::to_string(j) + " has " +
                                         std::to_string(vectors[j].size()) + " classifier vectors");
    out.decisions.push_back(fuse(weights, vectors[j], strategy));
  }
  if (!vectors.empty() && !truth.empty()) {
    if (truth.size() != vectors.size()) fail(ErrorCode::LengthMismatch, "truth length differs from sample count");
    const auto fused = out.fused_vectors();
    out.evaluation = evaluate_predictions(truth, fused, fused.front().size(), mode);
  }
  return out;
}

struct AblationRow {
  std::vector<std::string> subset;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::vector<std::string> warnings;
};

/// Re-fuses the test predictions for each subset of the pool, keeping each
/// member's own weight. `vectors[j][i]` follows the pool order of `weights`.
inline AblationTable ablate(const EnsembleWeights& weights, const std::vector<std::vector<ProbabilityVector>>& vectors,
                            std::span<const int> truth, const std::vector<std::vector<std::string>>& subsets,
                            Averaging mode = Averaging::Macro, FusionStrategy strategy = FusionStrategy::WeightedMean) {
  AblationTable table;
  std::vector<std::set<std::string>> seen;
  for (const auto& raw : subsets) {
    if (raw.empty()) fail(ErrorCode::InvalidConfig, "ablation subset is empty");
    std::set<std::string> ids(raw.begin(), raw.end());
    if (ids.size() != raw.size()) table.warnings.push_back("subset lists a classifier twice; duplicates ignored");
    if (std::find(seen.begin(), seen.end(), ids) != seen.end()) {
      table.warnings.push_back("duplicate subset skipped");
      continue;
    }
    seen.push_back(ids);
    const auto sub = weights.subset(ids);
    if (!(sub.total() > 0.0)) {
      std::string names;
      for (const auto& m : sub.members()) names += (names.empty() ? "" : ",") + m.identity;
      table.warnings.push_back("subset {" + names + "} has zero total weight; skipped");
      continue;
    }
    std::vector<std::size_t> cols;
    for (const auto& m : sub.members()) cols.push_back(weights.index_of(m.identity));
    std::vector<std::vector<ProbabilityVector>> picked(vectors.size());
    for (std::size_t j = 0; j < vectors.size(); ++j)
      for (auto c : cols) picked[j].push_back(vectors[j].at(c));
    const auto batch = fuse_batch(sub, picked, truth, mode, strategy);
    AblationRow row;
    for (const auto& m : sub.members()) row.subset.push_back(m.identity);
    if (batch.evaluation) {
      const auto& s = batch.evaluation->score;
      row.accuracy = s.accuracy;
      row.precision = s.precision;
      row.recall = s.recall;
      row.f1 = s.f1;
      row.auc = s.auc;
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

/// Every singleton, then growing prefixes of the pool up to the full set.
inline std::vector<std::vector<std::string>> default_ablation_subsets(const EnsembleWeights& weights) {
  std::vector<std::vector<std::string>> out;
  for (const auto& m : weights.members()) out.push_back({m.identity});
  std::vector<std::string> prefix;
  for (const auto& m : weights.members()) {
    prefix.push_back(m.identity);
    if (prefix.size() >= 2) out.push_back(prefix);
  }
  return out;
}

inline nlohmann::json to_json(const AblationTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"subset", r.subset},
                    {"accuracy", r.accuracy},
                    {"precision", r.precision},
                    {"recall", r.recall},
                    {"f1", r.f1},
                    {"auc", r.auc}});
  return {{"rows", std::move(rows)}, {"warnings", t.warnings}};
}

inline nlohmann::json to_json(const EnsembleWeights& w, Averaging mode, const std::string& validation_hash) {
  nlohmann::json classifiers = nlohmann::json::object();
  for (const auto& m : w.members()) {
    nlohmann::json entry = {{"w", m.weight}};
    entry["metrics"] = m.score ? to_json(*m.score) : nlohmann::json(nullptr);
    classifiers[m.identity] = std::move(entry);
  }
  nlohmann::json order = nlohmann::json::array();
  for (const auto& m : w.members()) order.push_back(m.identity);
  return {{"averaging", to_string(mode)},
          {"validation_hash", validation_hash},
          {"order", std::move(order)},
          {"total", w.total()},
          {"classifiers", std::move(classifiers)}};
}

/// Reads a weights file; metrics present are re-weighted and checked against the stored w.
inline EnsembleWeights ensemble_weights_from_json(const nlohmann::json& j) {
  std::vector<std::string> order;
  if (j.contains("order")) {
    order = j.at("order").get<std::vector<std::string>>();
  } else {
    for (const auto& [id, _] : j.at("classifiers").items()) order.push_back(id);
  }
  std::vector<std::pair<std::string, double>> explicit_w;
  std::vector<std::pair<std::string, ClassifierScore>> scored;
  for (const auto& id : order) {
    const auto& entry = j.at("classifiers").at(id);
    if (entry.contains("metrics") && !entry.at("metrics").is_null()) {
      auto score = classifier_score_from_json(entry.at("metrics"));
      if (entry.contains("w") && std::abs(compute_weight(score) - entry.at("w").get<double>()) > 1e-12)
        fail(ErrorCode::InvalidConfig, "weight for '" + id + "' disagrees with its metrics");
      scored.emplace_back(id, score);
    } else {
      explicit_w.emplace_back(id, entry.at("w").get<double>());
    }
  }
  if (!scored.empty() && !explicit_w.empty())
    fail(ErrorCode::InvalidConfig, "weights file mixes metric-derived and explicit weights");
  return scored.empty() ? EnsembleWeights::explicit_weights(explicit_w) : EnsembleWeights::from_scores(scored);
}

}  // namespace wpedl
