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
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "wpedl/error.hpp"
#include "wpedl/probability.hpp"

namespace wpedl {

/// counts[t][p]: rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::size_t> counts;

  std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * classes + pred]; }
  std::size_t total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }
  std::size_t trace() const {
    std::size_t t = 0;
    for (std::size_t c = 0; c < classes; ++c) t += at(c, c);
    return t;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, std::size_t classes) {
  if (truth.size() != pred.size()) fail(ErrorCode::LengthMismatch, "truth and prediction lengths differ");
  if (truth.empty()) fail(ErrorCode::EmptyInput, "confusion matrix of zero samples");
  ConfusionMatrix cm{classes, std::vector<std::size_t>(classes * classes, 0)};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || pred[i] < 0 || static_cast<std::size_t>(truth[i]) >= classes ||
        static_cast<std::size_t>(pred[i]) >= classes)
      fail(ErrorCode::LabelOutOfRange, "label out of range at sample " + std::to_string(i));
    ++cm.counts[static_cast<std::size_t>(truth[i]) * classes + static_cast<std::size_t>(pred[i])];
  }
  return cm;
}

inline double accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) fail(ErrorCode::EmptyInput, "accuracy of an empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

enum class Averaging { Micro, Macro };

inline std::string to_string(Averaging a) { return a == Averaging::Micro ? "micro" : "macro"; }

inline Averaging parse_averaging(const std::string& s) {
  if (s == "micro") return Averaging::Micro;
  if (s == "macro") return Averaging::Macro;
  fail(ErrorCode::InvalidConfig, "unknown averaging mode '" + s + "'");
}

struct PrecisionRecallF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Per-class values; a 0/0 ratio is reported as 0 with a note.
struct PerClassScores {
  std::vector<PrecisionRecallF1> classes;
  std::vector<std::string> notes;
};

namespace detail {
inline double ratio_or_zero(double num, double den) { return den == 0.0 ? 0.0 : num / den; }
inline double harmonic(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }
}  // namespace detail

inline PerClassScores per_class_scores(const ConfusionMatrix& cm) {
  PerClassScores out;
  for (std::size_t c = 0; c < cm.classes; ++c) {
    double tp = static_cast<double>(cm.at(c, c)), predicted = 0, actual = 0;
    for (std::size_t k = 0; k < cm.classes; ++k) {
      predicted += static_cast<double>(cm.at(k, c));
      actual += static_cast<double>(cm.at(c, k));
    }
    if (predicted == 0) out.notes.push_back("class " + std::to_string(c) + ": no predictions, precision set to 0");
    if (actual == 0) out.notes.push_back("class " + std::to_string(c) + ": no true samples, recall set to 0");
    PrecisionRecallF1 s;
    s.precision = detail::ratio_or_zero(tp, predicted);
    s.recall = detail::ratio_or_zero(tp, actual);
    s.f1 = detail::harmonic(s.precision, s.recall);
    out.classes.push_back(s);
  }
  return out;
}

/// Micro pools TP/FP/FN over classes; macro averages the per-class values
/// (macro F1 is the mean of per-class F1 scores).
inline PrecisionRecallF1 precision_recall_f1(const ConfusionMatrix& cm, Averaging mode) {
  const auto total = cm.total();
  if (total == 0) fail(ErrorCode::EmptyInput, "precision/recall of an empty confusion matrix");
  if (mode == Averaging::Micro) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t c = 0; c < cm.classes; ++c) {
      for (std::size_t k = 0; k < cm.classes; ++k) {
        const auto n = static_cast<double>(cm.at(c, k));
        if (c == k) tp += n;
        else {
          fn += n;  // true c, predicted k
          fp += n;  // predicted k, not k
        }
      }
    }
    PrecisionRecallF1 s;
    s.precision = detail::ratio_or_zero(tp, tp + fp);
    s.recall = detail::ratio_or_zero(tp, tp + fn);
    s.f1 = detail::harmonic(s.precision, s.recall);
    return s;
  }
  const auto per = per_class_scores(cm);
  PrecisionRecallF1 s;
  for (const auto& c : per.classes) {
    s.precision += c.precision;
    s.recall += c.recall;
    s.f1 += c.f1;
  }
  const auto n = static_cast<double>(cm.classes);
  s.precision /= n;
  s.recall /= n;
  s.f1 /= n;
  return s;
}

/// Area under the ROC curve of `positive_class` vs the rest, via midranks;
/// equals P(score+ > score-) + P(tie)/2. Requires both groups nonempty.
inline double binary_auc(std::span<const double> scores, std::span<const int> truth, int positive_class) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t npos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (truth[order[k]] == positive_class) {
        rank_sum += midrank;
        ++npos;
      }
    i = j;
  }
  const double p = static_cast<double>(npos), q = static_cast<double>(n - npos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

struct AucResult {
  double auc = 0.0;
  std::vector<double> per_class;  // NaN where skipped
  std::vector<std::size_t> skipped;
};

/// One-vs-rest macro AUC. Classes lacking positives or negatives are skipped.
inline AucResult auc_ovr_macro(std::span<const int> truth, std::span<const ProbabilityVector> probs) {
  if (truth.size() != probs.size()) fail(ErrorCode::LengthMismatch, "truth and probability counts differ");
  if (truth.empty()) fail(ErrorCode::EmptyInput, "AUC of zero samples");
  const std::size_t C = probs.front().size();
  AucResult out;
  out.per_class.assign(C, std::numeric_limits<double>::quiet_NaN());
  std::vector<double> scores(truth.size());
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t npos = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (probs[i].size() != C) fail(ErrorCode::ShapeMismatch, "probability vectors differ in length");
      scores[i] = probs[i][c];
      npos += truth[i] == static_cast<int>(c);
    }
    if (npos == 0 || npos == truth.size()) {
      out.skipped.push_back(c);
      continue;
    }
    out.per_class[c] = binary_auc(scores, truth, static_cast<int>(c));
    sum += out.per_class[c];
    ++used;
  }
  if (used == 0) fail(ErrorCode::SingleClass, "AUC undefined: every sample belongs to one class");
  out.auc = sum / static_cast<double>(used);
  return out;
}

/// The weighting metric set of one classifier plus its reported accuracy.
struct ClassifierScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  double accuracy = 0.0;
  Averaging mode = Averaging::Macro;

  bool operator==(const ClassifierScore&) const = default;
};

inline nlohmann::json to_json(const ClassifierScore& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1},
          {"auc", s.auc},             {"accuracy", s.accuracy}, {"averaging", to_string(s.mode)}};
}

inline ClassifierScore classifier_score_from_json(const nlohmann::json& j) {
  ClassifierScore s;
  s.precision = j.at("precision").get<double>();
  s.recall = j.at("recall").get<double>();
  s.f1 = j.at("f1").get<double>();
  s.auc = j.at("auc").get<double>();
  s.accuracy = j.value("accuracy", 0.0);
  s.mode = parse_averaging(j.value("averaging", std::string("macro")));
  return s;
}

/// Everything computed when scoring one set of probability predictions.
struct Evaluation {
  ConfusionMatrix confusion;
  ClassifierScore score;
  PerClassScores per_class;
  AucResult auc;
  std::size_t samples = 0;
};

inline std::vector<int> argmax_labels(std::span<const ProbabilityVector> probs) {
  std::vector<int> out;
  out.reserve(probs.size());
  for (const auto& p : probs) out.push_back(static_cast<int>(p.argmax()));
  return out;
}

inline Evaluation evaluate_predictions(std::span<const int> truth, std::span<const ProbabilityVector> probs,
                                       std::size_t classes, Averaging mode) {
  Evaluation e;
  const auto pred = argmax_labels(probs);
  e.samples = truth.size();
  e.confusion = confusion(truth, pred, classes);
  const auto prf = precision_recall_f1(e.confusion, mode);
  e.per_class = per_class_scores(e.confusion);
  e.auc = auc_ovr_macro(truth, probs);
  e.score = {prf.precision, prf.recall, prf.f1, e.auc.auc, accuracy(e.confusion), mode};
  return e;
}

inline nlohmann::json to_json(const ConfusionMatrix& cm) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t t = 0; t < cm.classes; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < cm.classes; ++p) row.push_back(cm.at(t, p));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json to_json(const Evaluation& e, const std::vector<std::string>& labels) {
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t c = 0; c < e.per_class.classes.size(); ++c) {
    const auto& s = e.per_class.classes[c];
    nlohmann::json auc = std::isnan(e.auc.per_class[c]) ? nlohmann::json(nullptr) : nlohmann::json(e.auc.per_class[c]);
    per.push_back({{"label", c < labels.size() ? labels[c] : std::to_string(c)},
                   {"precision", s.precision},
                   {"recall", s.recall},
                   {"f1", s.f1},
                   {"auc", auc}});
  }
  return {{"samples", e.samples},
          {"labels", labels},
          {"confusion_matrix", to_json(e.confusion)},
          {"averaged", to_json(e.score)},
          {"per_class", std::move(per)},
          {"notes", e.per_class.notes}};
}

}  // namespace wpedl
