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

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "wpedl/metrics.hpp"

using namespace wpedl;

namespace {

ConfusionMatrix from_rows(const std::vector<std::vector<std::size_t>>& rows) {
  ConfusionMatrix cm{rows.size(), {}};
  for (const auto& r : rows) cm.counts.insert(cm.counts.end(), r.begin(), r.end());
  return cm;
}

std::vector<std::vector<std::size_t>> random_rows(std::mt19937_64& rng, std::size_t C) {
  std::vector<std::vector<std::size_t>> rows(C, std::vector<std::size_t>(C));
  for (auto& r : rows)
    for (auto& v : r) v = rng() % 4 == 0 ? 0 : rng() % 50;
  rows[0][0] += 1;
  return rows;
}

ProbabilityVector random_probs(std::mt19937_64& rng, std::size_t C, bool coarse) {
  std::vector<double> p(C);
  double z = 0;
  for (auto& v : p) z += v = coarse ? static_cast<double>(1 + rng() % 3) : 0.01 + static_cast<double>(rng() % 1000);
  for (auto& v : p) v /= z;
  return ProbabilityVector(p);
}

}  // namespace

TEST(Confusion, PerfectPredictionsAreDiagonal) {
  std::vector<int> y = {0, 1, 2, 2, 1, 0, 3};
  auto cm = confusion(y, y, 4);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t p = 0; p < 4; ++p) {
      if (t != p) {
        EXPECT_EQ(cm.at(t, p), 0u);
      }
    }
  EXPECT_EQ(cm.trace(), y.size());
  EXPECT_DOUBLE_EQ(accuracy(cm), 1.0);
}

TEST(Confusion, Errors) {
  std::vector<int> a = {0, 1}, b = {0};
  EXPECT_THROW(confusion(a, b, 2), Error);
  std::vector<int> empty;
  try {
    confusion(empty, empty, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyInput);
  }
  std::vector<int> bad = {0, 5};
  try {
    confusion(bad, bad, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LabelOutOfRange);
  }
}

TEST(Accuracy, ReportedCounts) {
  // 1716 of 1800 bearing test images on the diagonal.
  auto bearing = from_rows({{1716, 84}, {0, 0}});
  EXPECT_NEAR(accuracy(bearing), 0.95333, 5e-6);
  EXPECT_DOUBLE_EQ(accuracy(bearing), 1716.0 / 1800.0);
  // 9389 of 9500 combined-dataset images.
  auto combined = from_rows({{9389, 111}, {0, 0}});
  EXPECT_NEAR(accuracy(combined), 0.98832, 5e-6);
}

TEST(PrecisionRecall, WorkedMacroExample) {
  auto cm = from_rows({{8, 2}, {4, 6}});
  auto s = precision_recall_f1(cm, Averaging::Macro);
  EXPECT_NEAR(s.precision, (8.0 / 12 + 6.0 / 8) / 2, 1e-15);
  EXPECT_NEAR(s.precision, 0.70833, 5e-6);
  EXPECT_NEAR(s.recall, 0.7, 1e-15);
  EXPECT_NEAR(s.f1, 0.69697, 5e-6);
  auto per = per_class_scores(cm);
  EXPECT_NEAR(per.classes[0].f1, 0.72727, 5e-6);
  EXPECT_NEAR(per.classes[1].f1, 0.66667, 5e-6);
}

TEST(PrecisionRecall, PerfectDiagonalBothModes) {
  auto cm = from_rows({{5, 0}, {0, 5}});
  for (auto mode : {Averaging::Micro, Averaging::Macro}) {
    auto s = precision_recall_f1(cm, mode);
    EXPECT_EQ(s.precision, 1.0);
    EXPECT_EQ(s.recall, 1.0);
    EXPECT_EQ(s.f1, 1.0);
  }
}

TEST(PrecisionRecall, ZeroDivisionIsZeroWithNote) {
  auto cm = from_rows({{3, 0, 0}, {2, 0, 0}, {0, 0, 4}});
  auto per = per_class_scores(cm);
  EXPECT_EQ(per.classes[1].precision, 0.0);
  EXPECT_FALSE(per.notes.empty());
}

TEST(PrecisionRecall, MatchesCountingOracle) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t C = 2 + rng() % 5;
    auto rows = random_rows(rng, C);
    auto cm = from_rows(rows);
    auto ref = oracle::counting_oracle(rows);
    auto micro = precision_recall_f1(cm, Averaging::Micro);
    auto macro = precision_recall_f1(cm, Averaging::Macro);
    EXPECT_DOUBLE_EQ(micro.precision, ref.micro_p);
    EXPECT_DOUBLE_EQ(micro.recall, ref.micro_r);
    EXPECT_DOUBLE_EQ(micro.f1, ref.micro_f1);
    EXPECT_NEAR(macro.precision, ref.macro_p, 1e-15);
    EXPECT_NEAR(macro.recall, ref.macro_r, 1e-15);
    EXPECT_NEAR(macro.f1, ref.macro_f1, 1e-15);
    // Single-label multiclass: micro precision = micro recall = accuracy.
    EXPECT_DOUBLE_EQ(micro.precision, accuracy(cm));
    EXPECT_DOUBLE_EQ(micro.recall, accuracy(cm));
  }
}

TEST(Auc, WorkedSixSampleCase) {
  std::vector<double> s = {.9, .8, .7, .6, .55, .5};
  std::vector<int> y = {1, 1, 0, 1, 0, 0};
  std::vector<ProbabilityVector> probs;
  for (double v : s) probs.emplace_back(std::vector<double>{1 - v, v});
  EXPECT_NEAR(binary_auc(s, y, 1), 8.0 / 9.0, 1e-15);
  // One-vs-rest over two classes: both columns give 8/9.
  EXPECT_NEAR(auc_ovr_macro(y, probs).auc, 8.0 / 9.0, 1e-15);
}

TEST(Auc, PerfectAndUninformative) {
  std::vector<int> y = {0, 0, 1, 1, 2, 2};
  std::vector<ProbabilityVector> perfect, flat;
  for (int c : y) {
    std::vector<double> p(3, 0.1);
    p[static_cast<std::size_t>(c)] = 0.8;
    perfect.emplace_back(p);
    flat.emplace_back(std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3});
  }
  EXPECT_DOUBLE_EQ(auc_ovr_macro(y, perfect).auc, 1.0);
  auto r = auc_ovr_macro(y, flat);
  EXPECT_DOUBLE_EQ(r.auc, 0.5);
  for (double v : r.per_class) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Auc, SkipsAbsentClassesAndRejectsSingleClass) {
  std::vector<int> y = {0, 0, 1, 1};
  std::vector<ProbabilityVector> p(4, ProbabilityVector(std::vector<double>{0.2, 0.3, 0.5}));
  auto r = auc_ovr_macro(y, p);
  EXPECT_EQ(r.skipped, std::vector<std::size_t>{2});
  std::vector<int> one = {1, 1, 1, 1};
  try {
    auc_ovr_macro(one, p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingleClass);
  }
}

TEST(Auc, MatchesPairCountingOracle) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t C = 2 + rng() % 4, n = C + 2 + rng() % 60;
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i < C ? i : rng() % C);
    std::vector<ProbabilityVector> p;
    for (std::size_t i = 0; i < n; ++i) p.push_back(random_probs(rng, C, trial % 2 == 0));
    auto r = auc_ovr_macro(y, p);
    double sum = 0;
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<double> s;
      std::vector<bool> pos;
      for (std::size_t i = 0; i < n; ++i) {
        s.push_back(p[i][c]);
        pos.push_back(y[i] == static_cast<int>(c));
      }
      const double ref = oracle::pair_counting_auc(s, pos);
      EXPECT_NEAR(r.per_class[c], ref, 1e-12);
      sum += ref;
    }
    EXPECT_NEAR(r.auc, sum / static_cast<double>(C), 1e-12);
  }
}

TEST(Metrics, PermutationInvariance) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t C = 3 + rng() % 3, n = 40;
    std::vector<int> y(n);
    std::vector<ProbabilityVector> p;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(i % C);
      p.push_back(random_probs(rng, C, false));
    }
    auto base = evaluate_predictions(y, p, C, Averaging::Macro);

    // Reorder samples.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> y2;
    std::vector<ProbabilityVector> p2;
    for (auto i : order) {
      y2.push_back(y[i]);
      p2.push_back(p[i]);
    }
    auto shuffled = evaluate_predictions(y2, p2, C, Averaging::Macro);
    EXPECT_EQ(shuffled.confusion, base.confusion);
    EXPECT_NEAR(shuffled.score.auc, base.score.auc, 1e-12);

    // Relabel classes.
    std::vector<std::size_t> perm(C);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> y3;
    std::vector<ProbabilityVector> p3;
    for (std::size_t i = 0; i < n; ++i) {
      y3.push_back(static_cast<int>(perm[static_cast<std::size_t>(y[i])]));
      std::vector<double> q(C);
      for (std::size_t c = 0; c < C; ++c) q[perm[c]] = p[i][c];
      p3.emplace_back(q);
    }
    auto relabeled = evaluate_predictions(y3, p3, C, Averaging::Macro);
    for (std::size_t t = 0; t < C; ++t)
      for (std::size_t q = 0; q < C; ++q) EXPECT_EQ(relabeled.confusion.at(perm[t], perm[q]), base.confusion.at(t, q));
    EXPECT_NEAR(relabeled.score.accuracy, base.score.accuracy, 1e-12);
    EXPECT_NEAR(relabeled.score.precision, base.score.precision, 1e-12);
    EXPECT_NEAR(relabeled.score.recall, base.score.recall, 1e-12);
    EXPECT_NEAR(relabeled.score.f1, base.score.f1, 1e-12);
    EXPECT_NEAR(relabeled.score.auc, base.score.auc, 1e-12);
  }
}

TEST(Metrics, MicroF1IsHarmonicMean) {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    auto cm = from_rows(random_rows(rng, 4));
    auto s = precision_recall_f1(cm, Averaging::Micro);
    EXPECT_NEAR(s.f1, 2 * s.precision * s.recall / (s.precision + s.recall), 1e-9);
  }
}
