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
#include <cmath>
#include <numeric>
#include <random>

#include "wpedl/ensemble.hpp"

using namespace wpedl;

namespace {

ProbabilityVector pv(std::vector<double> v) { return ProbabilityVector(std::move(v)); }

ProbabilityVector random_pv(std::mt19937_64& rng, std::size_t C) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(C);
  double z = 0;
  for (auto& v : p) z += v = u(rng) + 1e-3;
  for (auto& v : p) v /= z;
  return ProbabilityVector(p);
}

ClassifierScore score(double p, double r, double f, double a) { return {p, r, f, a, 0.0, Averaging::Macro}; }

EnsembleWeights weights_of(std::vector<double> w) {
  std::vector<std::pair<std::string, double>> named;
  for (std::size_t i = 0; i < w.size(); ++i) named.emplace_back("c" + std::to_string(i), w[i]);
  return EnsembleWeights::explicit_weights(named);
}

}  // namespace

TEST(Weight, Examples) {
  EXPECT_EQ(compute_weight(score(0, 0, 0, 0)), 0.0);
  // tanh written out as (e^x - e^-x) / (e^x + e^-x).
  auto th = [](double x) { return (std::exp(x) - std::exp(-x)) / (std::exp(x) + std::exp(-x)); };
  EXPECT_NEAR(compute_weight(score(1, 1, 1, 1)), 4 * th(1.0), 1e-15);
  EXPECT_NEAR(compute_weight(score(1, 1, 1, 1)), 3.0463766, 1e-7);
  EXPECT_NEAR(compute_weight(score(.5, .5, .5, .5)), 4 * th(0.5), 1e-15);
  EXPECT_NEAR(compute_weight(score(.5, .5, .5, .5)), 1.8484686, 1e-7);
  EXPECT_NEAR(compute_weight(score(.9, .8, .7, .95)), th(.9) + th(.8) + th(.7) + th(.95), 1e-15);
}

TEST(Weight, RejectsOutOfRange) {
  try {
    compute_weight(score(1.2, 0, 0, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MetricOutOfRange);
  }
  EXPECT_THROW(compute_weight(score(0, -0.1, 0, 0)), Error);
}

TEST(Weight, StrictlyIncreasingInEachMetric) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    double m[4] = {u(rng), u(rng), u(rng), u(rng)};
    const double w0 = compute_weight(score(m[0], m[1], m[2], m[3]));
    EXPECT_GE(w0, 0.0);
    EXPECT_LE(w0, 4 * std::tanh(1.0));
    const int k = trial % 4;
    m[k] = std::min(1.0, m[k] + 1e-3 + (1.0 - m[k]) * u(rng));
    EXPECT_GT(compute_weight(score(m[0], m[1], m[2], m[3])), w0);
  }
}

TEST(Fuse, WorkedExamples) {
  auto single = fuse(weights_of({2.5}), std::vector{pv({0.2, 0.3, 0.5})});
  EXPECT_EQ(single.fused, pv({0.2, 0.3, 0.5}));
  EXPECT_EQ(single.predicted, 2);

  auto d = fuse(weights_of({3, 1}), std::vector{pv({0.9, 0.1}), pv({0.3, 0.7})});
  EXPECT_NEAR(d.fused[0], 0.75, 1e-15);
  EXPECT_NEAR(d.fused[1], 0.25, 1e-15);
  EXPECT_EQ(d.predicted, 0);
  ASSERT_EQ(d.contributions.size(), 2u);
  EXPECT_NEAR(d.contributions[0][0], 0.675, 1e-15);

  auto tie = fuse(weights_of({1, 1}), std::vector{pv({1, 0}), pv({0, 1})});
  EXPECT_EQ(tie.fused, pv({0.5, 0.5}));
  EXPECT_EQ(tie.predicted, 0);
}

TEST(Fuse, Errors) {
  try {
    fuse(weights_of({0, 0}), std::vector{pv({0.5, 0.5}), pv({0.5, 0.5})});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroTotalWeight);
  }
  EXPECT_THROW(fuse(weights_of({1, 1}), std::vector{pv({0.5, 0.5}), pv({0.2, 0.3, 0.5})}), Error);
  EXPECT_THROW(fuse(weights_of({1, 1}), std::vector{pv({0.5, 0.5})}), Error);
}

TEST(Fuse, AlgebraicProperties) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t K = 1 + rng() % 6, C = 2 + rng() % 6;
    std::vector<double> w(K);
    for (auto& v : w) v = u(rng);
    w[0] += 0.01;
    std::vector<ProbabilityVector> vs;
    for (std::size_t i = 0; i < K; ++i) vs.push_back(random_pv(rng, C));
    const auto weights = weights_of(w);
    const auto d = fuse(weights, vs);

    double sum = 0;
    for (std::size_t c = 0; c < C; ++c) {
      double lo = 1, hi = 0;
      for (const auto& v : vs) {
        lo = std::min(lo, v[c]);
        hi = std::max(hi, v[c]);
      }
      EXPECT_GE(d.fused[c], lo - 1e-12);
      EXPECT_LE(d.fused[c], hi + 1e-12);
      sum += d.fused[c];
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);

    const double lambda = std::exp(std::uniform_real_distribution<double>(-5, 5)(rng));
    const auto scaled = fuse(weights.scaled(lambda), vs);
    for (std::size_t c = 0; c < C; ++c) EXPECT_NEAR(scaled.fused[c], d.fused[c], 1e-12);

    std::vector<std::size_t> perm(K);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> pw;
    std::vector<ProbabilityVector> pvs;
    for (auto i : perm) {
      pw.push_back(w[i]);
      pvs.push_back(vs[i]);
    }
    const auto permuted = fuse(weights_of(pw), pvs);
    for (std::size_t c = 0; c < C; ++c) EXPECT_NEAR(permuted.fused[c], d.fused[c], 1e-12);
    EXPECT_EQ(permuted.predicted, d.predicted);

    std::vector<double> dom(K, 0.0);
    dom[K - 1] = w[0];
    EXPECT_EQ(fuse(weights_of(dom), vs).fused, vs[K - 1]);
  }
}

TEST(Fuse, ClassMaxStrategy) {
  auto d = fuse(weights_of({1, 1}), std::vector{pv({0.6, 0.4}), pv({0.1, 0.9})}, FusionStrategy::ClassMax);
  // Scaled maxima (0.3, 0.45), renormalized.
  EXPECT_NEAR(d.fused[0], 0.3 / 0.75, 1e-15);
  EXPECT_EQ(d.predicted, 1);
}

TEST(FuseBatch, IdenticalClassifiersAndEmpty) {
  std::mt19937_64 rng(4);
  std::vector<std::vector<ProbabilityVector>> m;
  std::vector<int> truth;
  for (int j = 0; j < 50; ++j) {
    auto v = random_pv(rng, 4);
    m.push_back({v, v, v});
    truth.push_back(j % 4);
  }
  auto batch = fuse_batch(weights_of({1.0, 2.0, 0.5}), m, truth);
  ASSERT_TRUE(batch.evaluation.has_value());
  for (std::size_t j = 0; j < m.size(); ++j) EXPECT_EQ(batch.decisions[j].predicted, static_cast<int>(m[j][0].argmax()));
  EXPECT_EQ(batch.evaluation->confusion.total(), 50u);

  auto empty = fuse_batch(weights_of({1.0}), {}, {});
  EXPECT_TRUE(empty.decisions.empty());
  EXPECT_FALSE(empty.evaluation.has_value());

  std::vector<std::vector<ProbabilityVector>> ragged = {{pv({.5, .5})}, {pv({.5, .5}), pv({.5, .5})}};
  try {
    fuse_batch(weights_of({1.0}), ragged);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(Ablate, SingletonsEqualSoloAndDuplicatesDropped) {
  std::mt19937_64 rng(6);
  const std::size_t K = 3, C = 4, n = 80;
  std::vector<std::vector<ProbabilityVector>> m(n);
  std::vector<int> truth(n);
  for (std::size_t j = 0; j < n; ++j) {
    truth[j] = static_cast<int>(j % C);
    for (std::size_t i = 0; i < K; ++i) m[j].push_back(random_pv(rng, C));
  }
  auto w = EnsembleWeights::from_scores({{"a", score(.9, .8, .85, .9)}, {"b", score(.7, .7, .7, .8)}, {"c", score(.6, .5, .55, .7)}});
  auto table = ablate(w, m, truth, {{"a"}, {"b"}, {"c"}, {"b"}, {"a", "b", "c"}});
  ASSERT_EQ(table.rows.size(), 4u);
  EXPECT_EQ(table.warnings.size(), 1u);
  for (std::size_t i = 0; i < K; ++i) {
    std::vector<ProbabilityVector> solo;
    for (std::size_t j = 0; j < n; ++j) solo.push_back(m[j][i]);
    auto e = evaluate_predictions(truth, solo, C, Averaging::Macro);
    EXPECT_EQ(table.rows[i].accuracy, e.score.accuracy);
    EXPECT_EQ(table.rows[i].precision, e.score.precision);
    EXPECT_EQ(table.rows[i].auc, e.score.auc);
  }
  try {
    ablate(w, m, truth, {{"zzz"}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownIdentity);
  }
  EXPECT_EQ(default_ablation_subsets(w).size(), 5u);

  auto zero = EnsembleWeights::explicit_weights({{"a", 1.0}, {"b", 0.0}, {"c", 2.0}});
  auto skipped = ablate(zero, m, truth, {{"b"}, {"a", "b"}});
  ASSERT_EQ(skipped.rows.size(), 1u);
  ASSERT_EQ(skipped.warnings.size(), 1u);
  EXPECT_NE(skipped.warnings[0].find("zero total weight"), std::string::npos);
}

TEST(WeightsFile, JsonRoundTrip) {
  auto w = EnsembleWeights::from_scores({{"x", score(.9, .8, .85, .9)}, {"y", score(.7, .7, .7, .8)}});
  auto j = to_json(w, Averaging::Macro, "abc");
  auto back = ensemble_weights_from_json(j);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.members()[0].identity, "x");
  EXPECT_EQ(back.members()[1].weight, w.members()[1].weight);
  j["classifiers"]["x"]["w"] = 1.0;
  EXPECT_THROW(ensemble_weights_from_json(j), Error);
}
