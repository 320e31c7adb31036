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

// Independent reference computations used only by tests. Nothing here calls
// into the library's numeric paths.
#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

namespace wpedl::oracle {

/// Direct O(N^2) DFT of one frame (zero-padded to `pad`), magnitudes of bins 0..pad/2.
inline std::vector<double> brute_dft_magnitude(const std::vector<double>& frame, std::size_t pad) {
  std::vector<double> out(pad / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    long double re = 0, im = 0;
    for (std::size_t n = 0; n < frame.size(); ++n) {
      // Reduce k*n mod pad exactly before taking the angle.
      const auto r = static_cast<long double>((k * n) % pad);
      const long double ang = -2.0L * std::numbers::pi_v<long double> * r / static_cast<long double>(pad);
      re += frame[n] * std::cos(ang);
      im += frame[n] * std::sin(ang);
    }
    out[k] = static_cast<double>(std::sqrt(re * re + im * im));
  }
  return out;
}

/// Full (two-sided) DFT magnitudes squared.
inline std::vector<double> brute_dft_power_full(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    long double re = 0, im = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const long double ang = -2.0L * std::numbers::pi_v<long double> * static_cast<long double>((k * t) % n) /
                              static_cast<long double>(n);
      re += x[t] * std::cos(ang);
      im += x[t] * std::sin(ang);
    }
    out[k] = static_cast<double>(re * re + im * im);
  }
  return out;
}

inline std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = std::sin(std::numbers::pi * static_cast<double>(i) / static_cast<double>(n)) *
                                             std::sin(std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

struct CountedScores {
  double micro_p, micro_r, micro_f1;
  double macro_p, macro_r, macro_f1;
};

/// Precision/recall/F1 by counting labels sample by sample, from a confusion matrix
/// expanded back into (truth, prediction) pairs.
inline CountedScores counting_oracle(const std::vector<std::vector<std::size_t>>& cm) {
  const std::size_t C = cm.size();
  std::vector<int> truth, pred;
  for (std::size_t t = 0; t < C; ++t)
    for (std::size_t p = 0; p < C; ++p)
      for (std::size_t k = 0; k < cm[t][p]; ++k) {
        truth.push_back(static_cast<int>(t));
        pred.push_back(static_cast<int>(p));
      }
  double tp_all = 0, fp_all = 0, fn_all = 0;
  double sp = 0, sr = 0, sf = 0;
  for (std::size_t c = 0; c < C; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool is_t = truth[i] == static_cast<int>(c), is_p = pred[i] == static_cast<int>(c);
      tp += is_t && is_p;
      fp += !is_t && is_p;
      fn += is_t && !is_p;
    }
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
    const double p = tp + fp == 0 ? 0 : tp / (tp + fp);
    const double r = tp + fn == 0 ? 0 : tp / (tp + fn);
    sp += p;
    sr += r;
    sf += p + r == 0 ? 0 : 2 * p * r / (p + r);
  }
  CountedScores s{};
  s.micro_p = tp_all + fp_all == 0 ? 0 : tp_all / (tp_all + fp_all);
  s.micro_r = tp_all + fn_all == 0 ? 0 : tp_all / (tp_all + fn_all);
  s.micro_f1 = s.micro_p + s.micro_r == 0 ? 0 : 2 * s.micro_p * s.micro_r / (s.micro_p + s.micro_r);
  s.macro_p = sp / static_cast<double>(C);
  s.macro_r = sr / static_cast<double>(C);
  s.macro_f1 = sf / static_cast<double>(C);
  return s;
}

/// P(score+ > score-) + P(tie)/2 over all positive/negative pairs.
inline double pair_counting_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  double good = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      pairs += 1;
      if (scores[i] > scores[j]) good += 1;
      else if (scores[i] == scores[j]) good += 0.5;
    }
  }
  return good / pairs;
}

/// Central difference of f at x along coordinate `i`.
inline double central_difference(const std::function<double()>& f, double& param, double step) {
  const double saved = param;
  param = saved + step;
  const double up = f();
  param = saved - step;
  const double down = f();
  param = saved;
  return (up - down) / (2.0 * step);
}

}  // namespace wpedl::oracle
