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
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "wpedl/error.hpp"
#include "wpedl/rng.hpp"
#include "wpedl/signal_io.hpp"

namespace wpedl {

struct Sideband {
  double offset_hz = 0.0;
  double amplitude = 0.0;  // relative to the fundamental
  bool operator==(const Sideband&) const = default;
};

/// Exponentially decaying bursts repeating at a fixed rate. A nonzero carrier
/// rings each burst at that frequency (structural resonance).
struct ImpulseTrain {
  double rate_hz = 0.0;
  double decay_per_s = 0.0;
  double amplitude = 0.0;
  double carrier_hz = 0.0;
  bool operator==(const ImpulseTrain&) const = default;
};

/// Spectral recipe for one synthetic fault class.
struct FaultSignature {
  std::string class_id;
  double fundamental_hz = 60.0;
  std::vector<Sideband> sidebands;
  std::optional<ImpulseTrain> impulse_train;
  double noise_std = 0.0;
  // Per-instance uniform jitter of the fundamental (sidebands follow it).
  double fundamental_jitter_hz = 0.0;

  double max_frequency() const {
    double f = std::abs(fundamental_hz) + fundamental_jitter_hz;
    for (const auto& sb : sidebands) f = std::max(f, std::abs(fundamental_hz + sb.offset_hz) + fundamental_jitter_hz);
    if (impulse_train) f = std::max(f, impulse_train->carrier_hz);
    return f;
  }

  bool operator==(const FaultSignature&) const = default;
};

inline void validate(const FaultSignature& sig) {
  const std::string where = "signature '" + sig.class_id + "'";
  if (sig.class_id.empty()) fail(ErrorCode::InvalidConfig, "signature with empty class id");
  if (!(sig.noise_std >= 0.0)) fail(ErrorCode::InvalidConfig, where + ": noise_std must be >= 0");
  if (!(sig.fundamental_jitter_hz >= 0.0)) fail(ErrorCode::InvalidConfig, where + ": jitter must be >= 0");
  for (const auto& sb : sig.sidebands) {
    if (sb.offset_hz == 0.0) fail(ErrorCode::InvalidConfig, where + ": sideband offset must be nonzero");
    if (!(sb.amplitude >= 0.0)) fail(ErrorCode::InvalidConfig, where + ": sideband amplitude must be >= 0");
  }
  if (sig.impulse_train) {
    const auto& it = *sig.impulse_train;
    if (!(it.rate_hz > 0.0)) fail(ErrorCode::InvalidConfig, where + ": impulse rate must be > 0");
    if (!(it.amplitude >= 0.0) || !(it.decay_per_s >= 0.0) || !(it.carrier_hz >= 0.0))
      fail(ErrorCode::InvalidConfig, where + ": impulse parameters must be >= 0");
  }
}

/// Renders one realization of `sig`. Component phases, jitter, impulse phase, and
/// noise all come from `seed`.
inline TimeSeriesSegment generate(const FaultSignature& sig, double duration_s, double sample_rate,
                                  std::uint64_t seed) {
  validate(sig);
  const double n_real = duration_s * sample_rate;
  if (!(n_real >= 16.0))
    fail(ErrorCode::TooShort, "duration * sample_rate must be at least 16 samples");
  if (!(sample_rate > 2.0 * sig.max_frequency()))
    fail(ErrorCode::NyquistViolation, "sample rate " + std::to_string(sample_rate) +
                                          " Hz cannot represent " + std::to_string(sig.max_frequency()) + " Hz");
  const auto n = static_cast<std::size_t>(std::llround(n_real));
  constexpr double two_pi = 2.0 * std::numbers::pi;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double f0 = sig.fundamental_hz + sig.fundamental_jitter_hz * (2.0 * unit(rng) - 1.0);

  struct Tone { double freq, amp, phase; };
  std::vector<Tone> tones;
  tones.push_back({f0, 1.0, two_pi * unit(rng)});
  for (const auto& sb : sig.sidebands) tones.push_back({f0 + sb.offset_hz, sb.amplitude, two_pi * unit(rng)});
  const double impulse_phase = unit(rng);

  TimeSeriesSegment seg;
  seg.sample_rate = sample_rate;
  seg.samples.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    double v = 0.0;
    for (const auto& tone : tones) v += tone.amp * std::cos(two_pi * tone.freq * t + tone.phase);
    seg.samples[i] = v;
  }

  if (sig.impulse_train && sig.impulse_train->amplitude > 0.0) {
    const auto& it = *sig.impulse_train;
    const double period = 1.0 / it.rate_hz;
    for (double onset = (impulse_phase - 1.0) * period; onset < duration_s; onset += period) {
      for (std::size_t i = 0; i < n; ++i) {
        const double tau = static_cast<double>(i) / sample_rate - onset;
        if (tau < 0.0) continue;
        double env = it.amplitude * std::exp(-it.decay_per_s * tau);
        if (env < 1e-12 * it.amplitude) break;
        seg.samples[i] += it.carrier_hz > 0.0 ? env * std::cos(two_pi * it.carrier_hz * tau) : env;
      }
    }
  }

  if (sig.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, sig.noise_std);
    for (double& v : seg.samples) v += noise(rng);
  }
  return seg;
}

/// Labeled synthetic corpus; `labels` is sorted and segment labels index into it.
struct SyntheticCorpus {
  std::vector<std::string> labels;
  std::vector<TimeSeriesSegment> segments;
  std::size_t per_class = 0;
};

inline std::vector<std::string> sorted_class_ids(const std::vector<FaultSignature>& config) {
  std::set<std::string> ids;
  for (const auto& s : config)
    if (!ids.insert(s.class_id).second) fail(ErrorCode::DuplicateClass, "duplicate class id '" + s.class_id + "'");
  return {ids.begin(), ids.end()};
}

/// `per_class` realizations of every signature. Segment seeds depend only on
/// (seed, class id, instance), and segments are ordered by sorted class id.
inline SyntheticCorpus generate_corpus(const std::vector<FaultSignature>& config, std::size_t per_class,
                                       double duration_s, double sample_rate, std::uint64_t seed) {
  if (per_class < 1) fail(ErrorCode::InvalidConfig, "per_class must be >= 1");
  if (config.empty()) fail(ErrorCode::InvalidConfig, "synthetic config has no classes");
  SyntheticCorpus corpus;
  corpus.labels = sorted_class_ids(config);
  corpus.per_class = per_class;
  for (std::size_t c = 0; c < corpus.labels.size(); ++c) {
    const auto& sig = *std::find_if(config.begin(), config.end(),
                                    [&](const FaultSignature& s) { return s.class_id == corpus.labels[c]; });
    for (std::size_t k = 0; k < per_class; ++k) {
      auto seg = generate(sig, duration_s, sample_rate, derive_seed(seed, {fnv1a64(sig.class_id), k}));
      seg.label = static_cast<int>(c);
      seg.source = {c * per_class + k, 0};
      corpus.segments.push_back(std::move(seg));
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// JSON config

struct SynthConfig {
  std::vector<FaultSignature> classes;
  std::size_t per_class = 100;
  double duration_s = 1.0;
  double sample_rate_hz = 1000.0;
  std::string dataset_tag = "synthetic";
};

inline FaultSignature signature_from_json(const nlohmann::json& j) {
  detail::check_fields(j, {"class_id", "fundamental_hz", "sidebands", "impulse_train", "noise_std",
                           "fundamental_jitter_hz"},
                       "signature");
  FaultSignature s;
  s.class_id = detail::get_required<std::string>(j, "class_id", "signature");
  s.fundamental_hz = j.value("fundamental_hz", 60.0);
  s.noise_std = j.value("noise_std", 0.0);
  s.fundamental_jitter_hz = j.value("fundamental_jitter_hz", 0.0);
  if (j.contains("sidebands")) {
    for (const auto& sb : j.at("sidebands")) {
      detail::check_fields(sb, {"offset_hz", "amplitude"}, "sideband");
      s.sidebands.push_back({detail::get_required<double>(sb, "offset_hz", "sideband"),
                             detail::get_required<double>(sb, "amplitude", "sideband")});
    }
  }
  if (j.contains("impulse_train") && !j.at("impulse_train").is_null()) {
    const auto& it = j.at("impulse_train");
    detail::check_fields(it, {"rate_hz", "decay_per_s", "amplitude", "carrier_hz"}, "impulse_train");
    s.impulse_train = ImpulseTrain{detail::get_required<double>(it, "rate_hz", "impulse_train"),
                                   it.value("decay_per_s", 0.0), it.value("amplitude", 1.0),
                                   it.value("carrier_hz", 0.0)};
  }
  validate(s);
  return s;
}

inline nlohmann::json signature_to_json(const FaultSignature& s) {
  nlohmann::json sb = nlohmann::json::array();
  for (const auto& b : s.sidebands) sb.push_back({{"offset_hz", b.offset_hz}, {"amplitude", b.amplitude}});
  nlohmann::json j = {{"class_id", s.class_id},
                      {"fundamental_hz", s.fundamental_hz},
                      {"sidebands", std::move(sb)},
                      {"noise_std", s.noise_std},
                      {"fundamental_jitter_hz", s.fundamental_jitter_hz}};
  if (s.impulse_train)
    j["impulse_train"] = {{"rate_hz", s.impulse_train->rate_hz},
                          {"decay_per_s", s.impulse_train->decay_per_s},
                          {"amplitude", s.impulse_train->amplitude},
                          {"carrier_hz", s.impulse_train->carrier_hz}};
  return j;
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  detail::check_fields(j, {"classes", "per_class", "duration_s", "sample_rate_hz", "dataset_tag"}, "synth");
  SynthConfig c;
  const auto it = j.find("classes");
  if (it == j.end() || !it->is_array()) fail(ErrorCode::InvalidConfig, "synth: 'classes' must be an array");
  for (const auto& cls : *it) c.classes.push_back(signature_from_json(cls));
  sorted_class_ids(c.classes);
  c.per_class = j.value("per_class", c.per_class);
  c.duration_s = j.value("duration_s", c.duration_s);
  c.sample_rate_hz = j.value("sample_rate_hz", c.sample_rate_hz);
  c.dataset_tag = j.value("dataset_tag", c.dataset_tag);
  if (c.per_class < 1) fail(ErrorCode::InvalidConfig, "synth: per_class must be >= 1");
  return c;
}

inline nlohmann::json synth_config_to_json(const SynthConfig& c) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& s : c.classes) classes.push_back(signature_to_json(s));
  return {{"classes", std::move(classes)},
          {"per_class", c.per_class},
          {"duration_s", c.duration_s},
          {"sample_rate_hz", c.sample_rate_hz},
          {"dataset_tag", c.dataset_tag}};
}

/// Five rotor-style classes: healthy plus four broken-bar grades whose
/// sidebands sit at +-12 Hz around a 60 Hz supply with growing amplitude.
inline std::vector<FaultSignature> rotor_style_signatures(double noise_std = 0.2, double jitter_hz = 0.0) {
  const char* ids[] = {"HLT", "BRB1", "BRB2", "BRB3", "BRB4"};
  std::vector<FaultSignature> out;
  for (int grade = 0; grade < 5; ++grade) {
    FaultSignature s;
    s.class_id = ids[grade];
    s.fundamental_hz = 60.0;
    s.noise_std = noise_std;
    s.fundamental_jitter_hz = jitter_hz;
    const double amp = 0.1 * grade;
    if (grade > 0) s.sidebands = {{-12.0, amp}, {12.0, amp}};
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export to the CSV + manifest layout

/// Writes one CSV per class (one column per realization) plus `manifest.json`.
inline RecordingManifest export_corpus(const SyntheticCorpus& corpus, double sample_rate,
                                       const std::string& dataset_tag, const fs::path& dir) {
  RecordingManifest m;
  m.dataset_tag = dataset_tag;
  m.sample_rate_hz = sample_rate;
  m.declared_labels = corpus.labels;
  m.base_dir = dir;
  for (std::size_t c = 0; c < corpus.labels.size(); ++c) {
    std::vector<std::string> header;
    std::vector<std::vector<double>> columns;
    const std::string file = corpus.labels[c] + ".csv";
    for (const auto& seg : corpus.segments) {
      if (seg.label != static_cast<int>(c)) continue;
      std::string name = "r" + std::to_string(header.size());
      header.push_back(name);
      columns.push_back(seg.samples);
      m.entries.push_back({file, name, corpus.labels[c]});
    }
    write_csv(dir / file, header, columns);
  }
  write_manifest(m, dir / "manifest.json");
  return m;
}

}  // namespace wpedl
