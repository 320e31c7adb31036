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
#include <array>
#include <cctype>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "wpedl/classifier.hpp"
#include "wpedl/ensemble.hpp"
#include "wpedl/error.hpp"
#include "wpedl/metrics.hpp"
#include "wpedl/png.hpp"
#include "wpedl/report_schema.hpp"
#include "wpedl/rng.hpp"
#include "wpedl/signal_io.hpp"
#include "wpedl/stft.hpp"
#include "wpedl/synthgen.hpp"

namespace wpedl {

// ---------------------------------------------------------------------------
// Configuration

struct PoolMember {
  std::string id;
  std::string backend;  // softmax | cnn | external
  nlohmann::json hyper = nlohmann::json::object();
  std::string path;  // external probability CSV, as written in the config
  fs::path resolved;

  bool native() const { return backend != "external"; }
};

enum class DataSource { Synthetic, Manifest, Index };

struct SegmentOptions {
  std::size_t length = 0;  // 0: one second of samples
  std::size_t hop = 0;     // 0: half the length
  NormalizeMode normalize = NormalizeMode::ZScore;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  DataSource source = DataSource::Synthetic;
  SynthConfig synthetic;
  std::string manifest;  // as written
  std::string index;     // as written
  std::vector<std::string> index_labels;
  SegmentOptions segment;
  double test_fraction = 0.18;
  double validation_fraction = 0.2;
  StftParams stft;
  RenderOptions render;
  std::vector<PoolMember> pool;
  Averaging averaging = Averaging::Macro;
  FusionStrategy strategy = FusionStrategy::WeightedMean;
  std::string weights_file;
  std::vector<std::vector<std::string>> ablation_subsets;
  fs::path output_dir = "out";
  bool emit_images = false;
  fs::path base_dir;  // relative paths resolve against this

  fs::path resolve(const std::string& p) const { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; }
  std::size_t native_count() const {
    std::size_t n = 0;
    for (const auto& m : pool) n += m.native();
    return n;
  }
};

inline std::string to_string(DataSource s) {
  switch (s) {
    case DataSource::Synthetic: return "synthetic";
    case DataSource::Manifest: return "manifest";
    case DataSource::Index: return "index";
  }
  return "synthetic";
}

namespace detail {

inline bool safe_identity(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) return false;
  return id.front() != '.';
}

inline SynthConfig synthetic_from_json(const nlohmann::json& j) {
  if (!j.contains("preset")) return synth_config_from_json(j);
  check_fields(j, {"preset", "noise_std", "jitter_hz", "per_class", "duration_s", "sample_rate_hz", "dataset_tag"},
               "data.synthetic");
  const auto preset = j.at("preset").get<std::string>();
  if (preset != "rotor") fail(ErrorCode::InvalidConfig, "unknown synthetic preset '" + preset + "'");
  SynthConfig c;
  c.classes = rotor_style_signatures(j.value("noise_std", 0.2), j.value("jitter_hz", 0.0));
  c.per_class = j.value("per_class", c.per_class);
  c.duration_s = j.value("duration_s", c.duration_s);
  c.sample_rate_hz = j.value("sample_rate_hz", c.sample_rate_hz);
  c.dataset_tag = j.value("dataset_tag", std::string("rotor-synthetic"));
  for (const auto& s : c.classes) {
    if (s.max_frequency() >= c.sample_rate_hz / 2)
      fail(ErrorCode::InvalidConfig, "preset frequencies exceed the Nyquist limit");
  }
  return c;
}

inline void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) fail(ErrorCode::InvalidConfig, what + " does not exist: " + p.string());
}

inline ExperimentConfig parse_experiment(const nlohmann::json& j, const fs::path& base_dir) {
  check_fields(j, {"name", "seed", "data", "split", "stft", "render", "pool", "averaging", "fusion", "ablation",
                   "output_dir", "emit_images"},
               "config");
  ExperimentConfig c;
  c.base_dir = base_dir;
  c.name = j.value("name", c.name);
  c.seed = j.value("seed", c.seed);

  if (!j.contains("data")) fail(ErrorCode::InvalidConfig, "config: missing 'data'");
  const auto& d = j.at("data");
  check_fields(d, {"synthetic", "manifest", "index", "labels", "segment"}, "data");
  const int sources = d.contains("synthetic") + d.contains("manifest") + d.contains("index");
  if (sources != 1) fail(ErrorCode::InvalidConfig, "data: give exactly one of synthetic, manifest, index");
  if (d.contains("synthetic")) {
    c.source = DataSource::Synthetic;
    c.synthetic = synthetic_from_json(d.at("synthetic"));
  } else if (d.contains("manifest")) {
    c.source = DataSource::Manifest;
    c.manifest = d.at("manifest").get<std::string>();
    require_file(c.resolve(c.manifest), "manifest");
  } else {
    c.source = DataSource::Index;
    c.index = d.at("index").get<std::string>();
    require_file(c.resolve(c.index), "sample index");
  }
  if (d.contains("labels")) {
    if (c.source != DataSource::Index) fail(ErrorCode::InvalidConfig, "data.labels only applies to an index source");
    c.index_labels = d.at("labels").get<std::vector<std::string>>();
  }
  if (d.contains("segment")) {
    const auto& s = d.at("segment");
    check_fields(s, {"length", "hop", "normalize"}, "data.segment");
    c.segment.length = s.value("length", c.segment.length);
    c.segment.hop = s.value("hop", c.segment.hop);
    c.segment.normalize = parse_normalize_mode(s.value("normalize", std::string("zscore")));
  }

  if (j.contains("split")) {
    const auto& s = j.at("split");
    check_fields(s, {"test", "validation"}, "split");
    c.test_fraction = s.value("test", c.test_fraction);
    c.validation_fraction = s.value("validation", c.validation_fraction);
  }
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0))
    fail(ErrorCode::InvalidConfig, "split.test must lie strictly between 0 and 1");
  if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0))
    fail(ErrorCode::InvalidConfig, "split.validation must lie in [0, 1)");

  if (j.contains("stft")) c.stft = stft_params_from_json(j.at("stft"));
  if (j.contains("render")) {
    const auto& r = j.at("render");
    check_fields(r, {"image_size", "db_floor", "colormap"}, "render");
    c.render.image_size = r.value("image_size", c.render.image_size);
    c.render.db_floor = r.value("db_floor", c.render.db_floor);
    c.render.colormap = parse_colormap(r.value("colormap", std::string("viridis")));
    if (c.render.image_size < 1) fail(ErrorCode::InvalidConfig, "render.image_size must be >= 1");
    if (!(c.render.db_floor < 0.0)) fail(ErrorCode::InvalidConfig, "render.db_floor must be negative");
  }

  if (!j.contains("pool") || !j.at("pool").is_array() || j.at("pool").empty())
    fail(ErrorCode::InvalidConfig, "classifier pool is empty");
  std::set<std::string> ids;
  for (const auto& jm : j.at("pool")) {
    check_fields(jm, {"id", "backend", "hyper", "path"}, "pool member");
    PoolMember m;
    m.id = get_required<std::string>(jm, "id", "pool member");
    m.backend = get_required<std::string>(jm, "backend", "pool member '" + m.id + "'");
    if (!safe_identity(m.id)) fail(ErrorCode::InvalidConfig, "pool id '" + m.id + "' must match [A-Za-z0-9._-]+");
    if (!ids.insert(m.id).second) fail(ErrorCode::InvalidConfig, "pool id '" + m.id + "' appears twice");
    m.hyper = jm.value("hyper", nlohmann::json::object());
    if (m.backend == "softmax") {
      m.hyper = to_json(softmax_hyper_from_json(m.hyper));
    } else if (m.backend == "cnn") {
      m.hyper = to_json(cnn_hyper_from_json(m.hyper));
    } else if (m.backend == "external") {
      m.path = get_required<std::string>(jm, "path", "pool member '" + m.id + "'");
      m.resolved = c.resolve(m.path);
      require_file(m.resolved, "probability file for '" + m.id + "'");
      m.hyper = nlohmann::json::object();
    } else {
      fail(ErrorCode::InvalidConfig, "pool member '" + m.id + "': unknown backend '" + m.backend + "'");
    }
    if (m.native() && m.hyper.contains("path")) fail(ErrorCode::InvalidConfig, "'path' is only for external members");
    if (m.native() && c.source == DataSource::Index)
      fail(ErrorCode::InvalidConfig, "native member '" + m.id + "' needs signal data, but the data source is an index");
    c.pool.push_back(std::move(m));
  }

  c.averaging = parse_averaging(j.value("averaging", std::string("macro")));
  if (j.contains("fusion")) {
    const auto& f = j.at("fusion");
    check_fields(f, {"strategy", "weights"}, "fusion");
    c.strategy = parse_fusion_strategy(f.value("strategy", std::string("weighted_mean")));
    c.weights_file = f.value("weights", std::string());
    if (!c.weights_file.empty()) require_file(c.resolve(c.weights_file), "weights file");
  }
  if (c.weights_file.empty() && c.validation_fraction == 0.0 && c.source != DataSource::Index)
    fail(ErrorCode::InvalidConfig, "weights need a validation split or an explicit weights file");
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    check_fields(a, {"subsets"}, "ablation");
    c.ablation_subsets = a.value("subsets", c.ablation_subsets);
    for (const auto& subset : c.ablation_subsets)
      for (const auto& id : subset)
        if (!ids.count(id)) fail(ErrorCode::InvalidConfig, "ablation subset names unknown classifier '" + id + "'");
  }
  c.output_dir = c.resolve(j.value("output_dir", std::string("out"))).lexically_normal();
  c.emit_images = j.value("emit_images", false);
  return c;
}

}  // namespace detail

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
  try {
    return detail::parse_experiment(j, base_dir);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedJson, std::string("config: ") + e.what());
  }
}

inline ExperimentConfig load_experiment_config(const fs::path& path) {
  return experiment_config_from_json(detail::read_json_file(path), path.parent_path());
}

/// Normalized snapshot of the scientific content of a config (output location
/// and image emission excluded). Defaults are filled in.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json data;
  switch (c.source) {
    case DataSource::Synthetic: data["synthetic"] = synth_config_to_json(c.synthetic); break;
    case DataSource::Manifest: data["manifest"] = c.manifest; break;
    case DataSource::Index:
      data["index"] = c.index;
      if (!c.index_labels.empty()) data["labels"] = c.index_labels;
      break;
  }
  data["segment"] = {{"length", c.segment.length}, {"hop", c.segment.hop}, {"normalize", to_string(c.segment.normalize)}};
  nlohmann::json pool = nlohmann::json::array();
  for (const auto& m : c.pool) {
    nlohmann::json jm = {{"id", m.id}, {"backend", m.backend}};
    if (m.native()) jm["hyper"] = m.hyper;
    else jm["path"] = m.path;
    pool.push_back(std::move(jm));
  }
  nlohmann::json fusion = {{"strategy", to_string(c.strategy)}};
  if (!c.weights_file.empty()) fusion["weights"] = c.weights_file;
  return {{"name", c.name},
          {"seed", c.seed},
          {"data", std::move(data)},
          {"split", {{"test", c.test_fraction}, {"validation", c.validation_fraction}}},
          {"stft", to_json(c.stft)},
          {"render", {{"image_size", c.render.image_size}, {"db_floor", c.render.db_floor},
                      {"colormap", to_string(c.render.colormap)}}},
          {"pool", std::move(pool)},
          {"averaging", to_string(c.averaging)},
          {"fusion", std::move(fusion)},
          {"ablation", {{"subsets", c.ablation_subsets}}}};
}

inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

// ---------------------------------------------------------------------------
// Output layout

/// Pinned directory layout. Per-run artifacts carry the config hash and seed
/// in their names.
struct OutputLayout {
  fs::path root;
  std::string suffix;  // "-<config hash>-s<seed>"

  explicit OutputLayout(const ExperimentConfig& c)
      : root(c.output_dir), suffix("-" + config_hash(c) + "-s" + std::to_string(c.seed)) {}

  fs::path data_dir() const { return root / "data"; }
  fs::path manifest() const { return data_dir() / "manifest.json"; }
  fs::path spectrogram_dir() const { return root / "spectrograms"; }
  fs::path index_csv() const { return spectrogram_dir() / "index.csv"; }
  fs::path image(const std::string& id) const { return spectrogram_dir() / (id + ".png"); }
  fs::path sidecar(const std::string& id) const { return spectrogram_dir() / (id + ".json"); }
  fs::path checkpoint(const std::string& id) const { return root / "checkpoints" / (id + suffix + ".ckpt"); }
  fs::path probabilities(const std::string& id) const { return root / "probabilities" / (id + suffix + ".csv"); }
  fs::path report(const std::string& kind) const { return root / "reports" / (kind + suffix + ".json"); }
  fs::path stale_marker() const { return root / "STALE.json"; }

  std::string relative(const fs::path& p) const { return p.lexically_relative(root).generic_string(); }
};

// ---------------------------------------------------------------------------
// Samples

struct SampleRecord {
  std::string id;
  int label = 0;
  std::string split;  // train | validation | test
};

struct SampleIndex {
  std::vector<std::string> labels;
  std::vector<SampleRecord> samples;

  std::vector<std::size_t> positions(const std::string& split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (samples[i].split == split) out.push_back(i);
    return out;
  }
};

inline void write_sample_index(const SampleIndex& idx, const fs::path& path) {
  std::string text = "sample_id,label,split\n";
  for (const auto& s : idx.samples) text += s.id + "," + idx.labels.at(s.label) + "," + s.split + "\n";
  detail::write_text(path, text);
}

/// Reads "sample_id,label,split" rows. Without `labels`, the label set is the
/// sorted set of labels present.
inline SampleIndex read_sample_index(const fs::path& path, std::vector<std::string> labels = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::MissingFile, path.string());
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::MalformedCsv, path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "sample_id,label,split") fail(ErrorCode::MalformedCsv, path.string() + ": header must be sample_id,label,split");
  std::vector<std::array<std::string, 3>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 3) fail(ErrorCode::MalformedCsv, path.string() + ":" + std::to_string(line_no) + ": expected 3 columns");
    rows.push_back({std::string(cells[0]), std::string(cells[1]), std::string(cells[2])});
  }
  if (labels.empty()) {
    std::set<std::string> seen;
    for (const auto& r : rows) seen.insert(r[1]);
    labels.assign(seen.begin(), seen.end());
  }
  SampleIndex idx;
  idx.labels = labels;
  std::set<std::string> ids;
  for (const auto& r : rows) {
    auto it = std::find(labels.begin(), labels.end(), r[1]);
    if (it == labels.end()) fail(ErrorCode::UnknownLabel, path.string() + ": label '" + r[1] + "' not in label set");
    if (r[2] != "train" && r[2] != "validation" && r[2] != "test")
      fail(ErrorCode::MalformedCsv, path.string() + ": split must be train, validation or test");
    if (!ids.insert(r[0]).second) fail(ErrorCode::DuplicateSample, path.string() + ": duplicate sample id '" + r[0] + "'");
    idx.samples.push_back({r[0], static_cast<int>(it - labels.begin()), r[2]});
  }
  return idx;
}

// ---------------------------------------------------------------------------
// Stages

using ProgressFn = std::function<void(const std::string&)>;

inline ProgressFn stderr_progress() {
  return [](const std::string& msg) { std::cerr << "[wpedl] " << msg << std::endl; };
}

/// One experiment run: its config, layout, and the in-memory hand-off
/// between stages executed in the same process.
struct ExperimentRun {
  ExperimentConfig config;
  OutputLayout layout;
  ProgressFn progress;
  std::optional<SampleIndex> index;
  std::vector<RgbRaster> images;  // parallel to index->samples once loaded
  nlohmann::json timings = nlohmann::json::object();

  explicit ExperimentRun(ExperimentConfig c, ProgressFn p = stderr_progress())
      : config(std::move(c)), layout(config), progress(std::move(p)) {}

  void say(const std::string& msg) const {
    if (progress) progress(msg);
  }
};

namespace detail {

inline void require_artifact(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p)) fail(ErrorCode::MissingArtifact, p.string() + " (produced by '" + producer + "')");
}

inline std::string sample_id_for(const std::string& label, std::size_t entry, std::size_t offset) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%04zu_%zu", entry, offset);
  return label + buf;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline const SampleIndex& ensure_index(ExperimentRun& run) {
  if (run.index) return *run.index;
  if (run.config.source == DataSource::Index) {
    run.index = read_sample_index(run.config.resolve(run.config.index), run.config.index_labels);
  } else {
    require_artifact(run.layout.index_csv(), "make-spectrograms");
    auto meta = read_json_file(run.layout.spectrogram_dir() / "labels.json");
    run.index = read_sample_index(run.layout.index_csv(), meta.at("labels").get<std::vector<std::string>>());
  }
  return *run.index;
}

inline const std::vector<RgbRaster>& ensure_images(ExperimentRun& run) {
  const auto& idx = ensure_index(run);
  if (run.images.size() == idx.samples.size()) return run.images;
  run.images.clear();
  for (const auto& s : idx.samples) {
    const auto path = run.layout.image(s.id);
    require_artifact(path, "make-spectrograms");
    run.images.push_back(read_png(path));
  }
  return run.images;
}

template <class F>
double timed(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Writes the recordings: a synthetic corpus, or a copy of the input manifest
/// with absolute paths.
inline void stage_gen_data(ExperimentRun& run) {
  const auto& c = run.config;
  if (c.source == DataSource::Index) fail(ErrorCode::InvalidConfig, "gen-data: an index data source has no signals");
  if (c.source == DataSource::Synthetic) {
    const auto& s = c.synthetic;
    run.say("gen-data: " + std::to_string(s.classes.size()) + " classes x " + std::to_string(s.per_class) + " recordings");
    const auto corpus = generate_corpus(s.classes, s.per_class, s.duration_s, s.sample_rate_hz, derive_seed(c.seed, "data"));
    export_corpus(corpus, s.sample_rate_hz, s.dataset_tag, run.layout.data_dir());
  } else {
    auto m = load_manifest(c.resolve(c.manifest));
    for (auto& e : m.entries) e.path = fs::absolute(m.resolve(e)).lexically_normal().string();
    run.say("gen-data: manifest with " + std::to_string(m.entries.size()) + " recordings");
    write_manifest(m, run.layout.manifest());
  }
}

/// Segments every recording, splits the segments, and renders spectral images.
/// PNGs and sidecars are written when `write_images` is set.
inline void stage_make_spectrograms(ExperimentRun& run, bool write_images) {
  const auto& c = run.config;
  if (c.source == DataSource::Index)
    fail(ErrorCode::InvalidConfig, "make-spectrograms: an index data source has no signals");
  detail::require_artifact(run.layout.manifest(), "gen-data");
  const auto m = load_manifest(run.layout.manifest());
  const auto recordings = load_recordings(m);
  const std::size_t length = c.segment.length ? c.segment.length : default_segment_length(m.sample_rate_hz);
  const std::size_t hop = c.segment.hop ? c.segment.hop : std::max<std::size_t>(1, length / 2);

  SampleIndex idx;
  idx.labels = m.declared_labels;
  std::vector<TimeSeriesSegment> segments;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    const int label = static_cast<int>(std::find(idx.labels.begin(), idx.labels.end(), e.label) - idx.labels.begin());
    for (auto& seg : segment(recordings[i], m.sample_rate_hz, length, hop, label, i)) {
      idx.samples.push_back({detail::sample_id_for(e.label, i, seg.source.offset), label, "train"});
      segments.push_back(normalize(std::move(seg), c.segment.normalize));
    }
  }
  if (segments.empty()) fail(ErrorCode::EmptyInput, "make-spectrograms: no segments");

  std::vector<int> labels;
  for (const auto& s : idx.samples) labels.push_back(s.label);
  const auto outer =
      stratified_split_indices(labels, {1.0 - c.test_fraction, c.test_fraction}, derive_seed(c.seed, "split"));
  for (auto i : outer.test) idx.samples[i].split = "test";
  if (c.validation_fraction > 0.0) {
    std::vector<int> train_labels;
    for (auto i : outer.train) train_labels.push_back(labels[i]);
    const auto inner = stratified_split_indices(train_labels, {1.0 - c.validation_fraction, c.validation_fraction},
                                                derive_seed(c.seed, "validation"));
    for (auto k : inner.test) idx.samples[outer.train[k]].split = "validation";
  }

  run.say("make-spectrograms: " + std::to_string(segments.size()) + " images");
  run.images.clear();
  run.images.reserve(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    auto img = render(stft(segments[i], c.stft), c.render);
    if (write_images) {
      export_png(img, run.layout.image(idx.samples[i].id));
      const auto& e = m.entries[segments[i].source.entry];
      nlohmann::json side = {{"sample_id", idx.samples[i].id},
                             {"label", idx.labels[idx.samples[i].label]},
                             {"split", idx.samples[i].split},
                             {"source", {{"path", e.path}, {"channel", e.channel}, {"offset", segments[i].source.offset}}},
                             {"sample_rate_hz", m.sample_rate_hz},
                             {"segment_length", segments[i].samples.size()},
                             {"normalize", to_string(c.segment.normalize)},
                             {"stft", to_json(c.stft)},
                             {"render", {{"image_size", c.render.image_size}, {"db_floor", c.render.db_floor},
                                         {"colormap", to_string(c.render.colormap)}}}};
      detail::write_json(run.layout.sidecar(idx.samples[i].id), side);
    }
    run.images.push_back({img.width, img.height, std::move(img.pixels)});
  }
  write_sample_index(idx, run.layout.index_csv());
  detail::write_json(run.layout.spectrogram_dir() / "labels.json", {{"labels", idx.labels}});
  run.index = std::move(idx);
}

/// Trains every native pool member on the train split and saves checkpoints.
inline void stage_train(ExperimentRun& run) {
  const auto& c = run.config;
  if (c.native_count() == 0) {
    run.say("train: no native classifiers in the pool");
    return;
  }
  const auto& idx = detail::ensure_index(run);
  const auto& images = detail::ensure_images(run);
  std::vector<ImageView> views;
  std::vector<int> targets;
  for (auto i : idx.positions("train")) {
    views.emplace_back(images[i]);
    targets.push_back(idx.samples[i].label);
  }
  for (const auto& m : c.pool) {
    if (!m.native()) continue;
    run.say("train: " + m.id + " (" + m.backend + ") on " + std::to_string(views.size()) + " images");
    if (m.backend == "softmax") {
      auto h = softmax_hyper_from_json(m.hyper);
      h.gd.seed = derive_seed(c.seed, {fnv1a64(m.id), h.gd.seed});
      SoftmaxClassifier::train(m.id, idx.labels, views, targets, h).first.save(run.layout.checkpoint(m.id));
    } else {
      auto h = cnn_hyper_from_json(m.hyper);
      h.gd.seed = derive_seed(c.seed, {fnv1a64(m.id), h.gd.seed});
      CnnClassifier::train(m.id, idx.labels, views, targets, h).first.save(run.layout.checkpoint(m.id));
    }
  }
}

namespace detail {

inline nlohmann::json optional_evaluation(const SampleIndex& idx, const std::vector<std::size_t>& at,
                                          const std::vector<ProbabilityVector>& probs, Averaging mode) {
  if (at.empty()) return nullptr;
  std::vector<int> truth;
  for (auto i : at) truth.push_back(idx.samples[i].label);
  return to_json(evaluate_predictions(truth, probs, idx.labels.size(), mode), idx.labels);
}

}  // namespace detail

/// Runs each native checkpoint over the validation and test splits, writing a
/// probability CSV per classifier and a metrics report.
inline void stage_evaluate(ExperimentRun& run) {
  const auto& c = run.config;
  if (c.native_count() == 0) {
    run.say("evaluate: no native classifiers in the pool");
    return;
  }
  const auto& idx = detail::ensure_index(run);
  const auto& images = detail::ensure_images(run);
  const auto val = idx.positions("validation");
  const auto test = idx.positions("test");
  if (test.empty()) fail(ErrorCode::EmptyInput, "evaluate: the test split is empty");
  nlohmann::json members = nlohmann::json::array();
  for (const auto& m : c.pool) {
    if (!m.native()) continue;
    const auto ckpt = run.layout.checkpoint(m.id);
    detail::require_artifact(ckpt, "train");
    const auto model = load_classifier(ckpt);
    if (model->labels() != idx.labels) fail(ErrorCode::LabelSetMismatch, ckpt.string() + ": labels differ from the sample index");
    run.say("evaluate: " + m.id);
    std::vector<std::pair<std::string, ProbabilityVector>> rows;
    std::vector<ProbabilityVector> pv_val, pv_test;
    for (std::size_t i = 0; i < idx.samples.size(); ++i) {
      const auto& s = idx.samples[i];
      if (s.split == "train") continue;
      auto p = model->predict_proba(Sample{s.id, images[i]});
      (s.split == "validation" ? pv_val : pv_test).push_back(p);
      rows.emplace_back(s.id, std::move(p));
    }
    write_probability_csv(run.layout.probabilities(m.id), idx.labels, rows);
    members.push_back({{"id", m.id},
                       {"backend", m.backend},
                       {"checkpoint", run.layout.relative(ckpt)},
                       {"probabilities", run.layout.relative(run.layout.probabilities(m.id))},
                       {"validation", detail::optional_evaluation(idx, val, pv_val, c.averaging)},
                       {"test", detail::optional_evaluation(idx, test, pv_test, c.averaging)}});
  }
  detail::write_json(run.layout.report("evaluate"),
                     {{"format", "wpedl-evaluate/1"}, {"labels", idx.labels}, {"classifiers", std::move(members)}});
}

/// Every pool member's stored predictions for the validation and test splits.
struct PoolPredictions {
  std::vector<std::vector<ProbabilityVector>> validation;  // [sample][member]
  std::vector<std::vector<ProbabilityVector>> test;
  std::vector<int> validation_truth, test_truth;
  std::vector<std::string> validation_ids, test_ids;
};

inline PoolPredictions collect_predictions(ExperimentRun& run) {
  const auto& c = run.config;
  const auto& idx = detail::ensure_index(run);
  PoolPredictions out;
  std::vector<ExternalBackend> sources;
  for (const auto& m : c.pool) {
    fs::path path = m.resolved;
    if (m.native()) {
      path = run.layout.probabilities(m.id);
      detail::require_artifact(path, "evaluate");
    }
    sources.push_back(import_external(path, idx.labels, m.id));
  }
  const RgbRaster none{0, 0, {}};
  for (const auto& s : idx.samples) {
    if (s.split == "train") continue;
    const bool is_val = s.split == "validation";
    std::vector<ProbabilityVector> row;
    for (const auto& src : sources) row.push_back(src.predict_proba(Sample{s.id, none}));
    (is_val ? out.validation : out.test).push_back(std::move(row));
    (is_val ? out.validation_truth : out.test_truth).push_back(s.label);
    (is_val ? out.validation_ids : out.test_ids).push_back(s.id);
  }
  if (out.test.empty()) fail(ErrorCode::EmptyInput, "the test split is empty");
  return out;
}

namespace detail {

inline std::vector<ProbabilityVector> column(const std::vector<std::vector<ProbabilityVector>>& m, std::size_t i) {
  std::vector<ProbabilityVector> out;
  out.reserve(m.size());
  for (const auto& row : m) out.push_back(row.at(i));
  return out;
}

inline std::string joined_hash(const std::vector<std::string>& ids) {
  std::string all;
  for (const auto& id : ids) all += id + "\n";
  return hex64(fnv1a64(all));
}

/// Weights in pool order, either from a weights file or from validation scores.
inline EnsembleWeights pool_weights(const ExperimentRun& run, const PoolPredictions& preds) {
  const auto& c = run.config;
  if (!c.weights_file.empty()) {
    const auto file = ensemble_weights_from_json(read_json_file(c.resolve(c.weights_file)));
    std::vector<std::pair<std::string, ClassifierScore>> scored;
    std::vector<std::pair<std::string, double>> plain;
    for (const auto& m : c.pool) {
      const auto& w = file.members().at(file.index_of(m.id));
      if (w.score) scored.emplace_back(m.id, *w.score);
      else plain.emplace_back(m.id, w.weight);
    }
    return scored.empty() ? EnsembleWeights::explicit_weights(plain) : EnsembleWeights::from_scores(scored);
  }
  if (preds.validation.empty()) fail(ErrorCode::EmptyInput, "no validation samples to derive weights from");
  std::vector<std::pair<std::string, ClassifierScore>> scored;
  for (std::size_t i = 0; i < c.pool.size(); ++i) {
    const auto e = evaluate_predictions(preds.validation_truth, column(preds.validation, i),
                                        run.index->labels.size(), c.averaging);
    scored.emplace_back(c.pool[i].id, e.score);
  }
  return EnsembleWeights::from_scores(scored);
}

}  // namespace detail

/// Computes weights, fuses the test split, and writes the weights file and a
/// fusion report.
inline void stage_fuse(ExperimentRun& run) {
  const auto& c = run.config;
  const auto preds = collect_predictions(run);
  const auto& idx = *run.index;
  const auto weights = detail::pool_weights(run, preds);
  run.say("fuse: " + std::to_string(c.pool.size()) + " classifiers, " + std::to_string(preds.test.size()) + " test samples");
  detail::write_json(run.layout.report("weights"), to_json(weights, c.averaging, detail::joined_hash(preds.validation_ids)));

  const auto batch = fuse_batch(weights, preds.test, preds.test_truth, c.averaging, c.strategy);
  nlohmann::json members = nlohmann::json::array();
  for (std::size_t i = 0; i < c.pool.size(); ++i) {
    const auto& w = weights.members()[i];
    const auto test_eval = evaluate_predictions(preds.test_truth, detail::column(preds.test, i), idx.labels.size(), c.averaging);
    members.push_back({{"id", c.pool[i].id},
                       {"backend", c.pool[i].backend},
                       {"weight", w.weight},
                       {"validation", w.score ? to_json(*w.score) : nlohmann::json(nullptr)},
                       {"test", to_json(test_eval, idx.labels)}});
  }
  nlohmann::json decisions = nlohmann::json::array();
  for (std::size_t j = 0; j < batch.decisions.size(); ++j) {
    const auto& d = batch.decisions[j];
    decisions.push_back({{"sample_id", preds.test_ids[j]},
                         {"fused", d.fused.values()},
                         {"predicted", idx.labels[d.predicted]},
                         {"truth", idx.labels[preds.test_truth[j]]}});
  }
  detail::write_json(run.layout.report("fuse"),
                     {{"format", "wpedl-fuse/1"},
                      {"labels", idx.labels},
                      {"averaging", to_string(c.averaging)},
                      {"strategy", to_string(c.strategy)},
                      {"weights_source", c.weights_file.empty() ? "validation" : "file"},
                      {"samples",
                       {{"train", idx.positions("train").size()},
                        {"validation", preds.validation.size()},
                        {"test", preds.test.size()}}},
                      {"classifiers", std::move(members)},
                      {"fused", to_json(*batch.evaluation, idx.labels)},
                      {"decisions", std::move(decisions)}});
}

/// Re-fuses the test split for each classifier subset, then assembles and
/// validates the experiment report.
inline void stage_ablate(ExperimentRun& run) {
  const auto& c = run.config;
  const auto t0 = std::chrono::steady_clock::now();
  detail::require_artifact(run.layout.report("weights"), "fuse");
  detail::require_artifact(run.layout.report("fuse"), "fuse");
  const auto weights = ensemble_weights_from_json(detail::read_json_file(run.layout.report("weights")));
  const auto preds = collect_predictions(run);
  const auto subsets = c.ablation_subsets.empty() ? default_ablation_subsets(weights) : c.ablation_subsets;
  run.say("ablate: " + std::to_string(subsets.size()) + " subsets");
  const auto table = ablate(weights, preds.test, preds.test_truth, subsets, c.averaging, c.strategy);
  for (const auto& w : table.warnings) run.say("ablate: warning: " + w);
  const auto ablation = to_json(table);
  detail::write_json(run.layout.report("ablation"), ablation);

  auto fused = detail::read_json_file(run.layout.report("fuse"));
  nlohmann::json artifacts = {{"weights", run.layout.relative(run.layout.report("weights"))},
                              {"fuse", run.layout.relative(run.layout.report("fuse"))},
                              {"ablation", run.layout.relative(run.layout.report("ablation"))}};
  nlohmann::json checkpoints = nlohmann::json::array(), probabilities = nlohmann::json::array();
  for (const auto& m : c.pool) {
    if (!m.native()) continue;
    checkpoints.push_back(run.layout.relative(run.layout.checkpoint(m.id)));
    probabilities.push_back(run.layout.relative(run.layout.probabilities(m.id)));
  }
  if (!checkpoints.empty()) {
    artifacts["checkpoints"] = std::move(checkpoints);
    artifacts["probabilities"] = std::move(probabilities);
    artifacts["evaluate"] = run.layout.relative(run.layout.report("evaluate"));
  }
  if (c.source != DataSource::Index) artifacts["sample_index"] = run.layout.relative(run.layout.index_csv());
  run.timings["ablate"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  nlohmann::json report = {{"format", "wpedl-report/1"},
                           {"name", c.name},
                           {"seed", c.seed},
                           {"config_hash", config_hash(c)},
                           {"config", to_json(c)},
                           {"labels", fused.at("labels")},
                           {"samples", fused.at("samples")},
                           {"averaging", fused.at("averaging")},
                           {"strategy", fused.at("strategy")},
                           {"weights_source", fused.at("weights_source")},
                           {"classifiers", fused.at("classifiers")},
                           {"fused", fused.at("fused")},
                           {"ablation", ablation},
                           {"artifacts", std::move(artifacts)},
                           {"timings", run.timings}};
  validate_report(report);
  detail::write_json(run.layout.report("report"), report);
}

// ---------------------------------------------------------------------------
// Orchestration

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"gen-data", "make-spectrograms", "train", "evaluate", "fuse", "ablate"};
  return names;
}

/// Runs one named stage. On failure the output directory is flagged stale and
/// the error is rethrown with the stage name prefixed.
inline void run_stage(ExperimentRun& run, const std::string& stage, bool write_images = true) {
  const auto marker = run.layout.stale_marker();
  try {
    const double seconds = detail::timed([&] {
      if (stage == "gen-data") stage_gen_data(run);
      else if (stage == "make-spectrograms") stage_make_spectrograms(run, write_images);
      else if (stage == "train") stage_train(run);
      else if (stage == "evaluate") stage_evaluate(run);
      else if (stage == "fuse") stage_fuse(run);
      else if (stage == "ablate") stage_ablate(run);
      else fail(ErrorCode::InvalidConfig, "unknown stage '" + stage + "'");
    });
    if (stage != "ablate") run.timings[stage] = seconds;
  } catch (const Error& e) {
    detail::write_json(marker, {{"stage", stage}, {"code", std::string(to_string(e.code()))}, {"cause", e.what()}});
    throw Error(e.code(), "stage '" + stage + "' failed: " + e.what());
  } catch (const std::exception& e) {
    detail::write_json(marker, {{"stage", stage}, {"code", "IoError"}, {"cause", e.what()}});
    throw Error(ErrorCode::IoError, "stage '" + stage + "' failed: " + e.what());
  }
  std::error_code ec;
  if (fs::exists(marker, ec)) {
    const auto stale = detail::read_json_file(marker);
    if (stale.value("stage", std::string()) == stage) fs::remove(marker, ec);
  }
}

/// ingest -> spectrograms -> train -> evaluate -> fuse -> ablate, in one
/// process. Returns the path of the experiment report.
inline fs::path run_experiment(ExperimentRun& run) {
  std::error_code ec;
  fs::remove(run.layout.stale_marker(), ec);
  const auto& c = run.config;
  if (c.source != DataSource::Index) {
    run_stage(run, "gen-data");
    run_stage(run, "make-spectrograms", c.emit_images);
  }
  if (c.native_count() > 0) {
    run_stage(run, "train");
    run_stage(run, "evaluate");
  }
  run_stage(run, "fuse");
  run_stage(run, "ablate");
  run.say("report: " + run.layout.report("report").string());
  return run.layout.report("report");
}

inline fs::path run_experiment(const ExperimentConfig& config, ProgressFn progress = stderr_progress()) {
  ExperimentRun run(config, std::move(progress));
  return run_experiment(run);
}

/// Report with wall-clock timings removed, for reproducibility comparisons.
inline nlohmann::json mask_timings(nlohmann::json report) {
  if (report.contains("timings")) report["timings"] = nlohmann::json::object();
  return report;
}

}  // namespace wpedl
