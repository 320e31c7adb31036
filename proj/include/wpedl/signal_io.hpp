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
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "wpedl/error.hpp"
#include "wpedl/rng.hpp"

namespace wpedl {

namespace fs = std::filesystem;

struct ManifestEntry {
  std::string path;     // as written; relative paths resolve against the manifest directory
  std::string channel;  // column header name or zero-based column index
  std::string label;

  bool operator==(const ManifestEntry&) const = default;
};

/// Validated description of a labeled recording corpus.
struct RecordingManifest {
  std::string dataset_tag;
  double sample_rate_hz = 0.0;
  std::vector<std::string> declared_labels;  // the closed label set, sorted
  std::vector<ManifestEntry> entries;
  fs::path base_dir;  // not part of identity

  /// Sorted, deduplicated set of labels actually used by entries.
  std::vector<std::string> labels() const {
    std::set<std::string> s;
    for (const auto& e : entries) s.insert(e.label);
    return {s.begin(), s.end()};
  }

  fs::path resolve(const ManifestEntry& e) const {
    fs::path p(e.path);
    return p.is_absolute() ? p : base_dir / p;
  }

  bool operator==(const RecordingManifest& o) const {
    return dataset_tag == o.dataset_tag && sample_rate_hz == o.sample_rate_hz &&
           declared_labels == o.declared_labels && entries == o.entries;
  }
};

struct SourceRef {
  std::size_t entry = 0;
  std::size_t offset = 0;
  bool operator==(const SourceRef&) const = default;
};

/// Fixed-length window of sensor samples with its class id.
struct TimeSeriesSegment {
  std::vector<double> samples;
  double sample_rate = 0.0;
  int label = 0;
  SourceRef source;

  bool operator==(const TimeSeriesSegment&) const = default;
};

enum class NormalizeMode { ZScore, MinMax, None };

inline NormalizeMode parse_normalize_mode(const std::string& s) {
  if (s == "zscore") return NormalizeMode::ZScore;
  if (s == "minmax") return NormalizeMode::MinMax;
  if (s == "none") return NormalizeMode::None;
  fail(ErrorCode::InvalidConfig, "unknown normalization mode '" + s + "'");
}

inline std::string to_string(NormalizeMode m) {
  switch (m) {
    case NormalizeMode::ZScore: return "zscore";
    case NormalizeMode::MinMax: return "minmax";
    case NormalizeMode::None: return "none";
  }
  return "none";
}

// ---------------------------------------------------------------------------
// Manifest

namespace detail {

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::MissingFile, path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedJson, path.string() + ": " + e.what());
  }
}

inline void check_fields(const nlohmann::json& obj, std::initializer_list<std::string_view> allowed,
                         const std::string& where) {
  if (!obj.is_object()) fail(ErrorCode::MalformedJson, where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      fail(ErrorCode::UnknownField, where + ": unknown field '" + key + "'");
  }
}

template <class T>
T get_required(const nlohmann::json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(ErrorCode::MalformedJson, where + ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::MalformedJson, where + ": field '" + key + "' has the wrong type");
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::IoError, "write failed for " + path.string());
}

}  // namespace detail

inline RecordingManifest manifest_from_json(const nlohmann::json& doc, const fs::path& base_dir,
                                            bool check_files = true) {
  const std::string where = "manifest";
  detail::check_fields(doc, {"dataset_tag", "sample_rate_hz", "label_set", "entries"}, where);
  RecordingManifest m;
  m.base_dir = base_dir;
  m.dataset_tag = detail::get_required<std::string>(doc, "dataset_tag", where);
  m.sample_rate_hz = detail::get_required<double>(doc, "sample_rate_hz", where);
  if (!(m.sample_rate_hz > 0.0) || !std::isfinite(m.sample_rate_hz))
    fail(ErrorCode::InvalidConfig, "manifest: sample_rate_hz must be positive");

  const auto& raw_entries = doc.find("entries");
  if (raw_entries == doc.end() || !raw_entries->is_array())
    fail(ErrorCode::MalformedJson, "manifest: 'entries' must be an array");

  std::set<std::string> declared;
  bool has_declared = doc.contains("label_set");
  if (has_declared) {
    for (const auto& l : detail::get_required<std::vector<std::string>>(doc, "label_set", where))
      declared.insert(l);
  }

  std::set<std::pair<std::string, std::string>> seen;
  for (std::size_t i = 0; i < raw_entries->size(); ++i) {
    const auto& je = (*raw_entries)[i];
    const std::string ew = "manifest entry " + std::to_string(i);
    detail::check_fields(je, {"path", "channel", "label"}, ew);
    ManifestEntry e;
    e.path = detail::get_required<std::string>(je, "path", ew);
    const auto& ch = je.find("channel");
    if (ch == je.end()) {
      e.channel = "0";
    } else if (ch->is_number_unsigned() || ch->is_number_integer()) {
      e.channel = std::to_string(ch->get<long long>());
    } else if (ch->is_string()) {
      e.channel = ch->get<std::string>();
    } else {
      fail(ErrorCode::MalformedJson, ew + ": channel must be a string or integer");
    }
    e.label = detail::get_required<std::string>(je, "label", ew);
    if (has_declared && !declared.count(e.label))
      fail(ErrorCode::UnknownLabel, ew + ": label '" + e.label + "' not in label_set");
    if (!seen.emplace(e.path, e.channel).second)
      fail(ErrorCode::DuplicateEntry, ew + ": duplicate (path, channel) = (" + e.path + ", " + e.channel + ")");
    m.entries.push_back(std::move(e));
  }
  if (!has_declared)
    for (const auto& e : m.entries) declared.insert(e.label);
  m.declared_labels.assign(declared.begin(), declared.end());

  if (check_files) {
    for (const auto& e : m.entries)
      if (!fs::is_regular_file(m.resolve(e)))
        fail(ErrorCode::MissingFile, "manifest references missing file " + m.resolve(e).string());
  }
  return m;
}

inline RecordingManifest load_manifest(const fs::path& path) {
  auto doc = detail::read_json_file(path);
  return manifest_from_json(doc, path.parent_path());
}

inline nlohmann::json manifest_to_json(const RecordingManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries)
    entries.push_back({{"path", e.path}, {"channel", e.channel}, {"label", e.label}});
  return {{"dataset_tag", m.dataset_tag},
          {"sample_rate_hz", m.sample_rate_hz},
          {"label_set", m.declared_labels},
          {"entries", std::move(entries)}};
}

inline void write_manifest(const RecordingManifest& m, const fs::path& path) {
  detail::write_text(path, manifest_to_json(m).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// CSV signal files

struct CsvTable {
  std::vector<std::string> header;  // empty when the file has no header row
  std::vector<std::vector<double>> columns;
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    auto cell = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r'))
      cell.remove_suffix(1);
    cells.push_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline bool parse_double(std::string_view cell, double& out) {
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  if (cell.empty()) return false;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return ec == std::errc{} && ptr == cell.data() + cell.size();
}

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Reads a numeric CSV. A first row containing any non-numeric cell is a header.
inline CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::MissingFile, path.string());
  CsvTable table;
  std::string line;
  std::size_t row = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto cells = detail::split_csv_line(line);
    std::vector<double> values(cells.size());
    bool numeric = true;
    for (std::size_t c = 0; c < cells.size(); ++c) numeric = numeric && detail::parse_double(cells[c], values[c]);
    if (!numeric) {
      if (width == 0 && table.header.empty()) {
        for (auto c : cells) table.header.emplace_back(c);
        width = cells.size();
        table.columns.resize(width);
        continue;
      }
      fail(ErrorCode::MalformedCsv, path.string() + ":" + std::to_string(row) + ": non-numeric cell");
    }
    if (width == 0) {
      width = cells.size();
      table.columns.resize(width);
    }
    if (cells.size() != width)
      fail(ErrorCode::ShapeMismatch, path.string() + ":" + std::to_string(row) + ": expected " +
                                         std::to_string(width) + " columns");
    for (std::size_t c = 0; c < width; ++c) {
      if (!std::isfinite(values[c]))
        fail(ErrorCode::NonFinite, path.string() + ":" + std::to_string(row) + ": non-finite sample");
      table.columns[c].push_back(values[c]);
    }
  }
  return table;
}

/// Writes columns with shortest round-trip formatting so values reload bit-exactly.
inline void write_csv(const fs::path& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& columns) {
  std::string text;
  if (!header.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) text += (c ? "," : "") + header[c];
    text += '\n';
  }
  std::size_t rows = columns.empty() ? 0 : columns.front().size();
  for (const auto& col : columns)
    if (col.size() != rows) fail(ErrorCode::ShapeMismatch, "write_csv: ragged columns");
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (c) text += ',';
      text += detail::format_double(columns[c][r]);
    }
    text += '\n';
  }
  detail::write_text(path, text);
}

namespace detail {

inline std::vector<double> select_channel(CsvTable& table, const ManifestEntry& e, const fs::path& where) {
  for (std::size_t c = 0; c < table.header.size(); ++c)
    if (table.header[c] == e.channel) return table.columns[c];
  std::size_t idx = 0;
  auto [ptr, ec] = std::from_chars(e.channel.data(), e.channel.data() + e.channel.size(), idx);
  if (ec != std::errc{} || ptr != e.channel.data() + e.channel.size() || idx >= table.columns.size())
    fail(ErrorCode::ShapeMismatch, where.string() + ": no channel '" + e.channel + "'");
  return table.columns[idx];
}

}  // namespace detail

/// Loads the channel selected by a manifest entry.
inline std::vector<double> load_recording(const RecordingManifest& m, std::size_t entry_index) {
  const auto& e = m.entries.at(entry_index);
  auto table = read_csv(m.resolve(e));
  return detail::select_channel(table, e, m.resolve(e));
}

/// Loads every entry in manifest order, parsing each file once.
inline std::vector<std::vector<double>> load_recordings(const RecordingManifest& m) {
  std::map<fs::path, CsvTable> tables;
  std::vector<std::vector<double>> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) {
    const auto path = m.resolve(e);
    auto it = tables.find(path);
    if (it == tables.end()) it = tables.emplace(path, read_csv(path)).first;
    out.push_back(detail::select_channel(it->second, e, path));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segmentation, normalization, splitting

/// Default window: one second of samples.
inline std::size_t default_segment_length(double sample_rate) {
  return static_cast<std::size_t>(std::llround(sample_rate));
}

inline std::vector<TimeSeriesSegment> segment(std::span<const double> recording, double sample_rate,
                                              std::size_t length, std::size_t hop, int label = 0,
                                              std::size_t entry = 0) {
  if (length < 2) fail(ErrorCode::InvalidConfig, "segment length must be >= 2");
  if (hop < 1) fail(ErrorCode::InvalidConfig, "segment hop must be >= 1");
  if (recording.size() < length)
    fail(ErrorCode::TooShort, "recording of " + std::to_string(recording.size()) +
                                  " samples is shorter than one window of " + std::to_string(length));
  std::size_t count = (recording.size() - length) / hop + 1;
  std::vector<TimeSeriesSegment> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::size_t off = k * hop;
    TimeSeriesSegment s;
    s.samples.assign(recording.begin() + static_cast<std::ptrdiff_t>(off),
                     recording.begin() + static_cast<std::ptrdiff_t>(off + length));
    s.sample_rate = sample_rate;
    s.label = label;
    s.source = {entry, off};
    out.push_back(std::move(s));
  }
  return out;
}

inline TimeSeriesSegment normalize(TimeSeriesSegment seg, NormalizeMode mode) {
  auto& x = seg.samples;
  if (x.empty()) fail(ErrorCode::EmptyInput, "cannot normalize an empty segment");
  for (double v : x)
    if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "segment contains a non-finite sample");
  const double n = static_cast<double>(x.size());
  switch (mode) {
    case NormalizeMode::None:
      break;
    case NormalizeMode::ZScore: {
      double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
      double ss = 0.0;
      for (double v : x) ss += (v - mean) * (v - mean);
      double sd = std::sqrt(ss / n);
      if (sd == 0.0) {
        std::fill(x.begin(), x.end(), 0.0);
      } else {
        for (double& v : x) v = (v - mean) / sd;
      }
      break;
    }
    case NormalizeMode::MinMax: {
      auto [lo, hi] = std::minmax_element(x.begin(), x.end());
      double a = *lo, b = *hi;
      if (a == b) {
        std::fill(x.begin(), x.end(), 0.0);
      } else {
        for (double& v : x) v = (v - a) / (b - a);
      }
      break;
    }
  }
  return seg;
}

struct SplitFractions {
  double train = 0.82;
  double test = 0.18;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Per-class shuffled split; each class keeps round(train * n_c) items (clamped to
/// leave at least one on each side) so class proportions hold within one item.
inline SplitIndices stratified_split_indices(std::span<const int> labels, SplitFractions fractions,
                                             std::uint64_t seed) {
  if (!(fractions.train > 0.0) || !(fractions.test > 0.0) ||
      std::abs(fractions.train + fractions.test - 1.0) > 1e-9)
    fail(ErrorCode::InvalidConfig, "split fractions must be positive and sum to 1");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  SplitIndices out;
  for (auto& [cls, idx] : by_class) {
    if (idx.size() < 2)
      fail(ErrorCode::EmptyClass, "class " + std::to_string(cls) + " has fewer than 2 segments");
    std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(cls)}));
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n = static_cast<long long>(idx.size());
    long long k = std::clamp(std::llround(fractions.train * static_cast<double>(n)), 1LL, n - 1);
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + k);
    out.test.insert(out.test.end(), idx.begin() + k, idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

struct SegmentSplit {
  std::vector<TimeSeriesSegment> train;
  std::vector<TimeSeriesSegment> test;
};

inline SegmentSplit stratified_split(std::span<const TimeSeriesSegment> segments, SplitFractions fractions,
                                     std::uint64_t seed) {
  std::vector<int> labels;
  labels.reserve(segments.size());
  for (const auto& s : segments) labels.push_back(s.label);
  auto idx = stratified_split_indices(labels, fractions, seed);
  SegmentSplit out;
  for (auto i : idx.train) out.train.push_back(segments[i]);
  for (auto i : idx.test) out.test.push_back(segments[i]);
  return out;
}

}  // namespace wpedl
