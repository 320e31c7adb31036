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
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "wpedl/harness.hpp"

using namespace wpedl;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("wpedl_test_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

nlohmann::json small_config(const fs::path& out, std::size_t per_class = 20) {
  return {
      {"name", "small"},
      {"seed", 3},
      {"data",
       {{"synthetic",
         {{"classes",
           {{{"class_id", "HLT"}, {"noise_std", 0.1}},
            {{"class_id", "BRB"},
             {"noise_std", 0.1},
             {"sidebands", {{{"offset_hz", -12}, {"amplitude", 0.4}}, {{"offset_hz", 12}, {"amplitude", 0.4}}}}},
            {{"class_id", "BRG"},
             {"noise_std", 0.1},
             {"impulse_train", {{"rate_hz", 8}, {"decay_per_s", 40}, {"amplitude", 2.0}, {"carrier_hz", 300}}}}}},
          {"per_class", per_class}}}}},
      {"split", {{"test", 0.25}, {"validation", 0.25}}},
      {"render", {{"image_size", 32}}},
      {"pool",
       {{{"id", "soft"}, {"backend", "softmax"}, {"hyper", {{"grid", 8}, {"epochs", 10}}}},
        {{"id", "conv"},
         {"backend", "cnn"},
         {"hyper", {{"input_size", 8}, {"epochs", 3}, {"arch", {{"conv_channels", {4}}, {"hidden", 8}}}}}}}},
      {"output_dir", out.string()}};
}

fs::path write_config(const fs::path& dir, const nlohmann::json& j) {
  const auto path = dir / "config.json";
  std::ofstream(path) << j.dump(2);
  return path;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(const std::string& args) {
  const std::string cmd = std::string(WPEDL_CLI_PATH) + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::size_t count_ext(const fs::path& dir, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

ProgressFn quiet() {
  return [](const std::string&) {};
}

}  // namespace

TEST(Harness, ReportStructure) {
  auto dir = fresh_dir("structure");
  auto config = experiment_config_from_json(small_config(dir / "out"));
  const auto report_path = run_experiment(config, quiet());
  const auto report = detail::read_json_file(report_path);
  EXPECT_NO_THROW(validate_report(report));
  ASSERT_EQ(report.at("classifiers").size(), 2u);
  for (const auto& c : report.at("classifiers")) {
    EXPECT_GT(c.at("weight").get<double>(), 0.0);
    EXPECT_DOUBLE_EQ(c.at("weight").get<double>(), compute_weight(classifier_score_from_json(c.at("validation"))));
  }
  EXPECT_TRUE(report.at("fused").at("averaged").is_object());
  EXPECT_EQ(report.at("ablation").at("rows").size(), 3u);
  EXPECT_EQ(report.at("seed"), 3);
  EXPECT_EQ(report.at("samples").at("test"), 15);
  EXPECT_FALSE(fs::exists(dir / "out" / "STALE.json"));
  for (const auto& [kind, path] : report.at("artifacts").items()) {
    if (path.is_string()) {
      EXPECT_TRUE(fs::exists(dir / "out" / path.get<std::string>())) << kind;
    }
  }
  const std::string name = report_path.filename().string();
  EXPECT_NE(name.find(config_hash(config)), std::string::npos);
  EXPECT_NE(name.find("-s3"), std::string::npos);
}

TEST(Harness, ConfigValidationHappensBeforeWork) {
  auto dir = fresh_dir("validation");
  auto j = small_config(dir / "out");
  j["pool"] = nlohmann::json::array();
  try {
    experiment_config_from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::Config);
  }
  EXPECT_EQ(cli("run --config " + write_config(dir, j).string()), 2);
  EXPECT_FALSE(fs::exists(dir / "out"));

  auto bad = small_config(dir / "out");
  bad["pool"][0]["hyper"]["learning_rate"] = 0.1;
  EXPECT_THROW(experiment_config_from_json(bad), Error);
  bad = small_config(dir / "out");
  bad["unexpected"] = 1;
  EXPECT_THROW(experiment_config_from_json(bad), Error);
  bad = small_config(dir / "out");
  bad["pool"][1]["id"] = "soft";
  EXPECT_THROW(experiment_config_from_json(bad), Error);
  bad = small_config(dir / "out");
  bad["split"]["test"] = 1.0;
  EXPECT_THROW(experiment_config_from_json(bad), Error);
}

TEST(Harness, DeterministicAcrossRunsAndDirectories) {
  auto dir = fresh_dir("determinism");
  auto a = experiment_config_from_json(small_config(dir / "a"));
  auto b = experiment_config_from_json(small_config(dir / "b"));
  const auto ra = run_experiment(a, quiet());
  const auto rb = run_experiment(b, quiet());
  EXPECT_EQ(ra.filename(), rb.filename());
  EXPECT_EQ(mask_timings(detail::read_json_file(ra)).dump(), mask_timings(detail::read_json_file(rb)).dump());
  OutputLayout la(a), lb(b);
  for (const char* id : {"soft", "conv"}) {
    EXPECT_EQ(slurp(la.checkpoint(id)), slurp(lb.checkpoint(id)));
    EXPECT_EQ(slurp(la.probabilities(id)), slurp(lb.probabilities(id)));
  }
  // Deleting the output and rerunning reproduces it.
  const auto before = slurp(la.report("fuse"));
  fs::remove_all(dir / "a");
  run_experiment(a, quiet());
  EXPECT_EQ(slurp(la.report("fuse")), before);

  auto other = a;
  other.seed = 4;
  EXPECT_NE(OutputLayout(other).report("report").filename(), ra.filename());
}

TEST(Harness, SubcommandsComposeToRunExperiment) {
  auto dir = fresh_dir("compose");
  const auto whole_cfg = write_config(dir, small_config(dir / "whole"));
  ASSERT_EQ(cli("run --config " + whole_cfg.string()), 0);
  fs::create_directories(dir / "staged");
  const auto staged_cfg = write_config(dir / "staged", small_config(dir / "staged" / "out"));
  for (const char* stage : {"gen-data", "make-spectrograms", "train", "evaluate", "fuse", "ablate"})
    ASSERT_EQ(cli(std::string(stage) + " --config " + staged_cfg.string()), 0) << stage;

  auto whole = experiment_config_from_json(small_config(dir / "whole"));
  auto staged = experiment_config_from_json(small_config(dir / "staged" / "out"));
  OutputLayout lw(whole), ls(staged);
  EXPECT_EQ(mask_timings(detail::read_json_file(lw.report("report"))).dump(),
            mask_timings(detail::read_json_file(ls.report("report"))).dump());
  for (const char* kind : {"weights", "fuse", "ablation", "evaluate"}) EXPECT_EQ(slurp(lw.report(kind)), slurp(ls.report(kind))) << kind;
  for (const char* id : {"soft", "conv"}) {
    EXPECT_EQ(slurp(lw.checkpoint(id)), slurp(ls.checkpoint(id)));
    EXPECT_EQ(slurp(lw.probabilities(id)), slurp(ls.probabilities(id)));
  }
  EXPECT_EQ(slurp(lw.index_csv()), slurp(ls.index_csv()));
}

TEST(Harness, SeedFlagOverridesConfig) {
  auto dir = fresh_dir("seed");
  const auto cfg = write_config(dir, small_config(dir / "out", 6));
  ASSERT_EQ(cli("run --seed 11 --config " + cfg.string()), 0);
  auto config = experiment_config_from_json(small_config(dir / "out", 6));
  config.seed = 11;
  EXPECT_TRUE(fs::exists(OutputLayout(config).report("report")));
}

TEST(Harness, MakeSpectrogramsWritesImageAndSidecarPerSegment) {
  auto dir = fresh_dir("spectrograms");
  auto j = small_config(dir / "out");
  j["data"]["synthetic"]["classes"] = {{{"class_id", "A"}, {"noise_std", 0.1}},
                                       {{"class_id", "B"}, {"noise_std", 0.1}, {"fundamental_hz", 120}}};
  j["data"]["synthetic"]["per_class"] = 50;
  const auto cfg = write_config(dir, j);
  ASSERT_EQ(cli("gen-data --config " + cfg.string()), 0);
  ASSERT_EQ(cli("make-spectrograms --config " + cfg.string()), 0);
  EXPECT_EQ(count_ext(dir / "out" / "spectrograms", ".png"), 100u);
  EXPECT_EQ(count_ext(dir / "out" / "spectrograms", ".json"), 101u);  // sidecars plus labels.json
  auto index = read_sample_index(dir / "out" / "spectrograms" / "index.csv");
  ASSERT_EQ(index.samples.size(), 100u);
  const auto& first = index.samples.front();
  const auto side = detail::read_json_file(dir / "out" / "spectrograms" / (first.id + ".json"));
  EXPECT_EQ(side.at("split"), first.split);
  EXPECT_EQ(side.at("stft").at("window_len"), 256);
  const auto png = read_png(dir / "out" / "spectrograms" / (first.id + ".png"));
  EXPECT_EQ(png.width, 32u);
}

TEST(Harness, EvaluateWritesMetrics) {
  auto dir = fresh_dir("evaluate");
  const auto cfg = write_config(dir, small_config(dir / "out"));
  for (const char* stage : {"gen-data", "make-spectrograms", "train", "evaluate"})
    ASSERT_EQ(cli(std::string(stage) + " --config " + cfg.string()), 0) << stage;
  auto config = experiment_config_from_json(small_config(dir / "out"));
  const auto j = detail::read_json_file(OutputLayout(config).report("evaluate"));
  ASSERT_EQ(j.at("classifiers").size(), 2u);
  for (const auto& c : j.at("classifiers")) {
    EXPECT_EQ(c.at("test").at("samples"), 15);
    EXPECT_EQ(c.at("test").at("confusion_matrix").size(), 3u);
    const double acc = c.at("test").at("averaged").at("accuracy");
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
  }
}

TEST(Harness, ExitCodesAndStaleMarker) {
  auto dir = fresh_dir("exit");
  const auto cfg = write_config(dir, small_config(dir / "out"));
  EXPECT_EQ(cli("train --config " + cfg.string()), 3);  // nothing upstream yet
  const auto stale = detail::read_json_file(dir / "out" / "STALE.json");
  EXPECT_EQ(stale.at("stage"), "train");
  EXPECT_EQ(stale.at("code"), "MissingArtifact");
  EXPECT_EQ(cli("bogus --config " + cfg.string()), 2);
  EXPECT_EQ(cli("run --config " + (dir / "missing.json").string()), 3);
  std::ofstream(dir / "broken.json") << "{ not json";
  EXPECT_EQ(cli("run --config " + (dir / "broken.json").string()), 2);

  // All-zero explicit weights are a numeric failure.
  auto j = small_config(dir / "out");
  std::ofstream(dir / "zero.json") << R"({"classifiers": {"soft": {"w": 0}, "conv": {"w": 0}}, "order": ["soft", "conv"]})";
  j["fusion"] = {{"weights", (dir / "zero.json").string()}};
  EXPECT_EQ(cli("run --config " + write_config(dir, j).string()), 4);
  EXPECT_EQ(detail::read_json_file(dir / "out" / "STALE.json").at("stage"), "fuse");
  ASSERT_EQ(cli("run --config " + write_config(dir, small_config(dir / "out")).string()), 0);
  EXPECT_FALSE(fs::exists(dir / "out" / "STALE.json"));
}

TEST(Harness, ExternalOnlyFuse) {
  auto dir = fresh_dir("external");
  std::ofstream(dir / "index.csv") << "sample_id,label,split\n"
                                      "v1,cat,validation\nv2,dog,validation\n"
                                      "t1,cat,test\nt2,dog,test\nt3,dog,test\n";
  // Classifier A is perfect on validation, B is always wrong there.
  std::ofstream(dir / "a.csv") << "sample_id,p_cat,p_dog\nv1,0.9,0.1\nv2,0.2,0.8\nt1,0.6,0.4\nt2,0.45,0.55\nt3,0.7,0.3\n";
  std::ofstream(dir / "b.csv") << "sample_id,p_dog,p_cat\nv1,0.7,0.3\nv2,0.4,0.6\nt1,0.9,0.1\nt2,0.1,0.9\nt3,0.2,0.8\n";
  nlohmann::json j = {{"name", "ext"},
                      {"data", {{"index", "index.csv"}}},
                      {"pool", {{{"id", "A"}, {"backend", "external"}, {"path", "a.csv"}},
                                {{"id", "B"}, {"backend", "external"}, {"path", "b.csv"}}}},
                      {"output_dir", "out"}};
  const auto cfg = write_config(dir, j);
  ASSERT_EQ(cli("run --config " + cfg.string()), 0);
  auto config = load_experiment_config(cfg);
  OutputLayout layout(config);
  const auto fuse = detail::read_json_file(layout.report("fuse"));
  const auto report = detail::read_json_file(layout.report("report"));
  EXPECT_NO_THROW(validate_report(report));

  // Validation: A scores 1 on every metric; B scores 0 on P/R/F1/accuracy and AUC 0.
  const double wa = 4 * std::tanh(1.0), wb = 0.0;
  EXPECT_DOUBLE_EQ(fuse.at("classifiers")[0].at("weight").get<double>(), wa);
  EXPECT_DOUBLE_EQ(fuse.at("classifiers")[1].at("weight").get<double>(), wb);
  // With B weighted out the fused vectors are A's: t1 -> cat, t2 -> dog, t3 -> cat.
  const auto& d = fuse.at("decisions");
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d[0].at("predicted"), "cat");
  EXPECT_EQ(d[1].at("predicted"), "dog");
  EXPECT_EQ(d[2].at("predicted"), "cat");
  EXPECT_EQ(d[1].at("fused")[1].get<double>(), 0.55);
  EXPECT_DOUBLE_EQ(report.at("fused").at("averaged").at("accuracy").get<double>(), 2.0 / 3.0);

  // Missing predictions for a test sample are a data error.
  std::ofstream(dir / "short.csv") << "sample_id,p_cat,p_dog\nv1,0.9,0.1\nv2,0.2,0.8\nt1,0.6,0.4\n";
  j["pool"][1]["path"] = "short.csv";
  EXPECT_EQ(cli("run --config " + write_config(dir, j).string()), 3);
}

TEST(ReportSchema, RejectsMalformedReports) {
  auto dir = fresh_dir("schema");
  nlohmann::json j = {{"data", {{"index", "index.csv"}}},
                      {"pool", {{{"id", "A"}, {"backend", "external"}, {"path", "a.csv"}}}},
                      {"fusion", {{"weights", "w.json"}}},
                      {"output_dir", "out"}};
  std::ofstream(dir / "index.csv") << "sample_id,label,split\nt1,x,test\nt2,y,test\n";
  std::ofstream(dir / "a.csv") << "sample_id,p_x,p_y\nt1,0.75,0.25\nt2,0.5,0.5\n";
  std::ofstream(dir / "w.json") << R"({"classifiers": {"A": {"w": 2}}})";
  const auto cfg = write_config(dir, j);
  ASSERT_EQ(cli("run --config " + cfg.string()), 0);
  const auto report = detail::read_json_file(OutputLayout(load_experiment_config(cfg)).report("report"));
  EXPECT_NO_THROW(validate_report(report));
  EXPECT_EQ(report.at("weights_source"), "file");

  auto broken = report;
  broken.erase("fused");
  EXPECT_THROW(validate_report(broken), Error);
  broken = report;
  broken["classifiers"] = nlohmann::json::array();
  EXPECT_THROW(validate_report(broken), Error);
  broken = report;
  broken["fused"]["averaged"]["accuracy"] = 1.5;
  EXPECT_THROW(validate_report(broken), Error);
  broken = report;
  broken["extra"] = true;
  EXPECT_THROW(validate_report(broken), Error);
}

TEST(Harness, ManifestSegmentsDefaultToHalfOverlapAndZScore) {
  auto dir = fresh_dir("manifest_defaults");
  std::vector<double> a(3000), b(3000);
  for (std::size_t n = 0; n < a.size(); ++n) {
    a[n] = 5.0 + std::sin(0.37 * static_cast<double>(n));
    b[n] = -2.0 + std::cos(0.11 * static_cast<double>(n));
  }
  write_csv(dir / "rec.csv", {"a", "b"}, {a, b});
  RecordingManifest m;
  m.dataset_tag = "bench";
  m.sample_rate_hz = 1000;
  m.declared_labels = {"A", "B"};
  m.entries = {{"rec.csv", "a", "A"}, {"rec.csv", "b", "B"}};
  write_manifest(m, dir / "manifest.json");
  nlohmann::json j = {{"data", {{"manifest", "manifest.json"}}},
                      {"split", {{"test", 0.2}, {"validation", 0.25}}},
                      {"render", {{"image_size", 16}}},
                      {"pool", {{{"id", "s"}, {"backend", "softmax"}, {"hyper", {{"grid", 4}, {"epochs", 2}}}}}},
                      {"output_dir", "out"}};
  auto config = load_experiment_config(write_config(dir, j));
  EXPECT_EQ(config.segment.normalize, NormalizeMode::ZScore);
  ExperimentRun run(config, quiet());
  run_stage(run, "gen-data");
  run_stage(run, "make-spectrograms", false);
  // 1000-sample windows every 500 samples: (3000 - 1000) / 500 + 1 = 5 per recording.
  const auto idx = read_sample_index(run.layout.index_csv());
  EXPECT_EQ(idx.samples.size(), 10u);
  EXPECT_EQ(idx.positions("test").size(), 2u);
}
