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

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "wpedl/harness.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code(const wpedl::Error& e) {
  switch (e.category()) {
    case wpedl::ErrorCategory::Config: return kExitConfig;
    case wpedl::ErrorCategory::Numeric: return kExitNumeric;
    case wpedl::ErrorCategory::Data: return kExitData;
  }
  return kExitData;
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool emit_images = false;
};

void add_common(CLI::App* sub, Options& opt) {
  sub->add_option("--config", opt.config, "experiment config (JSON)")->required();
  sub->add_option("--seed", opt.seed, "override the config seed");
  sub->add_option("--out", opt.out, "override the output directory");
  sub->add_flag("--emit-images", opt.emit_images, "write per-image PNGs and sidecars");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wpedl: weighted probability ensemble experiments on spectral images"};
  app.require_subcommand(1);
  Options opt;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "generate or ingest recordings into <out>/data"},
      {"make-spectrograms", "segment, split and render spectral images"},
      {"train", "train the native classifiers"},
      {"evaluate", "score checkpoints on the validation and test splits"},
      {"fuse", "weight the pool and fuse its test predictions"},
      {"ablate", "fuse classifier subsets and write the experiment report"},
      {"run", "run every stage in order"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    if (name == "run") sub->alias("run_experiment");
    add_common(sub, opt);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    auto config = wpedl::load_experiment_config(opt.config);
    if (opt.seed) config.seed = *opt.seed;
    if (!opt.out.empty()) config.output_dir = opt.out;
    config.emit_images = config.emit_images || opt.emit_images;
    wpedl::ExperimentRun run(std::move(config));
    if (command == "run") {
      wpedl::run_experiment(run);
    } else {
      // Standalone make-spectrograms always writes images: later stages read them from disk.
      wpedl::run_stage(run, command, true);
    }
  } catch (const wpedl::Error& e) {
    std::cerr << "wpedl " << command << ": " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "wpedl " << command << ": " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
