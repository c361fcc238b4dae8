// Copyright 2026 The milkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// milkit command-line tool. Exit codes: 0 ok, 2 config, 3 data, 4 numeric.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "milkit/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string zoo;
  bool quiet = false;
};

milkit::ExperimentConfig resolve_config(const Globals& g) {
  auto cfg = g.config.empty() ? milkit::ExperimentConfig::desk() : milkit::ExperimentConfig::load(g.config);
  if (g.seed) cfg.seeds = {*g.seed};
  if (!g.out.empty()) cfg.output_dir = g.out;
  if (!g.zoo.empty()) cfg.zoo = g.zoo;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiple instance learning transfer experiments"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON); the desk preset when omitted");
  app.add_option("--seed", g.seed, "Run this seed only, overriding the config's list");
  app.add_option("--out", g.out, "Output directory, overriding the config");
  app.add_option("--zoo", g.zoo, "Model zoo manifest path, overriding the config");
  app.add_flag("-q,--quiet", g.quiet, "Only write the run log");

  std::vector<std::string> models;
  auto with_models = [&](CLI::App* sub) {
    sub->add_option("--model", models, "Restrict to these configured models (repeatable)");
    return sub;
  };

  auto* generate = app.add_subcommand("generate", "Write the synthetic suite (or check the manifests)");
  auto* pretrain = with_models(app.add_subcommand("pretrain", "Pretrain each model and publish it to the zoo"));
  auto* transfer = with_models(app.add_subcommand("transfer", "Finetune from pretrained and random init"));
  auto* knn = with_models(app.add_subcommand("knn", "KNN on frozen slide-level embeddings"));
  auto* fewshot = with_models(app.add_subcommand("fewshot", "Finetune on K bags per class"));
  auto* svcca = with_models(app.add_subcommand("svcca", "Layer stability across finetuning"));
  auto* reset = with_models(app.add_subcommand("reset", "Finetune with pretrained layers reset"));
  auto* sweep = with_models(app.add_subcommand("scale-sweep", "Pretrain and transfer each scale model"));
  auto* report = app.add_subcommand("report", "Aggregate results into tables");
  std::string dump_config;
  generate->add_option("--write-config", dump_config, "Also write the resolved config to this path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    const auto cfg = resolve_config(g);
    milkit::Experiment ex(cfg, g.quiet ? nullptr : &std::cout);
    if (generate->parsed()) {
      if (!dump_config.empty()) {
        std::ofstream f(dump_config, std::ios::trunc);
        if (!f) throw milkit::DataError("cannot write " + dump_config);
        f << cfg.to_json().dump(2) << '\n';
      }
      ex.generate();
    }
    if (pretrain->parsed()) ex.pretrain(models);
    if (transfer->parsed()) ex.transfer(models);
    if (knn->parsed()) ex.knn(models);
    if (fewshot->parsed()) ex.fewshot(models);
    if (svcca->parsed()) ex.svcca(models);
    if (reset->parsed()) ex.reset(models);
    if (sweep->parsed()) ex.scale_sweep(models);
    if (report->parsed()) ex.report();
  } catch (const milkit::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const milkit::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const milkit::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
