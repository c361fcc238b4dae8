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

#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "milkit/experiment.hpp"
#include "support/tempdir.hpp"

using namespace milkit;
using milkit::testing::TempDir;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny(const fs::path& out) {
  ExperimentConfig c;
  c.seeds = {0, 1};
  c.output_dir = out;
  SuiteConfig s;
  s.feat_dim = 16;
  s.n_class_concepts = 4;
  s.n_background_concepts = 2;
  s.witness_rate = 0.2;
  s.min_bag_size = 5;
  s.max_bag_size = 10;
  s.noise_sigma = 0.2;
  s.pretrain_bags = 80;
  s.n_targets = 2;
  s.target_bags = 40;
  c.suite = s;
  c.models = {{"ab", ModelConfig::abmil(16, 8, 4, {8, 8}, 2)}};
  c.train.lr = 1e-3;
  c.train.max_epochs = 3;
  c.train.min_epochs = 1;
  c.train.patience = 1;
  c.n_bootstrap = 20;
  c.knn_k = 3;
  c.k_shots = {2, 4};
  c.svcca_max_instances = 200;
  c.resets = {ResetSpec::kAttn, ResetSpec::kAll};
  c.scale_models = {{"s", ModelConfig::abmil(16, 4, 4, {}, 2)}};
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> result_files(const fs::path& out) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::recursive_directory_iterator(out / "results"))
    if (e.is_regular_file()) m[fs::relative(e.path(), out).generic_string()] = slurp(e.path());
  return m;
}

}  // namespace

TEST_CASE("experiment config json") {
  const auto c = tiny("runs");
  SUBCASE("round trip keeps the digest") {
    const auto back = ExperimentConfig::from_json(c.to_json());
    CHECK(back.digest() == c.digest());
    CHECK(back.to_json() == c.to_json());
  }
  SUBCASE("digest ignores seeds and paths, not the recipe") {
    auto d = c;
    d.seeds = {7};
    d.output_dir = "elsewhere";
    d.zoo = "z.json";
    CHECK(d.digest() == c.digest());
    d.train.lr = 2e-3;
    CHECK(d.digest() != c.digest());
  }
  SUBCASE("schema violations") {
    auto j = c.to_json();
    j["bogus"] = 1;
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
    j = c.to_json();
    j.erase("config_version");
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
    j = c.to_json();
    j["models"]["ab"]["n_classes"] = 3;
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
    j = c.to_json();
    j["seeds"] = Json::array();
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
    j = c.to_json();
    j["pretrain"] = {{"manifest", "x.csv"}};
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
    j = c.to_json();
    j["train"]["lr"] = "fast";
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
    j = c.to_json();
    j["reset"]["specs"] = {"lin9"};
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
    j = c.to_json();
    j["models"] = {{"a/b", j["models"]["ab"]}};
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  }
  SUBCASE("relative paths resolve against the config file") {
    TempDir dir;
    auto j = c.to_json();
    j["output_dir"] = "out";
    std::ofstream(dir.path() / "c.json") << j.dump();
    CHECK(ExperimentConfig::load(dir.path() / "c.json").output_dir == dir.path() / "out");
    CHECK_THROWS_AS(ExperimentConfig::load(dir.path() / "missing.json"), ConfigError);
    std::ofstream(dir.path() / "bad.json") << "{ nope";
    CHECK_THROWS_AS(ExperimentConfig::load(dir.path() / "bad.json"), ConfigError);
  }
  SUBCASE("shipped desk config matches the preset") {
    const auto shipped = ExperimentConfig::load(fs::path(MILKIT_SOURCE_DIR) / "configs/desk.json");
    CHECK(shipped.digest() == ExperimentConfig::desk().digest());
    CHECK(shipped.seeds == ExperimentConfig::desk().seeds);
  }
}

TEST_CASE("zoo manifest") {
  TempDir dir;
  Zoo zoo(dir.path() / "zoo.json");
  const auto cfg = ModelConfig::abmil(8, 4, 4, {}, 3);
  Checkpoint ck{cfg, build_model(cfg, 1), TaskSpec::make("pre", 3), {}, {}, kCheckpointVersion};

  SUBCASE("publish and load") {
    CHECK(zoo.entries().empty());
    zoo.publish("m-pre-s0", ck, Json{{"value", 0.5}});
    const auto loaded = zoo.load("m-pre-s0");
    CHECK(loaded.params.bitwise_equal(ck.params));
    const auto e = zoo.find("m-pre-s0");
    REQUIRE(e);
    CHECK(e->cfg_digest == cfg.digest());
    CHECK(e->checkpoint.is_relative());
    zoo.publish("m-pre-s0", ck, Json{{"value", 0.6}});
    CHECK(zoo.entries().size() == 1);
    CHECK(zoo.find("m-pre-s0")->eval.at("value") == 0.6);
  }
  SUBCASE("missing entry is a config error") { CHECK_THROWS_AS(zoo.load("nope"), ConfigError); }
  SUBCASE("digest mismatch is caught on load") {
    zoo.publish("m-pre-s0", ck, Json::object());
    auto j = Json::parse(slurp(zoo.path()));
    j["entries"][0]["cfg_digest"] = "0000000000000000";
    std::ofstream(zoo.path()) << j.dump();
    CHECK_THROWS_AS(zoo.load("m-pre-s0"), DataError);
  }
  SUBCASE("concurrent publishers keep every entry") {
    std::vector<std::thread> ts;
    for (int i = 0; i < 6; ++i)
      ts.emplace_back([&, i] { Zoo(dir.path() / "zoo.json").publish("m-pre-s" + std::to_string(i), ck, Json::object()); });
    for (auto& t : ts) t.join();
    CHECK(zoo.entries().size() == 6);
  }
}

TEST_CASE("experiment commands") {
  TempDir dir;
  const auto cfg = tiny(dir.path() / "out");

  SUBCASE("transfer yields pretrained and random pairs with recomputed deltas") {
    Experiment ex(cfg);
    ex.pretrain();
    ex.transfer();
    const auto rep = ex.report();
    int pairs = 0;
    for (const auto& d : rep.at("deltas")) {
      if (d.at("command") != "transfer") continue;
      ++pairs;
      CHECK(d.at("n_pairs") == 2);
      // recompute from the raw result files
      double sum = 0.0;
      for (auto seed : cfg.seeds) {
        const auto base = cfg.output_dir / "results/transfer/ab" / d.at("target").get<std::string>();
        const auto file = "seed" + std::to_string(seed) + ".json";
        const auto p = Json::parse(slurp(base / "pretrained" / file));
        const auto r = Json::parse(slurp(base / "random" / file));
        sum += p.at("eval").at("value").get<double>() - r.at("eval").at("value").get<double>();
      }
      CHECK(d.at("mean").get<double>() == doctest::Approx(sum / 2).epsilon(1e-12));
    }
    CHECK(pairs == 2);
    CHECK(fs::exists(cfg.output_dir / "report/tables/transfer.csv"));
    CHECK(fs::exists(cfg.output_dir / "report/scatter.csv"));
    CHECK(fs::exists(cfg.output_dir / "zoo/zoo.json"));
    CHECK(fs::exists(cfg.output_dir / "results/transfer/ab/target0/random/seed1.predictions.csv"));
    CHECK(fs::exists(cfg.output_dir / "results/transfer/ab/target0/random/seed1.history.jsonl"));
  }
  SUBCASE("reruns are idempotent and fresh runs are bit-identical") {
    Experiment(cfg).pretrain();
    Experiment(cfg).transfer();
    const auto first = result_files(cfg.output_dir);
    const auto log1 = slurp(cfg.output_dir / "logs/transfer.log");
    Experiment(cfg).transfer();
    CHECK(result_files(cfg.output_dir) == first);
    CHECK(slurp(cfg.output_dir / "logs/transfer.log").find("skip (done)") != std::string::npos);

    auto other = cfg;
    other.output_dir = dir.path() / "again";
    Experiment(other).pretrain();
    Experiment(other).transfer();
    CHECK(result_files(other.output_dir) == first);
    CHECK(slurp(other.output_dir / "logs/transfer.log") == log1);
    const auto a = Zoo(cfg.zoo_path()).load("ab-pretrain-s1");
    const auto b = Zoo(other.zoo_path()).load("ab-pretrain-s1");
    CHECK(a.params.bitwise_equal(b.params));
  }
  SUBCASE("resume under a changed config is refused") {
    Experiment(cfg).pretrain();
    auto changed = cfg;
    changed.train.max_epochs = 4;
    CHECK_THROWS_AS(Experiment(changed).pretrain(), ConfigError);
  }
  SUBCASE("transfer without a pretrained zoo entry") { CHECK_THROWS_AS(Experiment(cfg).transfer(), ConfigError); }
  SUBCASE("empty report is an error, not a blank file") {
    CHECK_THROWS_AS(Experiment(cfg).report(), DataError);
    CHECK_FALSE(fs::exists(cfg.output_dir / "report/report.json"));
  }
  SUBCASE("fewshot: one result per (K, seed) for each init and target") {
    auto c = cfg;
    c.seeds = {0, 1, 2, 3, 4};
    c.k_shots = {2, 3, 4};
    Experiment ex(c);
    ex.pretrain();
    ex.fewshot();
    for (const char* init : {"pretrained", "random"}) {
      int n = 0;
      for (const auto& e : fs::recursive_directory_iterator(c.output_dir / "results/fewshot/ab/target0" / init))
        n += e.path().extension() == ".json";
      CHECK(n == 15);
    }
    const auto rep = ex.report();
    int groups = 0;
    for (const auto& g : rep.at("groups")) groups += g.at("command") == "fewshot";
    CHECK(groups == 2 * 3 * 2);
  }
  SUBCASE("knn, svcca, reset and scale sweep") {
    auto c = cfg;
    c.resets = {ResetSpec::kAttn, ResetSpec::kLin3Plus, ResetSpec::kAll};
    c.models.push_back({"mean", ModelConfig::mean(16, 2, 8)});
    Experiment ex(c);
    ex.pretrain();
    ex.knn();
    ex.svcca({"ab"});
    ex.reset();
    ex.scale_sweep();
    const auto rep = ex.report();
    CHECK(fs::exists(c.output_dir / "report/knn_contingency.csv"));
    CHECK(fs::exists(c.output_dir / "report/svcca.csv"));
    // mean pooling has no attention or fc.2: those resets are skipped, reset_all runs
    CHECK(slurp(c.output_dir / "logs/reset.log").find("mean reset_attn not applicable") != std::string::npos);
    CHECK(fs::exists(c.output_dir / "results/reset/mean/target1/reset_all/seed1.json"));
    CHECK(fs::exists(c.output_dir / "results/reset/ab/target1/reset_lin3plus/seed1.json"));
    // reset-all with the shared init seed is the random init
    const auto ra = Json::parse(slurp(c.output_dir / "results/reset/ab/target0/reset_all/seed0.json"));
    CHECK(ra.at("init") == "reset_all");
    bool found_attn = false;
    for (const auto& s : rep.at("svcca")) found_attn |= s.at("layer") == "attn";
    CHECK(found_attn);
    const auto sv = Json::parse(slurp(c.output_dir / "results/svcca/ab/target0/pretrained/seed0.json"));
    CHECK(sv.at("svcca").at("layers").size() == 4);
    CHECK(fs::exists(c.output_dir / "results/scale-sweep/s/target1/pretrained/seed1.json"));
    CHECK(fs::exists(c.output_dir / "results/scale-sweep/s/pretrain/scratch/seed0.json"));
    CHECK_THROWS_AS(ex.knn({"nope"}), ConfigError);
  }
  SUBCASE("explicit manifests instead of a suite") {
    const auto suite = make_suite(*cfg.suite, 3);
    ExperimentConfig c = cfg;
    c.suite.reset();
    synth_generate(suite.pretrain, dir.path() / "pre");
    c.pretrain = DataSource{dir.path() / "pre/manifest.csv", std::nullopt};
    synth_generate(suite.targets[0], dir.path() / "t0");
    c.targets = {DataSource{dir.path() / "t0/manifest.csv", TaskSpec::make("target0", 2)}};
    c.seeds = {0};
    Experiment ex(c);
    ex.pretrain();
    ex.knn();
    CHECK(fs::exists(c.output_dir / "results/knn/ab/target0/pretrained/seed0.json"));
    c.targets = {DataSource{dir.path() / "missing.csv", std::nullopt}};
    CHECK_THROWS_AS(Experiment(c).knn(), DataError);
  }
}
