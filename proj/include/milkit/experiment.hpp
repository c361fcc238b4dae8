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

// Experiment orchestration behind the command-line tool. Results land under
// <output_dir>/results/<command>/<model>/<target>/<init>[/k<K>]/seed<s>.json.

#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "milkit/analysis.hpp"
#include "milkit/json_io.hpp"
#include "milkit/transfer.hpp"

namespace milkit {

inline constexpr int kConfigVersion = 1;
inline constexpr int kZooVersion = 1;

struct DataSource {
  std::filesystem::path manifest;
  std::optional<TaskSpec> task;
};

struct NamedModel {
  std::string name;
  /// n_classes is set per task.
  ModelConfig cfg;
};

struct ExperimentConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::filesystem::path output_dir = "runs";
  /// Defaults to <output_dir>/zoo/zoo.json.
  std::optional<std::filesystem::path> zoo;

  /// Either a synthetic suite (regenerated per seed) or explicit manifests.
  std::optional<SuiteConfig> suite;
  std::optional<DataSource> pretrain;
  std::vector<DataSource> targets;

  std::vector<NamedModel> models;
  TrainConfig train;
  /// Recipe for pretraining; defaults to `train`.
  std::optional<TrainConfig> pretrain_train;
  int n_bootstrap = 1000;

  int knn_k = 20;
  KnnDistance knn_distance = KnnDistance::kEuclidean;
  std::vector<int> k_shots{4, 16, 32};
  std::vector<std::string> svcca_layers;  // empty: every capturable layer
  int svcca_max_instances = kDefaultSvccaInstances;
  double svcca_variance_keep = 0.99;
  Split svcca_split = Split::kTrain;
  std::vector<ResetSpec> resets{ResetSpec::kAttn, ResetSpec::kLin3Plus, ResetSpec::kLin2Plus, ResetSpec::kAll};
  std::vector<NamedModel> scale_models;

  void validate() const;
  /// Digest of everything that shapes a result; excludes seeds and paths
  /// chosen at run time (output_dir, zoo).
  std::string digest() const;
  Json to_json() const;
  std::filesystem::path zoo_path() const;

  /// Relative paths resolve against `base_dir`.
  static ExperimentConfig from_json(const Json& j, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Desk-scale synthetic suite with ABMIL and Transformer.
  static ExperimentConfig desk();
};

struct ZooEntry {
  std::string name;
  std::string arch;
  std::string cfg_digest;
  std::string pretrain_task_id;
  /// Relative to the manifest's directory.
  std::filesystem::path checkpoint;
  Json eval;
};

/// JSON manifest of pretrained checkpoints. Writers hold an exclusive
/// flock on "<path>.lock" and replace the file atomically.
class Zoo {
 public:
  explicit Zoo(std::filesystem::path path) : path_(std::move(path)) {}

  const std::filesystem::path& path() const { return path_; }
  std::vector<ZooEntry> entries() const;
  std::optional<ZooEntry> find(const std::string& name) const;
  /// Saves the checkpoint under checkpoints/<name>.milc and records it.
  ZooEntry publish(const std::string& name, const Checkpoint& ckpt, const Json& eval);
  /// Loads and checks the digest against the entry. Missing names raise
  /// ConfigError.
  Checkpoint load(const std::string& name) const;

 private:
  std::filesystem::path path_;
};

std::string zoo_entry_name(const std::string& model, const std::string& task_id, std::uint64_t seed);

struct RunKey {
  std::string command;
  std::string model;
  std::string target;
  std::string init;
  std::optional<int> k;
  std::uint64_t seed = 0;

  std::filesystem::path relative_path() const;
};

class Experiment {
 public:
  /// Log lines are also echoed to `echo` when given.
  explicit Experiment(ExperimentConfig cfg, std::ostream* echo = nullptr);

  const ExperimentConfig& config() const { return cfg_; }
  Zoo zoo() const { return Zoo(cfg_.zoo_path()); }

  struct TaskData {
    Dataset pretrain;
    std::vector<Dataset> targets;
  };
  /// Loads the per-seed datasets, generating the synthetic suite when absent.
  TaskData data(std::uint64_t seed);

  // Each command runs every (model, target, seed) cell it owns, skipping
  // cells whose result already exists with the same config digest and
  // raising ConfigError on a digest mismatch. `only_models` restricts the
  // configured model list.
  void generate();
  void pretrain(const std::vector<std::string>& only_models = {});
  void transfer(const std::vector<std::string>& only_models = {});
  void knn(const std::vector<std::string>& only_models = {});
  void fewshot(const std::vector<std::string>& only_models = {});
  void svcca(const std::vector<std::string>& only_models = {});
  void reset(const std::vector<std::string>& only_models = {});
  void scale_sweep(const std::vector<std::string>& only_models = {});
  /// Aggregates every result under results/; DataError when there are none.
  Json report();

 private:
  std::vector<NamedModel> select(const std::vector<NamedModel>& all, const std::vector<std::string>& only) const;
  void open_log(const std::string& command);
  void log(const std::string& line);
  std::filesystem::path result_path(const RunKey& key) const;
  /// True when the cell is already done under this config.
  bool done(const RunKey& key) const;
  void write_result(const RunKey& key, Json body, const EvalResult& eval, const std::vector<EpochRecord>* history);
  void pretrain_models(const std::string& command, const std::vector<NamedModel>& models);
  Checkpoint pretrained(const NamedModel& m, const Dataset& pretrain_data, std::uint64_t seed) const;
  void finetune_cell(const RunKey& key, const TransferPlan& plan, const std::string& source_task,
                     std::uint64_t seed, Json extra = Json::object());

  ExperimentConfig cfg_;
  std::string digest_;
  std::ostream* echo_;
  std::ofstream log_;
};

/// Seed streams shared by every command.
inline std::uint64_t init_seed_for(std::uint64_t seed) { return derive_seed(seed, "init"); }
inline std::uint64_t fewshot_seed_for(std::uint64_t seed) { return derive_seed(seed, "fewshot"); }
inline std::uint64_t eval_seed_for(std::uint64_t seed) { return derive_seed(seed, "bootstrap"); }

}  // namespace milkit
