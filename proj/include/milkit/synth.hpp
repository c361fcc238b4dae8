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

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "milkit/bagdata.hpp"

namespace milkit {

/// Synthetic concept-bag task.
///
/// A task family is a pool of `n_concepts` unit-norm prototype vectors drawn
/// from `family_seed`. Each class owns a subset of concepts; a bag of class c
/// holds ceil(witness_rate * n) witness instances cycling through that subset
/// and fills the remainder from the background pool. Every instance is its
/// prototype plus isotropic Gaussian noise. Tasks built from one family share
/// instance-level structure, which is what pretraining can transfer.
struct SynthTaskConfig {
  std::string task_id = "synth";
  int feat_dim = 32;
  int n_concepts = 8;
  std::vector<std::vector<int>> concepts_per_class;
  /// Empty means every concept not owned by a class.
  std::vector<int> background_concepts;
  double witness_rate = 0.2;
  int min_bag_size = 10;
  int max_bag_size = 20;
  double noise_sigma = 0.1;
  int n_bags_per_class = 20;
  std::uint64_t family_seed = 0;
  std::uint64_t seed = 0;
  bool orthogonal_prototypes = false;
  double train_frac = 0.6;
  double val_frac = 0.2;

  int n_classes() const { return static_cast<int>(concepts_per_class.size()); }
  std::vector<int> resolved_background() const;
  void validate() const;
};

/// n_concepts x feat_dim, unit-norm rows. Depends only on the family fields.
MatF synth_prototypes(const SynthTaskConfig& cfg);

struct SynthDataset {
  DatasetManifest manifest;
  std::vector<Bag> bags;
  /// Concept index per instance, aligned with bags[i].features rows.
  std::vector<std::vector<int>> concepts;

  /// In-memory dataset (store pre-populated, no files).
  Dataset to_dataset() const;
};

SynthDataset synth_bags(const SynthTaskConfig& cfg);

/// Writes one feature file per bag under `out_dir/features/` and
/// `out_dir/manifest.csv`; returns the manifest with absolute paths.
DatasetManifest synth_generate(const SynthTaskConfig& cfg, const std::filesystem::path& out_dir);

/// A concept family shared by one many-class pretraining task and several
/// binary targets. Pretraining class c owns concept c; each target pairs two
/// distinct class concepts drawn per seed; concepts n_class_concepts.. are
/// background for every task.
struct SuiteConfig {
  int feat_dim = 64;
  int n_class_concepts = 16;
  int n_background_concepts = 8;
  double witness_rate = 0.1;
  int min_bag_size = 20;
  int max_bag_size = 40;
  double noise_sigma = 0.15;
  bool orthogonal_prototypes = false;
  int pretrain_bags = 2000;
  int n_targets = 3;
  int target_bags = 200;

  void validate() const;
};

struct Suite {
  SynthTaskConfig pretrain;
  std::vector<SynthTaskConfig> targets;
};

Suite make_suite(const SuiteConfig& cfg, std::uint64_t seed);

}  // namespace milkit
