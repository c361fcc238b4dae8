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

#include <optional>
#include <string>
#include <vector>

#include "milkit/checkpoint.hpp"
#include "milkit/trainer.hpp"

namespace milkit {

/// `source` with the head resized for a target task.
ModelConfig retarget(ModelConfig source, int n_classes);

/// Copies every non-head tensor from `ckpt` and draws fresh heads for
/// `target`, exactly as build_model(target, seed) would. `target` must equal
/// the checkpoint config up to n_classes; otherwise ConfigError naming the
/// missing or mis-shaped layers.
ParamsF init_from_pretrained(const Checkpoint& ckpt, const ModelConfig& target, std::uint64_t seed);

/// Slide embeddings in manifest order.
struct Embeddings {
  MatF x;  // n_bags x embed_dim
  std::vector<int> labels;
  std::vector<std::string> bag_ids;
};

Embeddings embed_bags(const ParamsF& params, const ModelConfig& cfg, const Dataset& data, Split split);

enum class KnnDistance { kEuclidean, kCosine };
KnnDistance parse_knn_distance(const std::string& s);
std::string to_string(KnnDistance d);

/// Majority vote over the k nearest train rows; vote ties go to the class
/// with the larger summed inverse distance, then the lower index. Score is
/// the fraction of neighbors in class 1 (binary) or in the predicted class.
std::vector<Prediction> knn_predict(const Embeddings& train, const Embeddings& test, int k, int n_classes,
                                    KnnDistance distance = KnnDistance::kEuclidean);

EvalResult knn_evaluate(const Embeddings& train, const Embeddings& test, int k, const TaskSpec& task,
                        KnnDistance distance, int n_bootstrap, std::uint64_t seed);

enum class ResetSpec { kAttn, kLin3Plus, kLin2Plus, kAll };
ResetSpec parse_reset_spec(const std::string& s);
std::string to_string(ResetSpec r);

/// Names of the tensors a reset spec replaces. Throws ConfigError when the
/// spec needs layers the config lacks (attention branch, third FC layer).
std::vector<std::string> reset_layer_names(const ModelConfig& cfg, ResetSpec spec);

/// Replaces the named layers with initializer draws for `seed`; everything
/// else, including the heads, is copied bitwise.
ParamsF reset_layers(const ParamsF& params, const ModelConfig& cfg, ResetSpec spec, std::uint64_t seed);

struct TransferPlan {
  /// nullopt means random initialization.
  std::optional<Checkpoint> source;
  /// Architecture for random init; ignored when a source is given.
  ModelConfig arch;
  Dataset target;
  std::optional<ResetSpec> reset;
  std::uint64_t init_seed = 0;

  ModelConfig target_config() const;
  std::string init_kind() const;
  ParamsF initial_params() const;
};

struct TransferOutcome {
  std::string source_task;
  std::string target_task;
  std::string init_kind;
  ModelConfig cfg;
  TrainResult train;
  EvalResult test;
};

/// Full trainer recipe from the plan's initial parameters, then test-split
/// evaluation with a bootstrap std.
TransferOutcome finetune(const TransferPlan& plan, const TrainConfig& tcfg, int n_bootstrap = 1000,
                         std::uint64_t eval_seed = 0);

}  // namespace milkit
