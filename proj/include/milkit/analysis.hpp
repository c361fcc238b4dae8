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
#include "milkit/models.hpp"

namespace milkit {

/// Instance-level activations of one layer. Rows align with sample_ids
/// ("bag_id:instance_index") across dumps from the same capture.
struct ActivationDump {
  std::string layer;
  MatF matrix;
  std::vector<std::string> sample_ids;
};

inline constexpr int kDefaultSvccaInstances = 5000;

/// Layers that capture_activations understands for a config: "fc.{i}"
/// (post-ReLU output) and, for attention archs, "attn" (pre-softmax score).
std::vector<std::string> capturable_layers(const ModelConfig& cfg);

/// Captures the named layers over a seeded subsample of at most
/// max_instances instances from one split. The sample depends only on the
/// manifest, split, bag sizes, max_instances and seed, never on params.
std::vector<ActivationDump> capture_activations(const ParamsF& params, const ModelConfig& cfg, const Dataset& data,
                                                Split split, const std::vector<std::string>& layers,
                                                int max_instances, std::uint64_t seed);

struct SvccaResult {
  /// 100 * mean canonical correlation, in [0, 100].
  double mean = 0.0;
  /// 100 * population std of the canonical correlations.
  double std = 0.0;
  std::vector<double> correlations;
};

/// Centers columns, keeps the leading singular directions holding
/// variance_keep of each matrix's spectrum, and returns the canonical
/// correlations of the two subspaces. A rank-0 side scores 0.
SvccaResult svcca(const MatD& x, const MatD& y, double variance_keep = 0.99);

struct LayerStability {
  std::string name;
  double mean = 0.0;
  double std = 0.0;
  int n_components = 0;
};

struct StabilityReport {
  std::string tag;
  int n_samples = 0;
  std::vector<LayerStability> layers;
};

/// SVCCA between each layer's activations under `before` and `after` on an
/// identical instance sample. Empty `layers` means capturable_layers(cfg).
StabilityReport layer_stability_report(const ParamsF& before, const ParamsF& after, const ModelConfig& cfg,
                                       const Dataset& data, Split split, std::vector<std::string> layers = {},
                                       int max_instances = kDefaultSvccaInstances, std::uint64_t seed = 0,
                                       double variance_keep = 0.99);

std::string to_json(const StabilityReport& r);

/// CSV: bag_id,instance_index,attention_weight
void attention_export(const ParamsF& params, const ModelConfig& cfg, const Dataset& data, Split split,
                      const std::filesystem::path& path);

/// CSV: bag_id,label,e_0..e_{D-1}
void embedding_export(const ParamsF& params, const ModelConfig& cfg, const Dataset& data, Split split,
                      const std::filesystem::path& path);

}  // namespace milkit
