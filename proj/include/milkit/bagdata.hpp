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
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "milkit/common.hpp"

namespace milkit {

/// One labeled bag: an n_instances x feat_dim matrix of instance features.
struct Bag {
  std::string id;
  MatF features;
  int label = 0;

  Eigen::Index n_instances() const { return features.rows(); }
  Eigen::Index feat_dim() const { return features.cols(); }
};

enum class MetricKind { kAuroc, kBalancedAccuracy, kQuadraticKappa };

std::string to_string(MetricKind m);
MetricKind parse_metric(const std::string& s);

struct TaskSpec {
  std::string task_id;
  int n_classes = 2;
  std::vector<std::string> class_names;
  MetricKind metric = MetricKind::kAuroc;

  /// Throws ConfigError when the invariants do not hold.
  void validate() const;

  /// Binary tasks score with AUROC, everything else with balanced accuracy.
  static TaskSpec make(std::string task_id, int n_classes);
};

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct ManifestEntry {
  std::string bag_id;
  std::filesystem::path path;
  int label = 0;
  Split split = Split::kTrain;
};

struct DatasetManifest {
  TaskSpec task;
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> split(Split s) const;
  std::size_t count(Split s) const;
  bool has_split(Split s) const { return count(s) > 0; }

  /// Checks unique ids, label range and a nonempty train split.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Feature files: "MILF" | version u8 | 8 reserved bytes | n u64 | d u64 |
// n*d float32, all little-endian, row-major.

inline constexpr std::size_t kFeatureHeaderBytes = 29;

void write_feature_file(const MatF& features, const std::filesystem::path& path);
MatF read_feature_file(const std::filesystem::path& path);

std::string encode_features(const MatF& features);
MatF decode_features(std::string_view bytes);

// ---------------------------------------------------------------------------
// Manifest CSV with header `bag_id,path,label,split`. Relative feature paths
// resolve against the manifest's directory.

/// When `task` is absent the class count is inferred and labels must be
/// contiguous from 0.
DatasetManifest load_manifest(const std::filesystem::path& csv,
                              const std::optional<TaskSpec>& task = std::nullopt);
void write_manifest(const DatasetManifest& m, const std::filesystem::path& csv);

/// K train bags per class, sampled without replacement; val/test untouched.
DatasetManifest fewshot_sample(const DatasetManifest& m, int k, std::uint64_t seed);

/// Train-split bag ids drawn with replacement, P(bag) proportional to
/// 1 / count(bag's class).
std::vector<std::string> weighted_epoch_order(const DatasetManifest& m,
                                              std::size_t epoch_len,
                                              std::uint64_t seed);
/// Same draw, returned as indices into `m.entries`.
std::vector<std::size_t> weighted_epoch_indices(const DatasetManifest& m,
                                                std::size_t epoch_len,
                                                std::uint64_t seed);

/// Bag lookup by id. Feature files load lazily on first access and are cached;
/// in-memory bags can be registered up front. Safe for concurrent reads.
class BagStore {
 public:
  BagStore() = default;
  explicit BagStore(const DatasetManifest& m) { add(m); }

  void add(const DatasetManifest& m);
  void add(Bag bag);

  /// Throws DataError if the id is unknown or its feature file is missing.
  const Bag& get(const std::string& bag_id) const;
  bool contains(const std::string& bag_id) const;

 private:
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::filesystem::path> paths_;
  std::unordered_map<std::string, int> labels_;
  mutable std::unordered_map<std::string, std::shared_ptr<const Bag>> cache_;
};

/// Manifest paired with the store that resolves its bags.
struct Dataset {
  DatasetManifest manifest;
  std::shared_ptr<BagStore> store;

  static Dataset from_manifest(DatasetManifest m);
  const Bag& bag(const ManifestEntry& e) const { return store->get(e.bag_id); }
};

}  // namespace milkit
