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

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "milkit/bagdata.hpp"

namespace milkit {

/// Mann-Whitney AUROC with ties counted 1/2. Labels must be 0/1 with both
/// present; otherwise UndefinedMetricError.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Mean per-class recall over classes present in `labels`.
double balanced_accuracy(std::span<const int> preds, std::span<const int> labels, int n_classes);

/// Cohen's kappa with quadratic weights (i-j)^2/(C-1)^2. Returns 1 when the
/// expected disagreement is zero.
double quadratic_weighted_kappa(std::span<const int> preds, std::span<const int> labels, int n_classes);

/// Lowest index wins ties.
int argmax_class(const VecF& v);

/// Per-bag prediction: predicted class and positive-class score.
struct Prediction {
  std::string bag_id;
  int label = 0;
  int pred = 0;
  double score = 0.0;
};

double metric_value(MetricKind metric, std::span<const Prediction> preds, int n_classes);

struct BootstrapResult {
  double mean = 0.0;
  double std = 0.0;
  int n_bootstrap = 0;
  int skipped = 0;
};

using MetricFn = std::function<double(std::span<const Prediction>)>;

/// Resamples records with replacement `n` times. Resamples where the metric
/// is undefined are skipped and counted; throws UndefinedMetricError if all
/// are skipped. Population std across the kept resamples.
BootstrapResult bootstrap(std::span<const Prediction> records, const MetricFn& metric, int n, std::uint64_t seed);

struct EvalResult {
  std::string metric;
  double value = 0.0;
  double std = 0.0;
  int n_bootstrap = 0;
  int skipped = 0;
  std::vector<Prediction> predictions;
};

/// Point estimate on all records plus a bootstrap std.
EvalResult evaluate_predictions(std::vector<Prediction> preds, MetricKind metric, int n_classes, int n_bootstrap,
                                std::uint64_t seed);

std::string to_json(const EvalResult& r);

inline constexpr std::size_t kExactSignFlipLimit = 24;

/// One-sided paired sign-flip test of H1: mean(diffs) > 0. Exact over all
/// 2^n sign assignments up to kExactSignFlipLimit pairs, Monte-Carlo beyond.
double paired_sign_flip_pvalue(std::span<const double> diffs, std::uint64_t seed = 0);

}  // namespace milkit
