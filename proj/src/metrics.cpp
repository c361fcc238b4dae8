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

#include "milkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace milkit {

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DataError("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Average ranks over tie groups (1-based).
  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      const int y = labels[order[k]];
      if (y != 0 && y != 1) throw DataError("auroc: labels must be 0 or 1");
      if (y == 1) {
        rank_sum_pos += avg_rank;
        ++n_pos;
      }
    }
    i = j + 1;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("auroc: both classes must be present");
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

namespace {

void check_class_inputs(std::span<const int> preds, std::span<const int> labels, int n_classes, const char* who) {
  if (preds.size() != labels.size()) throw DataError(std::string(who) + ": preds and labels differ in length");
  if (preds.empty()) throw UndefinedMetricError(std::string(who) + ": empty input");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes || preds[i] < 0 || preds[i] >= n_classes)
      throw DataError(std::string(who) + ": class index out of range");
  }
}

}  // namespace

double balanced_accuracy(std::span<const int> preds, std::span<const int> labels, int n_classes) {
  check_class_inputs(preds, labels, n_classes, "balanced_accuracy");
  std::vector<double> hit(n_classes, 0.0), total(n_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    total[labels[i]] += 1.0;
    if (preds[i] == labels[i]) hit[labels[i]] += 1.0;
  }
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < n_classes; ++c) {
    if (total[c] == 0.0) continue;
    sum += hit[c] / total[c];
    ++present;
  }
  return sum / present;
}

double quadratic_weighted_kappa(std::span<const int> preds, std::span<const int> labels, int n_classes) {
  if (n_classes < 2) throw ConfigError("quadratic_weighted_kappa: need at least 2 classes");
  check_class_inputs(preds, labels, n_classes, "quadratic_weighted_kappa");
  MatD observed = MatD::Zero(n_classes, n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) observed(labels[i], preds[i]) += 1.0;
  const double n = static_cast<double>(labels.size());
  const VecD row = observed.rowwise().sum();
  const VecD col = observed.colwise().sum().transpose();
  const MatD expected = row * col.transpose() / n;
  const double denom_c = static_cast<double>((n_classes - 1) * (n_classes - 1));
  double num = 0.0, den = 0.0;
  for (int i = 0; i < n_classes; ++i)
    for (int j = 0; j < n_classes; ++j) {
      const double w = static_cast<double>((i - j) * (i - j)) / denom_c;
      num += w * observed(i, j);
      den += w * expected(i, j);
    }
  if (den == 0.0) return 1.0;
  return 1.0 - num / den;
}

int argmax_class(const VecF& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

double metric_value(MetricKind metric, std::span<const Prediction> preds, int n_classes) {
  std::vector<int> labels, predicted;
  labels.reserve(preds.size());
  predicted.reserve(preds.size());
  for (const auto& p : preds) {
    labels.push_back(p.label);
    predicted.push_back(p.pred);
  }
  switch (metric) {
    case MetricKind::kAuroc: {
      std::vector<double> scores;
      scores.reserve(preds.size());
      for (const auto& p : preds) scores.push_back(p.score);
      return auroc(scores, labels);
    }
    case MetricKind::kBalancedAccuracy:
      return balanced_accuracy(predicted, labels, n_classes);
    case MetricKind::kQuadraticKappa:
      return quadratic_weighted_kappa(predicted, labels, n_classes);
  }
  throw ConfigError("unknown metric");
}

BootstrapResult bootstrap(std::span<const Prediction> records, const MetricFn& metric, int n, std::uint64_t seed) {
  if (records.size() < 2) throw DataError("bootstrap: need at least 2 records");
  if (n < 1) throw ConfigError("bootstrap: n must be positive");
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, records.size() - 1);
  std::vector<Prediction> sample(records.size());
  std::vector<double> values;
  values.reserve(n);
  BootstrapResult r;
  r.n_bootstrap = n;
  for (int b = 0; b < n; ++b) {
    for (auto& s : sample) s = records[pick(rng)];
    try {
      values.push_back(metric(sample));
    } catch (const UndefinedMetricError&) {
      ++r.skipped;
    }
  }
  if (values.empty()) throw UndefinedMetricError("bootstrap: every resample was degenerate");
  const double k = static_cast<double>(values.size());
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / k;
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(ss / k);
  return r;
}

EvalResult evaluate_predictions(std::vector<Prediction> preds, MetricKind metric, int n_classes, int n_bootstrap,
                                std::uint64_t seed) {
  EvalResult r;
  r.metric = to_string(metric);
  r.value = metric_value(metric, preds, n_classes);
  if (n_bootstrap > 0 && preds.size() >= 2) {
    const auto b = bootstrap(
        preds, [&](std::span<const Prediction> s) { return metric_value(metric, s, n_classes); }, n_bootstrap, seed);
    r.std = b.std;
    r.n_bootstrap = b.n_bootstrap;
    r.skipped = b.skipped;
  }
  r.predictions = std::move(preds);
  return r;
}

std::string to_json(const EvalResult& r) {
  nlohmann::ordered_json j;
  j["metric"] = r.metric;
  j["value"] = r.value;
  j["std"] = r.std;
  j["n_bootstrap"] = r.n_bootstrap;
  j["skipped"] = r.skipped;
  return j.dump();
}

double paired_sign_flip_pvalue(std::span<const double> diffs, std::uint64_t seed) {
  const std::size_t n = diffs.size();
  if (n == 0) throw DataError("paired test: no pairs");
  for (double d : diffs)
    if (!std::isfinite(d)) throw NumericError("paired test: non-finite difference");
  const double observed = std::accumulate(diffs.begin(), diffs.end(), 0.0);
  double scale = 0.0;
  for (double d : diffs) scale += std::abs(d);
  const double cut = observed - 1e-12 * std::max(scale, 1.0);

  if (n <= kExactSignFlipLimit) {
    const std::uint64_t total = std::uint64_t{1} << n;
    std::uint64_t hits = 0;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += (mask >> i & 1) ? -diffs[i] : diffs[i];
      hits += s >= cut;
    }
    return static_cast<double>(hits) / static_cast<double>(total);
  }
  // Monte-Carlo over random sign vectors; the observed assignment is counted.
  constexpr int kDraws = 100000;
  Rng rng(derive_seed(seed, "sign-flip"));
  std::bernoulli_distribution coin(0.5);
  int hits = 1;
  for (int b = 0; b < kDraws; ++b) {
    double s = 0.0;
    for (double d : diffs) s += coin(rng) ? -d : d;
    hits += s >= cut;
  }
  return static_cast<double>(hits) / (kDraws + 1);
}

}  // namespace milkit
