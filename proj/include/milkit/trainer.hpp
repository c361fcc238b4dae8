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

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "milkit/bagdata.hpp"
#include "milkit/metrics.hpp"
#include "milkit/models.hpp"

namespace milkit {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-5;
  int max_epochs = 20;
  int min_epochs = 10;
  int patience = 5;
  /// Fixed epoch count when the dataset has no validation split.
  int no_val_epochs = 10;
  std::uint64_t seed = 0;
  double aux_weight = 0.3;

  void validate() const;
};

/// base_lr * (1 + cos(pi * step / total_steps)) / 2
inline double cosine_lr(long step, long total_steps, double base_lr) {
  if (total_steps <= 0) return base_lr;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

/// Optimizer moments, shaped like the parameters.
template <typename T>
struct AdamState {
  Params<T> m;
  Params<T> v;
  long step = 0;

  static AdamState zeros(const Params<T>& like) {
    AdamState s;
    for (std::size_t i = 0; i < like.size(); ++i) {
      const auto& t = like.tensor(i);
      s.m.add(like.name(i), Mat<T>::Zero(t.rows(), t.cols()));
      s.v.add(like.name(i), Mat<T>::Zero(t.rows(), t.cols()));
    }
    return s;
  }
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// AdamW with decoupled weight decay: p <- p - lr*wd*p, then the
/// bias-corrected adaptive step. Throws NumericError naming the first layer
/// with a non-finite gradient; parameters are left untouched in that case.
template <typename T>
void adamw_step(Params<T>& params, const Params<T>& grads, AdamState<T>& state, double lr, double weight_decay) {
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!grads.tensor(i).allFinite()) throw NumericError("non-finite gradient in layer '" + grads.name(i) + "'");
  ++state.step;
  const T b1 = T(kAdamBeta1), b2 = T(kAdamBeta2);
  const T c1 = T(1) - static_cast<T>(std::pow(kAdamBeta1, static_cast<double>(state.step)));
  const T c2 = T(1) - static_cast<T>(std::pow(kAdamBeta2, static_cast<double>(state.step)));
  const T step_size = static_cast<T>(lr) / c1;
  const T decay = T(1) - static_cast<T>(lr * weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params.tensor(i).array();
    const auto g = grads.tensor(i).array();
    auto m = state.m.tensor(i).array();
    auto v = state.v.tensor(i).array();
    p *= decay;
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.square();
    p -= step_size * m / ((v / c2).sqrt() + T(kAdamEps));
  }
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  /// NaN when there is no validation split.
  double val_metric = std::nan("");
  double lr = 0.0;
};

std::string to_jsonl(const std::vector<EpochRecord>& history);

struct TrainResult {
  ParamsF params;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val = std::nan("");
};

struct TrainHooks {
  /// Overrides the validation metric; called after each epoch.
  std::function<double(const ParamsF&, int epoch)> validator;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Batch-size-1 training with class-weighted sampling, AdamW and per-step
/// cosine decay. With a validation split: early stopping once
/// epochs_since_best >= patience and epoch >= min_epochs, else max_epochs;
/// returns the best-validation parameters. Without one: exactly
/// no_val_epochs, returning the final parameters.
TrainResult train(const ModelConfig& cfg, ParamsF init, const Dataset& data, const TrainConfig& tcfg,
                  const TrainHooks& hooks = {});

/// Eval-mode predictions over one split, in manifest order. Score is the
/// class-1 probability for binary tasks, the top probability otherwise.
std::vector<Prediction> predict_split(const ParamsF& params, const ModelConfig& cfg, const Dataset& data, Split split);

/// Validation metric used by early stopping: AUROC for binary tasks,
/// balanced accuracy otherwise.
double validation_metric(const ParamsF& params, const ModelConfig& cfg, const Dataset& data);

/// Task metric on one split with a bootstrap std.
EvalResult evaluate_split(const ParamsF& params, const ModelConfig& cfg, const Dataset& data, Split split,
                          int n_bootstrap, std::uint64_t seed);

}  // namespace milkit
