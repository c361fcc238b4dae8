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

#include "milkit/trainer.hpp"

#include <sstream>

#include <json.hpp>

namespace milkit {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
  if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
  if (max_epochs < 1 || min_epochs < 0 || min_epochs > max_epochs)
    throw ConfigError("train: need 0 <= min_epochs <= max_epochs, max_epochs >= 1");
  if (patience < 1) throw ConfigError("train: patience must be >= 1");
  if (no_val_epochs < 1) throw ConfigError("train: no_val_epochs must be >= 1");
  if (aux_weight < 0.0 || aux_weight > 1.0) throw ConfigError("train: aux_weight must be in [0, 1]");
}

std::string to_jsonl(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  for (const auto& r : history) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["val_metric"] = std::isnan(r.val_metric) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.val_metric);
    j["lr"] = r.lr;
    os << j.dump() << '\n';
  }
  return os.str();
}

std::vector<Prediction> predict_split(const ParamsF& params, const ModelConfig& cfg, const Dataset& data,
                                      Split split) {
  std::vector<Prediction> out;
  for (const auto* e : data.manifest.split(split)) {
    const auto fwd = forward<float>(params, cfg, data.bag(*e).features);
    const VecF prob = nn::softmax<float>(fwd.logits);
    Prediction p;
    p.bag_id = e->bag_id;
    p.label = e->label;
    p.pred = argmax_class(fwd.logits);
    p.score = cfg.n_classes == 2 ? prob(1) : prob.maxCoeff();
    out.push_back(std::move(p));
  }
  return out;
}

double validation_metric(const ParamsF& params, const ModelConfig& cfg, const Dataset& data) {
  const auto preds = predict_split(params, cfg, data, Split::kVal);
  const int c = data.manifest.task.n_classes;
  if (c == 2) {
    try {
      return metric_value(MetricKind::kAuroc, preds, c);
    } catch (const UndefinedMetricError&) {
      // single-class validation split
    }
  }
  return metric_value(MetricKind::kBalancedAccuracy, preds, c);
}

EvalResult evaluate_split(const ParamsF& params, const ModelConfig& cfg, const Dataset& data, Split split,
                          int n_bootstrap, std::uint64_t seed) {
  return evaluate_predictions(predict_split(params, cfg, data, split), data.manifest.task.metric,
                              data.manifest.task.n_classes, n_bootstrap, seed);
}

TrainResult train(const ModelConfig& cfg, ParamsF init, const Dataset& data, const TrainConfig& tcfg,
                  const TrainHooks& hooks) {
  tcfg.validate();
  cfg.validate();
  if (cfg.n_classes != data.manifest.task.n_classes)
    throw ConfigError("model has " + std::to_string(cfg.n_classes) + " classes, task " +
                      data.manifest.task.task_id + " has " + std::to_string(data.manifest.task.n_classes));
  if (const auto bad = init.schema_mismatches(cfg); !bad.empty())
    throw ConfigError("initial parameters do not match the config: " + bad.front());

  const std::size_t steps_per_epoch = data.manifest.count(Split::kTrain);
  if (steps_per_epoch == 0) throw DataError("train: empty train split");
  const bool has_val = data.manifest.has_split(Split::kVal) || static_cast<bool>(hooks.validator);
  const int epochs = has_val ? tcfg.max_epochs : tcfg.no_val_epochs;
  const long total_steps = static_cast<long>(epochs) * static_cast<long>(steps_per_epoch);

  TrainResult result;
  ParamsF params = std::move(init);
  ParamsF grads = ParamsF::zeros(cfg);
  auto state = AdamState<float>::zeros(params);
  ForwardCache<float> cache;
  int since_best = 0;
  long step = 0;

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const auto order =
        weighted_epoch_indices(data.manifest, steps_per_epoch, derive_seed(derive_seed(tcfg.seed, "order"), epoch));
    double loss_sum = 0.0;
    double lr = tcfg.lr;
    for (const auto idx : order) {
      const auto& entry = data.manifest.entries[idx];
      const Bag& bag = data.bag(entry);
      const auto out =
          forward<float>(params, cfg, bag.features, {true, derive_seed(derive_seed(tcfg.seed, "dropout"), step)}, &cache);
      const auto loss = compute_loss<float>(out, entry.label, cfg, tcfg.aux_weight);
      if (!std::isfinite(loss.loss))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " on bag '" + entry.bag_id + "'");
      loss_sum += loss.loss;
      grads.set_zero();
      backward<float>(params, cfg, cache, loss.dlogits, loss.daux ? &*loss.daux : nullptr, grads);
      lr = cosine_lr(step, total_steps, tcfg.lr);
      adamw_step(params, grads, state, lr, tcfg.weight_decay);
      ++step;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(steps_per_epoch);
    rec.lr = lr;
    if (has_val) {
      rec.val_metric = hooks.validator ? hooks.validator(params, epoch) : validation_metric(params, cfg, data);
      if (result.history.empty() || rec.val_metric > result.best_val) {
        result.best_val = rec.val_metric;
        result.best_epoch = epoch;
        result.params = params;
        since_best = 0;
      } else {
        ++since_best;
      }
    }
    result.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (has_val && since_best >= tcfg.patience && epoch >= tcfg.min_epochs) break;
  }

  if (!has_val) {
    result.params = std::move(params);
    result.best_epoch = static_cast<int>(result.history.size());
  }
  return result;
}

}  // namespace milkit
