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

#include "milkit/transfer.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace milkit {

ModelConfig retarget(ModelConfig source, int n_classes) {
  source.n_classes = n_classes;
  return source;
}

ParamsF init_from_pretrained(const Checkpoint& ckpt, const ModelConfig& target, std::uint64_t seed) {
  target.validate();
  if (retarget(ckpt.cfg, target.n_classes) != target) {
    auto issues = ckpt.params.schema_mismatches(target);
    std::erase_if(issues, [](const std::string& s) { return is_head_layer(s.substr(0, s.find(' '))); });
    std::string msg = "checkpoint arch " + to_string(ckpt.cfg.arch) + " does not match target arch " +
                      to_string(target.arch);
    if (!issues.empty()) {
      msg += "; incompatible layers:";
      for (const auto& s : issues) msg += " " + s;
    }
    throw ConfigError(msg);
  }
  ParamsF out;
  for (const auto& shape : layer_schema(target)) {
    if (is_head_layer(shape.name))
      out.add(shape.name, init_tensor(target, shape.name, seed));
    else
      out.add(shape.name, ckpt.params.at(shape.name));
  }
  return out;
}

Embeddings embed_bags(const ParamsF& params, const ModelConfig& cfg, const Dataset& data, Split split) {
  const auto entries = data.manifest.split(split);
  Embeddings e;
  e.x.resize(static_cast<Eigen::Index>(entries.size()), cfg.embed_dim);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto out = forward<float>(params, cfg, data.bag(*entries[i]).features);
    e.x.row(static_cast<Eigen::Index>(i)) = out.embedding.transpose();
    e.labels.push_back(entries[i]->label);
    e.bag_ids.push_back(entries[i]->bag_id);
  }
  return e;
}

KnnDistance parse_knn_distance(const std::string& s) {
  if (s == "euclidean") return KnnDistance::kEuclidean;
  if (s == "cosine") return KnnDistance::kCosine;
  throw ConfigError("unknown knn distance '" + s + "' (euclidean, cosine)");
}

std::string to_string(KnnDistance d) { return d == KnnDistance::kCosine ? "cosine" : "euclidean"; }

std::vector<Prediction> knn_predict(const Embeddings& train, const Embeddings& test, int k, int n_classes,
                                    KnnDistance distance) {
  const auto n_train = static_cast<int>(train.x.rows());
  if (k < 1) throw ConfigError("knn: k must be >= 1");
  if (k > n_train)
    throw ConfigError("knn: k=" + std::to_string(k) + " exceeds the " + std::to_string(n_train) + " train embeddings");
  if (train.x.cols() != test.x.cols()) throw DataError("knn: train/test embedding widths differ");

  const MatD a = train.x.cast<double>();
  const MatD b = test.x.cast<double>();
  MatD d;  // test x train
  if (distance == KnnDistance::kEuclidean) {
    d = (b.rowwise().squaredNorm() * Eigen::RowVectorXd::Ones(a.rows()) +
         Eigen::VectorXd::Ones(b.rows()) * a.rowwise().squaredNorm().transpose() - 2.0 * b * a.transpose())
            .cwiseMax(0.0)
            .cwiseSqrt();
  } else {
    auto unit = [](const MatD& m) {
      MatD u = m;
      for (Eigen::Index i = 0; i < u.rows(); ++i) {
        const double nrm = u.row(i).norm();
        if (nrm > 0.0) u.row(i) /= nrm;
      }
      return u;
    };
    d = (1.0 - (unit(b) * unit(a).transpose()).array()).cwiseMax(0.0).matrix();
  }

  std::vector<Prediction> out;
  std::vector<int> idx(n_train);
  for (Eigen::Index q = 0; q < b.rows(); ++q) {
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int i, int j) {
      return d(q, i) < d(q, j) || (d(q, i) == d(q, j) && i < j);
    });
    std::vector<int> votes(n_classes, 0);
    std::vector<double> inv(n_classes, 0.0);
    for (int r = 0; r < k; ++r) {
      const int lab = train.labels[idx[r]];
      if (lab < 0 || lab >= n_classes) throw DataError("knn: train label out of range");
      ++votes[lab];
      const double dist = d(q, idx[r]);
      inv[lab] += dist > 0.0 ? 1.0 / dist : std::numeric_limits<double>::infinity();
    }
    int best = 0;
    for (int c = 1; c < n_classes; ++c)
      if (votes[c] > votes[best] || (votes[c] == votes[best] && inv[c] > inv[best])) best = c;
    Prediction p;
    p.bag_id = q < static_cast<Eigen::Index>(test.bag_ids.size()) ? test.bag_ids[q] : std::to_string(q);
    p.label = test.labels[q];
    p.pred = best;
    p.score = static_cast<double>(n_classes == 2 ? votes[1] : votes[best]) / k;
    out.push_back(std::move(p));
  }
  return out;
}

EvalResult knn_evaluate(const Embeddings& train, const Embeddings& test, int k, const TaskSpec& task,
                        KnnDistance distance, int n_bootstrap, std::uint64_t seed) {
  return evaluate_predictions(knn_predict(train, test, k, task.n_classes, distance), task.metric, task.n_classes,
                              n_bootstrap, seed);
}

ResetSpec parse_reset_spec(const std::string& s) {
  if (s == "attn") return ResetSpec::kAttn;
  if (s == "lin3plus") return ResetSpec::kLin3Plus;
  if (s == "lin2plus") return ResetSpec::kLin2Plus;
  if (s == "all") return ResetSpec::kAll;
  throw ConfigError("unknown reset spec '" + s + "' (attn, lin3plus, lin2plus, all)");
}

std::string to_string(ResetSpec r) {
  switch (r) {
    case ResetSpec::kAttn: return "attn";
    case ResetSpec::kLin3Plus: return "lin3plus";
    case ResetSpec::kLin2Plus: return "lin2plus";
    case ResetSpec::kAll: return "all";
  }
  return "?";
}

std::vector<std::string> reset_layer_names(const ModelConfig& cfg, ResetSpec spec) {
  std::vector<std::string> names;
  const auto schema = layer_schema(cfg);
  if (spec == ResetSpec::kAll) {
    for (const auto& s : schema)
      if (!is_head_layer(s.name)) names.push_back(s.name);
    return names;
  }
  if (!cfg.has_attention_branch())
    throw ConfigError("reset " + to_string(spec) + ": arch " + to_string(cfg.arch) + " has no attention layer");
  const int first_fc = spec == ResetSpec::kLin3Plus ? 2 : spec == ResetSpec::kLin2Plus ? 1 : cfg.n_fc_layers();
  if (first_fc >= cfg.n_fc_layers() && spec != ResetSpec::kAttn)
    throw ConfigError("reset " + to_string(spec) + ": config has no layer fc." + std::to_string(first_fc) + " (only " +
                      std::to_string(cfg.n_fc_layers()) + " FC layers)");
  for (const auto& s : schema) {
    if (s.name.starts_with("attn.")) {
      names.push_back(s.name);
    } else if (s.name.starts_with("fc.")) {
      const int i = std::stoi(s.name.substr(3, s.name.find('.', 3) - 3));
      if (i >= first_fc) names.push_back(s.name);
    }
  }
  return names;
}

ParamsF reset_layers(const ParamsF& params, const ModelConfig& cfg, ResetSpec spec, std::uint64_t seed) {
  if (const auto bad = params.schema_mismatches(cfg); !bad.empty())
    throw ConfigError("reset: parameters do not match the config: " + bad.front());
  const auto names = reset_layer_names(cfg, spec);
  ParamsF out = params;
  for (const auto& n : names) out.at(n) = init_tensor(cfg, n, seed);
  return out;
}

ModelConfig TransferPlan::target_config() const {
  return retarget(source ? source->cfg : arch, target.manifest.task.n_classes);
}

std::string TransferPlan::init_kind() const {
  if (!source) return "random";
  return reset ? "reset_" + to_string(*reset) : "pretrained";
}

ParamsF TransferPlan::initial_params() const {
  const ModelConfig cfg = target_config();
  if (!source) return build_model(cfg, init_seed);
  ParamsF p = init_from_pretrained(*source, cfg, init_seed);
  if (reset) p = reset_layers(p, cfg, *reset, init_seed);
  return p;
}

TransferOutcome finetune(const TransferPlan& plan, const TrainConfig& tcfg, int n_bootstrap, std::uint64_t eval_seed) {
  if (!plan.target.manifest.has_split(Split::kTest))
    throw DataError("target task " + plan.target.manifest.task.task_id + " has no test split");
  TransferOutcome o;
  o.source_task = plan.source ? plan.source->task.task_id : "random";
  o.target_task = plan.target.manifest.task.task_id;
  o.init_kind = plan.init_kind();
  o.cfg = plan.target_config();
  o.train = train(o.cfg, plan.initial_params(), plan.target, tcfg);
  o.test = evaluate_split(o.train.params, o.cfg, plan.target, Split::kTest, n_bootstrap, eval_seed);
  return o;
}

}  // namespace milkit
