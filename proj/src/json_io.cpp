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

#include "milkit/json_io.hpp"

namespace milkit {

Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(what + ": invalid JSON (" + e.what() + ")");
  }
}

Json to_json(const ModelConfig& c) {
  Json j;
  j["arch"] = to_string(c.arch);
  j["in_dim"] = c.in_dim;
  j["embed_dim"] = c.embed_dim;
  j["attn_dim"] = c.attn_dim;
  j["fc_hidden_dims"] = c.fc_hidden_dims;
  j["n_classes"] = c.n_classes;
  j["n_layers"] = c.n_layers;
  j["encoder_hidden_dim"] = c.encoder_hidden_dim ? Json(*c.encoder_hidden_dim) : Json(nullptr);
  j["n_heads"] = c.n_heads;
  j["dropout_ff"] = c.dropout_ff;
  j["dropout_input"] = c.dropout_input;
  return j;
}

ModelConfig model_config_from_json(const Json& j) {
  JsonReader r(j, "model");
  ModelConfig c;
  std::string arch = to_string(c.arch);
  r.get("arch", arch);
  c.arch = parse_arch(arch);
  r.get("in_dim", c.in_dim);
  r.get("embed_dim", c.embed_dim);
  r.get("attn_dim", c.attn_dim);
  r.get("fc_hidden_dims", c.fc_hidden_dims);
  r.get("n_classes", c.n_classes);
  r.get("n_layers", c.n_layers);
  r.get("encoder_hidden_dim", c.encoder_hidden_dim);
  r.get("n_heads", c.n_heads);
  r.get("dropout_ff", c.dropout_ff);
  r.get("dropout_input", c.dropout_input);
  r.finish();
  return c;
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["max_epochs"] = c.max_epochs;
  j["min_epochs"] = c.min_epochs;
  j["patience"] = c.patience;
  j["no_val_epochs"] = c.no_val_epochs;
  j["seed"] = c.seed;
  j["aux_weight"] = c.aux_weight;
  return j;
}

TrainConfig train_config_from_json(const Json& j) {
  JsonReader r(j, "train");
  TrainConfig c;
  r.get("lr", c.lr);
  r.get("weight_decay", c.weight_decay);
  r.get("max_epochs", c.max_epochs);
  r.get("min_epochs", c.min_epochs);
  r.get("patience", c.patience);
  r.get("no_val_epochs", c.no_val_epochs);
  r.get("seed", c.seed);
  r.get("aux_weight", c.aux_weight);
  r.finish();
  c.validate();
  return c;
}

Json to_json(const TaskSpec& t) {
  Json j;
  j["task_id"] = t.task_id;
  j["n_classes"] = t.n_classes;
  j["class_names"] = t.class_names;
  j["metric"] = to_string(t.metric);
  return j;
}

TaskSpec task_spec_from_json(const Json& j) {
  JsonReader r(j, "task");
  TaskSpec t;
  r.get("task_id", t.task_id);
  r.get("n_classes", t.n_classes);
  r.get("class_names", t.class_names);
  std::string metric;
  r.get("metric", metric);
  r.finish();
  if (t.class_names.empty() && t.n_classes > 0) {
    const auto d = TaskSpec::make(t.task_id, t.n_classes);
    t.class_names = d.class_names;
    if (metric.empty()) t.metric = d.metric;
  }
  if (!metric.empty()) {
    try {
      t.metric = parse_metric(metric);
    } catch (const Error&) {
      throw ConfigError("task: unknown metric '" + metric + "'");
    }
  }
  t.validate();
  return t;
}

Json to_json(const SynthTaskConfig& c) {
  Json j;
  j["task_id"] = c.task_id;
  j["feat_dim"] = c.feat_dim;
  j["n_concepts"] = c.n_concepts;
  j["concepts_per_class"] = c.concepts_per_class;
  j["background_concepts"] = c.background_concepts;
  j["witness_rate"] = c.witness_rate;
  j["min_bag_size"] = c.min_bag_size;
  j["max_bag_size"] = c.max_bag_size;
  j["noise_sigma"] = c.noise_sigma;
  j["n_bags_per_class"] = c.n_bags_per_class;
  j["family_seed"] = c.family_seed;
  j["seed"] = c.seed;
  j["orthogonal_prototypes"] = c.orthogonal_prototypes;
  j["train_frac"] = c.train_frac;
  j["val_frac"] = c.val_frac;
  return j;
}

SynthTaskConfig synth_config_from_json(const Json& j) {
  JsonReader r(j, "synth");
  SynthTaskConfig c;
  r.get("task_id", c.task_id);
  r.get("feat_dim", c.feat_dim);
  r.get("n_concepts", c.n_concepts);
  r.get("concepts_per_class", c.concepts_per_class);
  r.get("background_concepts", c.background_concepts);
  r.get("witness_rate", c.witness_rate);
  r.get("min_bag_size", c.min_bag_size);
  r.get("max_bag_size", c.max_bag_size);
  r.get("noise_sigma", c.noise_sigma);
  r.get("n_bags_per_class", c.n_bags_per_class);
  r.get("family_seed", c.family_seed);
  r.get("seed", c.seed);
  r.get("orthogonal_prototypes", c.orthogonal_prototypes);
  r.get("train_frac", c.train_frac);
  r.get("val_frac", c.val_frac);
  r.finish();
  c.validate();
  return c;
}

Json to_json(const SuiteConfig& c) {
  Json j;
  j["feat_dim"] = c.feat_dim;
  j["n_class_concepts"] = c.n_class_concepts;
  j["n_background_concepts"] = c.n_background_concepts;
  j["witness_rate"] = c.witness_rate;
  j["min_bag_size"] = c.min_bag_size;
  j["max_bag_size"] = c.max_bag_size;
  j["noise_sigma"] = c.noise_sigma;
  j["orthogonal_prototypes"] = c.orthogonal_prototypes;
  j["pretrain_bags"] = c.pretrain_bags;
  j["n_targets"] = c.n_targets;
  j["target_bags"] = c.target_bags;
  return j;
}

SuiteConfig suite_config_from_json(const Json& j) {
  JsonReader r(j, "suite");
  SuiteConfig c;
  r.get("feat_dim", c.feat_dim);
  r.get("n_class_concepts", c.n_class_concepts);
  r.get("n_background_concepts", c.n_background_concepts);
  r.get("witness_rate", c.witness_rate);
  r.get("min_bag_size", c.min_bag_size);
  r.get("max_bag_size", c.max_bag_size);
  r.get("noise_sigma", c.noise_sigma);
  r.get("orthogonal_prototypes", c.orthogonal_prototypes);
  r.get("pretrain_bags", c.pretrain_bags);
  r.get("n_targets", c.n_targets);
  r.get("target_bags", c.target_bags);
  r.finish();
  c.validate();
  return c;
}

}  // namespace milkit
