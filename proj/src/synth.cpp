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

#include "milkit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace milkit {

std::vector<int> SynthTaskConfig::resolved_background() const {
  if (!background_concepts.empty()) return background_concepts;
  std::set<int> owned;
  for (const auto& s : concepts_per_class) owned.insert(s.begin(), s.end());
  std::vector<int> bg;
  for (int k = 0; k < n_concepts; ++k)
    if (!owned.count(k)) bg.push_back(k);
  return bg;
}

void SynthTaskConfig::validate() const {
  auto fail = [this](const std::string& msg) { throw ConfigError("synth task " + task_id + ": " + msg); };
  if (feat_dim < 1 || n_concepts < 1) fail("feat_dim and n_concepts must be positive");
  if (n_classes() < 2) fail("need at least 2 classes");
  for (int c = 0; c < n_classes(); ++c) {
    if (concepts_per_class[c].empty()) fail("class " + std::to_string(c) + " has no concepts");
    for (int k : concepts_per_class[c])
      if (k < 0 || k >= n_concepts) fail("concept index " + std::to_string(k) + " out of range");
  }
  for (int a = 0; a < n_classes(); ++a)
    for (int b = a + 1; b < n_classes(); ++b) {
      std::set<int> sa(concepts_per_class[a].begin(), concepts_per_class[a].end());
      std::set<int> sb(concepts_per_class[b].begin(), concepts_per_class[b].end());
      if (sa == sb) fail("classes " + std::to_string(a) + " and " + std::to_string(b) + " share a concept set");
    }
  for (int k : background_concepts)
    if (k < 0 || k >= n_concepts) fail("background concept " + std::to_string(k) + " out of range");
  if (!(witness_rate > 0.0 && witness_rate <= 1.0)) fail("witness_rate must be in (0, 1]");
  if (min_bag_size < 1 || max_bag_size < min_bag_size) fail("invalid bag_size_range");
  if (witness_rate * min_bag_size < 1.0) fail("witness_rate * min_bag_size must be >= 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) fail("noise_sigma must be finite and >= 0");
  if (n_bags_per_class < 1) fail("n_bags_per_class must be positive");
  if (witness_rate < 1.0 && resolved_background().empty()) fail("no background concepts available");
  if (orthogonal_prototypes && n_concepts > feat_dim) fail("orthogonal prototypes need n_concepts <= feat_dim");
  if (train_frac <= 0.0 || val_frac < 0.0 || train_frac + val_frac > 1.0) fail("invalid split fractions");
}

MatF synth_prototypes(const SynthTaskConfig& cfg) {
  Rng rng(derive_seed(cfg.family_seed, "prototypes"));
  std::normal_distribution<double> normal(0.0, 1.0);
  MatD g(cfg.feat_dim, cfg.n_concepts);
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = normal(rng);
  MatD protos(cfg.n_concepts, cfg.feat_dim);
  if (cfg.orthogonal_prototypes) {
    Eigen::HouseholderQR<MatD> qr(g);
    MatD q = qr.householderQ() * MatD::Identity(cfg.feat_dim, cfg.n_concepts);
    protos = q.transpose();
  } else {
    protos = g.transpose();
  }
  protos.rowwise().normalize();
  return protos.cast<float>();
}

SynthDataset synth_bags(const SynthTaskConfig& cfg) {
  cfg.validate();
  const MatF protos = synth_prototypes(cfg);
  const auto background = cfg.resolved_background();

  SynthDataset out;
  out.manifest.task = TaskSpec::make(cfg.task_id, cfg.n_classes());
  Rng rng(derive_seed(cfg.seed, "bags:" + cfg.task_id));
  std::normal_distribution<float> noise(0.0f, static_cast<float>(cfg.noise_sigma));
  std::uniform_int_distribution<int> bag_size(cfg.min_bag_size, cfg.max_bag_size);

  for (int c = 0; c < cfg.n_classes(); ++c) {
    const auto& own = cfg.concepts_per_class[c];
    std::vector<std::size_t> idx;
    for (int b = 0; b < cfg.n_bags_per_class; ++b) {
      const int n = bag_size(rng);
      const int n_witness = std::min(n, static_cast<int>(std::ceil(cfg.witness_rate * n - 1e-9)));
      std::vector<int> concepts(n);
      for (int i = 0; i < n_witness; ++i) concepts[i] = own[i % own.size()];
      if (n_witness < n) {
        std::uniform_int_distribution<std::size_t> pick(0, background.size() - 1);
        for (int i = n_witness; i < n; ++i) concepts[i] = background[pick(rng)];
      }
      std::shuffle(concepts.begin(), concepts.end(), rng);

      Bag bag;
      bag.id = cfg.task_id + "_c" + std::to_string(c) + "_b" + std::to_string(b);
      bag.label = c;
      bag.features.resize(n, cfg.feat_dim);
      for (int i = 0; i < n; ++i) {
        bag.features.row(i) = protos.row(concepts[i]);
        if (cfg.noise_sigma > 0.0)
          for (int j = 0; j < cfg.feat_dim; ++j) bag.features(i, j) += noise(rng);
      }
      idx.push_back(out.bags.size());
      out.bags.push_back(std::move(bag));
      out.concepts.push_back(std::move(concepts));
    }

    // Per-class stratified split.
    std::vector<std::size_t> perm = idx;
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto n_total = static_cast<double>(perm.size());
    const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_frac * n_total));
    const auto n_val = static_cast<std::size_t>(std::llround(cfg.val_frac * n_total));
    std::vector<Split> split_of(perm.size(), Split::kTest);
    for (std::size_t i = 0; i < perm.size(); ++i) {
      if (i < n_train) split_of[i] = Split::kTrain;
      else if (i < n_train + n_val) split_of[i] = Split::kVal;
    }
    for (std::size_t i = 0; i < perm.size(); ++i) {
      // Entries follow bag creation order; the split comes from the shuffle.
      const auto pos = static_cast<std::size_t>(std::find(perm.begin(), perm.end(), idx[i]) - perm.begin());
      const Bag& bag = out.bags[idx[i]];
      out.manifest.entries.push_back({bag.id, {}, bag.label, split_of[pos]});
    }
  }
  out.manifest.validate();
  return out;
}

Dataset SynthDataset::to_dataset() const {
  Dataset d;
  d.manifest = manifest;
  d.store = std::make_shared<BagStore>();
  for (const auto& b : bags) d.store->add(b);
  return d;
}

DatasetManifest synth_generate(const SynthTaskConfig& cfg, const std::filesystem::path& out_dir) {
  auto data = synth_bags(cfg);
  const auto root = std::filesystem::absolute(out_dir);
  for (std::size_t i = 0; i < data.bags.size(); ++i) {
    auto path = root / "features" / (data.bags[i].id + ".milf");
    write_feature_file(data.bags[i].features, path);
    data.manifest.entries[i].path = path;
  }
  write_manifest(data.manifest, root / "manifest.csv");
  return data.manifest;
}

void SuiteConfig::validate() const {
  if (n_class_concepts < 2) throw ConfigError("suite: need at least 2 class concepts");
  if (n_targets < 1) throw ConfigError("suite: need at least one target");
  if (n_targets > n_class_concepts * (n_class_concepts - 1) / 2)
    throw ConfigError("suite: more targets than distinct concept pairs");
  if (pretrain_bags < 2 * n_class_concepts || target_bags < 4)
    throw ConfigError("suite: too few bags per class");
}

Suite make_suite(const SuiteConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SynthTaskConfig base;
  base.feat_dim = cfg.feat_dim;
  base.n_concepts = cfg.n_class_concepts + cfg.n_background_concepts;
  for (int k = cfg.n_class_concepts; k < base.n_concepts; ++k) base.background_concepts.push_back(k);
  base.witness_rate = cfg.witness_rate;
  base.min_bag_size = cfg.min_bag_size;
  base.max_bag_size = cfg.max_bag_size;
  base.noise_sigma = cfg.noise_sigma;
  base.orthogonal_prototypes = cfg.orthogonal_prototypes;
  base.family_seed = derive_seed(seed, "family");

  Suite s;
  s.pretrain = base;
  s.pretrain.task_id = "pretrain";
  s.pretrain.seed = derive_seed(seed, "pretrain");
  for (int c = 0; c < cfg.n_class_concepts; ++c) s.pretrain.concepts_per_class.push_back({c});
  s.pretrain.n_bags_per_class = cfg.pretrain_bags / cfg.n_class_concepts;
  s.pretrain.validate();

  Rng rng(derive_seed(seed, "target-pairs"));
  std::uniform_int_distribution<int> pick(0, cfg.n_class_concepts - 1);
  std::set<std::pair<int, int>> used;
  while (static_cast<int>(s.targets.size()) < cfg.n_targets) {
    const int a = pick(rng), b = pick(rng);
    if (a == b || used.count({std::min(a, b), std::max(a, b)})) continue;
    used.insert({std::min(a, b), std::max(a, b)});
    SynthTaskConfig t = base;
    t.task_id = "target" + std::to_string(s.targets.size());
    t.seed = derive_seed(seed, t.task_id);
    t.concepts_per_class = {{a}, {b}};
    t.n_bags_per_class = cfg.target_bags / 2;
    t.validate();
    s.targets.push_back(std::move(t));
  }
  return s;
}

}  // namespace milkit
