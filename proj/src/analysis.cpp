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

#include "milkit/analysis.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "milkit/transfer.hpp"

namespace milkit {
namespace {

struct SampleRef {
  std::size_t entry;  // index into the split's entry list
  Eigen::Index row;
};

// Leading left singular vectors of centered m holding `keep` of the
// squared-singular-value mass; numerically null directions are dropped.
MatD truncated_basis(const MatD& m, double keep) {
  const MatD c = m.rowwise() - m.colwise().mean();
  Eigen::BDCSVD<MatD> svd(c, Eigen::ComputeThinU);
  const VecD s = svd.singularValues();
  if (s.size() == 0 || s(0) <= 0.0) return MatD(m.rows(), 0);
  const double tol = s(0) * 1e-10 * static_cast<double>(std::max(m.rows(), m.cols()));
  Eigen::Index rank = 0;
  while (rank < s.size() && s(rank) > tol) ++rank;
  const VecD sq = s.head(rank).array().square();
  const double total = sq.sum();
  Eigen::Index r = 0;
  double acc = 0.0;
  while (r < rank) {
    acc += sq(r++);
    if (acc >= keep * total * (1.0 - 1e-12)) break;
  }
  return svd.matrixU().leftCols(r);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  return f;
}

}  // namespace

std::vector<std::string> capturable_layers(const ModelConfig& cfg) {
  std::vector<std::string> out;
  for (int i = 0; i < cfg.n_fc_layers(); ++i) out.push_back("fc." + std::to_string(i));
  if (cfg.has_attention_branch()) out.push_back("attn");
  return out;
}

std::vector<ActivationDump> capture_activations(const ParamsF& params, const ModelConfig& cfg, const Dataset& data,
                                                Split split, const std::vector<std::string>& layers,
                                                int max_instances, std::uint64_t seed) {
  const auto known = capturable_layers(cfg);
  for (const auto& l : layers)
    if (std::find(known.begin(), known.end(), l) == known.end())
      throw ConfigError("cannot capture unknown layer '" + l + "' for arch " + to_string(cfg.arch));
  if (max_instances < 1) throw ConfigError("max_instances must be >= 1");

  const auto entries = data.manifest.split(split);
  std::vector<SampleRef> all;
  for (std::size_t e = 0; e < entries.size(); ++e)
    for (Eigen::Index r = 0; r < data.bag(*entries[e]).features.rows(); ++r) all.push_back({e, r});
  if (static_cast<std::size_t>(max_instances) < all.size()) {
    Rng rng(derive_seed(seed, "capture"));
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(static_cast<std::size_t>(max_instances));
    std::sort(all.begin(), all.end(),
              [](const SampleRef& a, const SampleRef& b) { return a.entry < b.entry || (a.entry == b.entry && a.row < b.row); });
  }

  std::vector<ActivationDump> dumps;
  for (const auto& l : layers) {
    ActivationDump d;
    d.layer = l;
    int width = 1;
    if (l != "attn") {
      const auto fc = std::stoul(l.substr(3));
      width = fc < cfg.fc_hidden_dims.size() ? cfg.fc_hidden_dims[fc] : cfg.embed_dim;
    }
    d.matrix.resize(static_cast<Eigen::Index>(all.size()), width);
    dumps.push_back(std::move(d));
  }

  ForwardCache<float> cache;
  std::size_t i = 0;
  while (i < all.size()) {
    const std::size_t e = all[i].entry;
    const auto& entry = *entries[e];
    forward<float>(params, cfg, data.bag(entry).features, {}, &cache);
    for (; i < all.size() && all[i].entry == e; ++i) {
      const Eigen::Index r = all[i].row;
      for (auto& d : dumps) {
        if (d.layer == "attn")
          d.matrix(static_cast<Eigen::Index>(i), 0) = cache.scores(r);
        else
          d.matrix.row(static_cast<Eigen::Index>(i)) = cache.fc_act[std::stoul(d.layer.substr(3))].row(r);
        if (d.sample_ids.size() <= i) d.sample_ids.push_back(entry.bag_id + ":" + std::to_string(r));
      }
    }
  }
  return dumps;
}

SvccaResult svcca(const MatD& x, const MatD& y, double variance_keep) {
  if (x.rows() != y.rows()) throw DataError("svcca: sample counts differ");
  if (!(variance_keep > 0.0 && variance_keep <= 1.0)) throw ConfigError("svcca: variance_keep must be in (0, 1]");
  if (x.rows() <= std::max(x.cols(), y.cols()))
    throw DataError("svcca: need more samples (" + std::to_string(x.rows()) + ") than features (" +
                    std::to_string(std::max(x.cols(), y.cols())) + ")");
  if (!x.allFinite() || !y.allFinite()) throw NumericError("svcca: non-finite activations");

  SvccaResult res;
  const MatD bx = truncated_basis(x, variance_keep);
  const MatD by = truncated_basis(y, variance_keep);
  if (bx.cols() == 0 || by.cols() == 0) return res;

  // Orthonormal bases: canonical correlations are the singular values of Bx^T By.
  Eigen::JacobiSVD<MatD> svd(bx.transpose() * by);
  const VecD rho = svd.singularValues();
  for (Eigen::Index i = 0; i < rho.size(); ++i) res.correlations.push_back(std::clamp(rho(i), 0.0, 1.0));
  const double n = static_cast<double>(res.correlations.size());
  const double mean = std::accumulate(res.correlations.begin(), res.correlations.end(), 0.0) / n;
  double var = 0.0;
  for (double c : res.correlations) var += (c - mean) * (c - mean);
  res.mean = 100.0 * mean;
  res.std = 100.0 * std::sqrt(var / n);
  return res;
}

StabilityReport layer_stability_report(const ParamsF& before, const ParamsF& after, const ModelConfig& cfg,
                                       const Dataset& data, Split split, std::vector<std::string> layers,
                                       int max_instances, std::uint64_t seed, double variance_keep) {
  for (const auto* p : {&before, &after})
    if (const auto bad = p->schema_mismatches(cfg); !bad.empty())
      throw ConfigError("stability report: parameters do not match the config: " + bad.front());
  if (layers.empty()) layers = capturable_layers(cfg);
  const auto a = capture_activations(before, cfg, data, split, layers, max_instances, seed);
  const auto b = capture_activations(after, cfg, data, split, layers, max_instances, seed);
  StabilityReport r;
  r.tag = to_string(cfg.arch);
  r.n_samples = a.empty() ? 0 : static_cast<int>(a.front().matrix.rows());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (a[i].sample_ids != b[i].sample_ids) throw DataError("stability report: sample sets differ");
    const auto s = svcca(a[i].matrix.cast<double>(), b[i].matrix.cast<double>(), variance_keep);
    r.layers.push_back({layers[i], s.mean, s.std, static_cast<int>(s.correlations.size())});
  }
  return r;
}

std::string to_json(const StabilityReport& r) {
  nlohmann::ordered_json j;
  j["tag"] = r.tag;
  j["n_samples"] = r.n_samples;
  j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : r.layers)
    j["layers"].push_back({{"name", l.name}, {"mean", l.mean}, {"std", l.std}, {"n_components", l.n_components}});
  return j.dump(2);
}

void attention_export(const ParamsF& params, const ModelConfig& cfg, const Dataset& data, Split split,
                      const std::filesystem::path& path) {
  auto f = open_csv(path);
  f << "bag_id,instance_index,attention_weight\n";
  for (const auto* e : data.manifest.split(split)) {
    const VecF a = attention_scores<float>(params, cfg, data.bag(*e).features);
    for (Eigen::Index i = 0; i < a.size(); ++i) f << e->bag_id << ',' << i << ',' << fmt(a(i)) << '\n';
  }
  if (!f) throw DataError("failed writing " + path.string());
}

void embedding_export(const ParamsF& params, const ModelConfig& cfg, const Dataset& data, Split split,
                      const std::filesystem::path& path) {
  const auto emb = embed_bags(params, cfg, data, split);
  auto f = open_csv(path);
  f << "bag_id,label";
  for (Eigen::Index j = 0; j < emb.x.cols(); ++j) f << ",e_" << j;
  f << '\n';
  for (Eigen::Index i = 0; i < emb.x.rows(); ++i) {
    f << emb.bag_ids[i] << ',' << emb.labels[i];
    for (Eigen::Index j = 0; j < emb.x.cols(); ++j) f << ',' << fmt(emb.x(i, j));
    f << '\n';
  }
  if (!f) throw DataError("failed writing " + path.string());
}

}  // namespace milkit
