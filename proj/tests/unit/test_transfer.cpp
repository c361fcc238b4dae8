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

#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <map>
#include <random>

#include <json.hpp>

#include "milkit/synth.hpp"
#include "milkit/transfer.hpp"
#include "support/tempdir.hpp"

using namespace milkit;
using milkit::testing::TempDir;

namespace {

Checkpoint make_ckpt(const ModelConfig& cfg, std::uint64_t seed) {
  Checkpoint c;
  c.cfg = cfg;
  c.params = build_model(cfg, seed);
  c.task = TaskSpec::make("src", cfg.n_classes);
  c.created_at = "2026-01-01T00:00:00Z";
  return c;
}

// Splits the container by hand so the header can be edited.
std::string with_header(const std::string& bytes, const std::function<void(nlohmann::json&)>& edit) {
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  auto h = nlohmann::json::parse(bytes.substr(16, len));
  edit(h);
  const std::string nh = h.dump();
  std::string out = bytes.substr(0, 8);
  const std::uint64_t nl = nh.size();
  out.append(reinterpret_cast<const char*>(&nl), 8);
  return out + nh + bytes.substr(16 + len);
}

Embeddings blobs(int n_per_class, double sep, std::uint64_t seed, int dim = 4) {
  Rng rng(seed);
  std::normal_distribution<float> g;
  Embeddings e;
  e.x.resize(2 * n_per_class, dim);
  for (int i = 0; i < 2 * n_per_class; ++i) {
    const int c = i % 2;
    for (int j = 0; j < dim; ++j) e.x(i, j) = g(rng) + (j == 0 ? float(c * sep) : 0.0f);
    e.labels.push_back(c);
    e.bag_ids.push_back("q" + std::to_string(i));
  }
  return e;
}

// Brute force: sort all train rows by (distance, index), vote over the first k.
std::vector<int> knn_oracle(const Embeddings& tr, const Embeddings& te, int k, int c) {
  std::vector<int> out;
  for (Eigen::Index q = 0; q < te.x.rows(); ++q) {
    std::vector<std::pair<double, int>> d;
    for (Eigen::Index i = 0; i < tr.x.rows(); ++i)
      d.push_back({(te.x.row(q).cast<double>() - tr.x.row(i).cast<double>()).norm(), int(i)});
    std::sort(d.begin(), d.end());
    std::vector<int> votes(c, 0);
    std::vector<double> inv(c, 0.0);
    for (int r = 0; r < k; ++r) {
      ++votes[tr.labels[d[r].second]];
      inv[tr.labels[d[r].second]] += 1.0 / d[r].first;
    }
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (votes[j] > votes[best] || (votes[j] == votes[best] && inv[j] > inv[best])) best = j;
    out.push_back(best);
  }
  return out;
}

SynthTaskConfig small_task(std::uint64_t seed) {
  SynthTaskConfig s;
  s.task_id = "tgt";
  s.feat_dim = 16;
  s.n_concepts = 6;
  s.concepts_per_class = {{0}, {1}};
  s.noise_sigma = 0.2;
  s.n_bags_per_class = 15;
  s.family_seed = 1;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("checkpoint container") {
  const auto cfg = ModelConfig::abmil(8, 6, 4, {7}, 3);
  const auto ck = make_ckpt(cfg, 5);

  SUBCASE("round trip is bitwise") {
    TempDir dir;
    save_checkpoint(ck, dir.path() / "m.milc");
    const auto back = load_checkpoint(dir.path() / "m.milc");
    CHECK(back.params.bitwise_equal(ck.params));
    CHECK(back.cfg == cfg);
    CHECK(back.task.task_id == "src");
    CHECK(back.created_at == ck.created_at);
    CHECK(encode_checkpoint(back) == encode_checkpoint(ck));
  }
  SUBCASE("round trip across all archs") {
    for (const auto& c : {ModelConfig::mean(5, 2, 4), ModelConfig::max(5, 3, 4), ModelConfig::auxmil(5, 4, 3, {}, 2),
                          ModelConfig::transformer(5, 4, 2, 6, {3}, 2, 2)})
      CHECK(decode_checkpoint(encode_checkpoint(make_ckpt(c, 2))).params.bitwise_equal(build_model(c, 2)));
  }
  SUBCASE("header and blob layout") {
    const auto bytes = encode_checkpoint(ck);
    CHECK(bytes.substr(0, 4) == "MILC");
    std::uint32_t version = 0;
    std::memcpy(&version, bytes.data() + 4, 4);
    CHECK(version == 1);
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 8, 8);
    const auto h = nlohmann::json::parse(bytes.substr(16, len));
    CHECK(h.at("layers").size() == ck.params.size());
    CHECK(bytes.size() == 16 + len + 4 * static_cast<std::size_t>(ck.params.count()));
    // first tensor is fc.0.weight, stored row-major
    float f01 = 0;
    std::memcpy(&f01, bytes.data() + 16 + len + 4, 4);
    CHECK(f01 == ck.params.at("fc.0.weight")(0, 1));
  }
  SUBCASE("tampered shape") {
    const auto bad = with_header(encode_checkpoint(ck), [](nlohmann::json& h) { h["layers"][0]["shape"][0] = 99; });
    try {
      decode_checkpoint(bad);
      FAIL("expected a shape mismatch");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("shape mismatch") != std::string::npos);
    }
  }
  SUBCASE("version, magic and truncation") {
    auto bytes = encode_checkpoint(ck);
    auto v2 = bytes;
    v2[4] = 2;
    CHECK_THROWS_AS(decode_checkpoint(v2), CheckpointVersionError);
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), BadMagicError);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), TruncatedFileError);
    CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), DataError);
    CHECK_THROWS_AS(decode_checkpoint(with_header(bytes, [](nlohmann::json& h) { h["cfg"]["embed_dim"] = 7; })),
                    DataError);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/m.milc"), DataError);
  }
}

TEST_CASE("init from pretrained") {
  const auto src_cfg = ModelConfig::abmil(8, 6, 4, {7}, 5);
  const auto ck = make_ckpt(src_cfg, 9);

  SUBCASE("many-class source to binary target") {
    const auto tgt = retarget(src_cfg, 2);
    const auto p = init_from_pretrained(ck, tgt, 3);
    CHECK(p.at("classifier.weight").rows() == 2);
    CHECK(p.at("classifier.weight").cols() == 6);
    for (std::size_t i = 0; i < p.size(); ++i)
      if (!is_head_layer(p.name(i))) CHECK(p.tensor_equal(ck.params, p.name(i)));
    CHECK(p.at("classifier.weight").isApprox(build_model(tgt, 3).at("classifier.weight")));
  }
  SUBCASE("same class count still reinitializes the head") {
    const auto p = init_from_pretrained(ck, src_cfg, 3);
    CHECK_FALSE(p.tensor_equal(ck.params, "classifier.weight"));
    CHECK(p.tensor_equal(build_model(src_cfg, 3), "classifier.weight"));
    CHECK(p.tensor_equal(ck.params, "attn.V.weight"));
  }
  SUBCASE("random source equals build_model") {
    TransferPlan plan;
    plan.arch = ModelConfig::abmil(16, 8, 8, {}, 7);
    plan.target = synth_bags(small_task(1)).to_dataset();
    plan.init_seed = 4;
    CHECK(plan.initial_params().bitwise_equal(build_model(retarget(plan.arch, 2), 4)));
    CHECK(plan.init_kind() == "random");
  }
  SUBCASE("arch mismatch names missing layers") {
    const auto mean_ck = make_ckpt(ModelConfig::mean(8, 2, 6), 1);
    try {
      init_from_pretrained(mean_ck, ModelConfig::abmil(8, 6, 4, {}, 2), 1);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("attn.V.weight (missing)") != std::string::npos);
    }
    CHECK_THROWS_AS(init_from_pretrained(ck, ModelConfig::abmil(8, 6, 4, {9}, 2), 1), ConfigError);
  }
}

TEST_CASE("embeddings") {
  const auto data = synth_bags(small_task(2)).to_dataset();

  SUBCASE("mean of identical instances") {
    const auto cfg = ModelConfig::mean(16, 2, 8);
    const auto p = build_model(cfg, 1);
    VecF x = VecF::LinSpaced(16, -1.0f, 1.0f);
    MatF bag = x.transpose().replicate(5, 1);
    const VecF expect = (p.at("fc.0.weight") * x + p.at("fc.0.bias")).cwiseMax(0.0f);
    CHECK((forward<float>(p, cfg, bag).embedding - expect).cwiseAbs().maxCoeff() < 1e-5);
  }
  SUBCASE("shape, order, determinism, permutation invariance") {
    const auto cfg = ModelConfig::abmil(16, 8, 8, {}, 2);
    const auto p = build_model(cfg, 1);
    const auto e = embed_bags(p, cfg, data, Split::kTrain);
    CHECK(e.x.rows() == static_cast<Eigen::Index>(data.manifest.count(Split::kTrain)));
    CHECK(e.x.cols() == 8);
    CHECK(e.bag_ids.front() == data.manifest.split(Split::kTrain).front()->bag_id);
    CHECK(e.x == embed_bags(p, cfg, data, Split::kTrain).x);
    const MatF& bag = data.bag(*data.manifest.split(Split::kTrain).front()).features;
    const MatF rev = bag.colwise().reverse();
    CHECK((forward<float>(p, cfg, rev).embedding - e.x.row(0).transpose()).cwiseAbs().maxCoeff() < 1e-5);
  }
  SUBCASE("dimension mismatch") {
    const auto cfg = ModelConfig::abmil(12, 8, 8, {}, 2);
    CHECK_THROWS_AS(embed_bags(build_model(cfg, 1), cfg, data, Split::kTrain), DataError);
  }
}

TEST_CASE("knn") {
  SUBCASE("coincident point with k=1") {
    const auto tr = blobs(10, 2.0, 1);
    Embeddings te;
    te.x = tr.x.row(7);
    te.labels = {0};
    te.bag_ids = {"x"};
    CHECK(knn_predict(tr, te, 1, 2)[0].pred == tr.labels[7]);
  }
  SUBCASE("single-label train set") {
    auto tr = blobs(10, 2.0, 1);
    std::fill(tr.labels.begin(), tr.labels.end(), 2);
    auto te = blobs(6, 2.0, 2);
    te.labels = {0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2};
    const auto preds = knn_predict(tr, te, 5, 3);
    for (const auto& p : preds) CHECK(p.pred == 2);
    CHECK(metric_value(MetricKind::kBalancedAccuracy, preds, 3) == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("separated blobs give perfect auroc") {
    const auto tr = blobs(50, 10.0, 3), te = blobs(25, 10.0, 4);
    const auto r = knn_evaluate(tr, te, 20, TaskSpec::make("b", 2), KnnDistance::kEuclidean, 100, 1);
    CHECK(r.value == 1.0);
  }
  SUBCASE("matches the brute-force oracle") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const auto tr = blobs(30, 1.0, 10 + s), te = blobs(10, 1.0, 100 + s);
      const int k = 1 + static_cast<int>(s % 7);
      const auto got = knn_predict(tr, te, k, 2);
      const auto want = knn_oracle(tr, te, k, 2);
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i].pred == want[i]);
    }
  }
  SUBCASE("rotation invariance") {
    const auto tr = blobs(40, 1.0, 7, 6), te = blobs(15, 1.0, 8, 6);
    Rng rng(3);
    std::normal_distribution<double> g;
    MatD m(6, 6);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = g(rng);
    const MatD qd = Eigen::HouseholderQR<MatD>(m).householderQ();
    const MatF q = qd.cast<float>();
    auto tr2 = tr, te2 = te;
    tr2.x = tr.x * q;
    te2.x = te.x * q;
    for (auto dist : {KnnDistance::kEuclidean, KnnDistance::kCosine}) {
      const auto a = knn_predict(tr, te, 20, 2, dist), b = knn_predict(tr2, te2, 20, 2, dist);
      for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].pred == b[i].pred);
        CHECK(a[i].score == b[i].score);
      }
    }
  }
  SUBCASE("k larger than the train set") {
    const auto tr = blobs(5, 1.0, 1), te = blobs(2, 1.0, 2);
    CHECK_THROWS_AS(knn_predict(tr, te, 11, 2), ConfigError);
  }
}

TEST_CASE("layer reset") {
  const auto cfg = ModelConfig::abmil(8, 6, 4, {10, 7}, 2);  // three FC layers
  const auto src = build_model(cfg, 1);

  SUBCASE("attn") {
    const auto p = reset_layers(src, cfg, ResetSpec::kAttn, 2);
    for (const auto* n : {"attn.V.weight", "attn.U.weight", "attn.w.weight"}) CHECK_FALSE(p.tensor_equal(src, n));
    for (int i = 0; i < 3; ++i) CHECK(p.tensor_equal(src, "fc." + std::to_string(i) + ".weight"));
    CHECK(p.tensor_equal(src, "classifier.weight"));
  }
  SUBCASE("lin2plus") {
    const auto p = reset_layers(src, cfg, ResetSpec::kLin2Plus, 2);
    CHECK(p.tensor_equal(src, "fc.0.weight"));
    CHECK_FALSE(p.tensor_equal(src, "fc.1.weight"));
    CHECK_FALSE(p.tensor_equal(src, "fc.2.weight"));
    CHECK_FALSE(p.tensor_equal(src, "attn.V.weight"));
  }
  SUBCASE("lin3plus") {
    const auto p = reset_layers(src, cfg, ResetSpec::kLin3Plus, 2);
    CHECK(p.tensor_equal(src, "fc.0.weight"));
    CHECK(p.tensor_equal(src, "fc.1.weight"));
    CHECK_FALSE(p.tensor_equal(src, "fc.2.weight"));
    CHECK_FALSE(p.tensor_equal(src, "attn.U.weight"));
  }
  SUBCASE("all matches a fresh build on every non-head weight") {
    const auto p = reset_layers(src, cfg, ResetSpec::kAll, 2);
    const auto fresh = build_model(cfg, 2);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto& n = p.name(i);
      if (is_head_layer(n)) continue;
      CHECK(p.tensor_equal(fresh, n));
      if (n.ends_with(".weight")) CHECK_FALSE(p.tensor_equal(src, n));
    }
  }
  SUBCASE("deterministic per seed") {
    CHECK(reset_layers(src, cfg, ResetSpec::kAttn, 5).bitwise_equal(reset_layers(src, cfg, ResetSpec::kAttn, 5)));
  }
  SUBCASE("specs needing absent layers") {
    const auto one = ModelConfig::abmil(8, 6, 4, {}, 2);
    CHECK_THROWS_AS(reset_layers(build_model(one, 1), one, ResetSpec::kLin3Plus, 1), ConfigError);
    CHECK_THROWS_AS(reset_layers(build_model(one, 1), one, ResetSpec::kLin2Plus, 1), ConfigError);
    const auto mean = ModelConfig::mean(8, 2, 6);
    CHECK_THROWS_AS(reset_layers(build_model(mean, 1), mean, ResetSpec::kAttn, 1), ConfigError);
    CHECK_NOTHROW(reset_layers(build_model(mean, 1), mean, ResetSpec::kAll, 1));
  }
}

TEST_CASE("finetune") {
  const auto data = synth_bags(small_task(3)).to_dataset();
  const auto arch = ModelConfig::abmil(16, 8, 8, {}, 2);
  TrainConfig t;
  t.lr = 1e-3;
  t.max_epochs = 4;
  t.min_epochs = 2;
  t.seed = 1;

  SUBCASE("random plan equals direct training") {
    TransferPlan plan{std::nullopt, arch, data, std::nullopt, 6};
    const auto o = finetune(plan, t, 50, 1);
    const auto direct = train(arch, build_model(arch, 6), data, t);
    CHECK(o.train.params.bitwise_equal(direct.params));
    CHECK(o.init_kind == "random");
    CHECK(o.target_task == "tgt");
  }
  SUBCASE("pretrained plan records its source") {
    auto ck = make_ckpt(retarget(arch, 4), 3);
    ck.task = TaskSpec::make("pc", 4);
    TransferPlan plan{ck, arch, data, ResetSpec::kAttn, 6};
    const auto o = finetune(plan, t, 50, 1);
    CHECK(o.source_task == "pc");
    CHECK(o.init_kind == "reset_attn");
    CHECK(o.cfg.n_classes == 2);
    CHECK(o.test.metric == "auroc");
  }
}
