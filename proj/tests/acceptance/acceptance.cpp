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

// Acceptance suite. Prints one PASS/FAIL line per criterion.
//
//   acceptance [--work DIR] [--setup] [--criterion N]...
//
// --setup wipes DIR and pretrains the desk zoo that criteria 5-8 share.
// Without --criterion every criterion runs.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "milkit/experiment.hpp"
#include "support/gradcheck.hpp"

using namespace milkit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ExperimentConfig desk_config(const fs::path& work) {
  auto c = ExperimentConfig::desk();
  c.output_dir = work;
  return c;
}

Json read_result(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw DataError("missing result " + p.string());
  return Json::parse(f);
}

double result_value(const fs::path& work, const RunKey& key) {
  return read_result(work / "results" / key.relative_path()).at("eval").at("value").get<double>();
}

std::vector<std::string> target_ids(const ExperimentConfig& c) {
  std::vector<std::string> out;
  for (const auto& t : make_suite(*c.suite, 0).targets) out.push_back(t.task_id);
  return out;
}

// --- 1 ----------------------------------------------------------------------

Outcome architecture_fidelity() {
  struct Row {
    long long params;
    int embed, attn;
    std::vector<int> hidden;
  };
  const std::vector<Row> rows = {
      {8'530'675, 512, 512, {2048, 1536, 1024, 768}}, {6'837'292, 512, 512, {2048, 1280, 768}},
      {5'249'027, 512, 512, {2048, 1024}},            {3'084'931, 512, 384, {1280, 768}},
      {1'445'507, 512, 384, {512, 512}},              {920'195, 512, 384, {}},
      {591'747, 384, 256, {}},                        {394'755, 256, 256, {}},
      {164'611, 128, 128, {}},
  };
  int ok = 0;
  std::string misses;
  for (const auto& r : rows) {
    const auto cfg = ModelConfig::abmil(1024, r.embed, r.attn, r.hidden, 2);
    const long long closed = param_count(cfg);
    const long long built = build_model(cfg, 0).count();
    if (closed == r.params && built == r.params)
      ++ok;
    else
      misses += " " + std::to_string(r.params) + "->" + std::to_string(built);
  }
  return {ok == static_cast<int>(rows.size()),
          std::to_string(ok) + "/9 Table A1 rows exact" + (misses.empty() ? "" : "; got" + misses)};
}

// --- 2 ----------------------------------------------------------------------

Outcome gradient_correctness() {
  double worst = 0.0;
  std::string worst_name;
  int tensors = 0;
  for (const auto& [name, cfg] : testing::tiny_configs()) {
    const auto gc = testing::kink_free_case(cfg, name == "auxmil" ? 5 : 3, 21);
    for (const auto& e : testing::gradient_errors(gc.params, cfg, gc.bag, 1 % cfg.n_classes)) {
      ++tensors;
      if (e.rel_error > worst) {
        worst = e.rel_error;
        worst_name = name + ":" + e.name;
      }
    }
  }
  return {worst < 1e-4, std::to_string(testing::tiny_configs().size()) + " archs, " + std::to_string(tensors) +
                            " tensors, max rel error " + fmt("%.2e", worst) + " (" + worst_name + ") < 1e-4"};
}

// --- 3 ----------------------------------------------------------------------

double auroc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        den += 1.0;
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return num / den;
}

std::vector<std::vector<double>> confusion(const std::vector<int>& p, const std::vector<int>& y, int c) {
  std::vector<std::vector<double>> m(c, std::vector<double>(c, 0.0));
  for (std::size_t i = 0; i < p.size(); ++i) m[y[i]][p[i]] += 1.0;
  return m;
}

double balacc_confusion(const std::vector<int>& p, const std::vector<int>& y, int c) {
  const auto m = confusion(p, y, c);
  double sum = 0.0;
  int present = 0;
  for (int k = 0; k < c; ++k) {
    const double row = std::accumulate(m[k].begin(), m[k].end(), 0.0);
    if (row == 0.0) continue;
    sum += m[k][k] / row;
    ++present;
  }
  return sum / present;
}

double kappa_confusion(const std::vector<int>& p, const std::vector<int>& y, int c) {
  const auto o = confusion(p, y, c);
  const double n = static_cast<double>(p.size());
  std::vector<double> rows(c, 0.0), cols(c, 0.0);
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j) rows[i] += o[i][j], cols[j] += o[i][j];
  double num = 0.0, den = 0.0;
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j) {
      const double w = static_cast<double>((i - j) * (i - j)) / ((c - 1) * (c - 1));
      num += w * o[i][j];
      den += w * rows[i] * cols[j] / n;
    }
  return den == 0.0 ? 1.0 : 1.0 - num / den;
}

Outcome metric_oracles() {
  Rng rng(2026);
  double worst[3] = {0, 0, 0};
  for (int t = 0; t < 1000; ++t) {
    const int n = 2 + static_cast<int>(rng() % 60);
    const int c = 2 + static_cast<int>(rng() % 4);
    std::vector<double> s(n);
    std::vector<int> y(n), yb(n), p(n);
    for (int i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 12) / 4.0;  // coarse grid forces ties
      yb[i] = static_cast<int>(rng() % 2);
      y[i] = static_cast<int>(rng() % c);
      p[i] = rng() % 3 == 0 ? y[i] : static_cast<int>(rng() % c);
    }
    yb[0] = 0;
    yb[1] = 1;
    worst[0] = std::max(worst[0], std::abs(auroc(s, yb) - auroc_pairs(s, yb)));
    worst[1] = std::max(worst[1], std::abs(balanced_accuracy(p, y, c) - balacc_confusion(p, y, c)));
    worst[2] = std::max(worst[2], std::abs(quadratic_weighted_kappa(p, y, c) - kappa_confusion(p, y, c)));
  }
  const double m = std::max({worst[0], worst[1], worst[2]});
  return {m <= 1e-9, "1000 instances each, max |diff| auroc " + fmt("%.1e", worst[0]) + ", balanced acc " +
                         fmt("%.1e", worst[1]) + ", kappa " + fmt("%.1e", worst[2]) + " (tol 1e-9)"};
}

// --- 4 ----------------------------------------------------------------------

MatD gaussian(Eigen::Index n, Eigen::Index d, Rng& rng) {
  std::normal_distribution<double> g;
  MatD m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = g(rng);
  return m;
}

Outcome svcca_properties() {
  Rng rng(7);
  double self_err = 0.0, pearson_err = 0.0, pearson_std = 0.0, inv_err = 0.0;
  for (int t = 0; t < 20; ++t) {
    const MatD x = gaussian(500, 1 + t % 16, rng);
    self_err = std::max(self_err, std::abs(svcca(x, x).mean - 100.0));

    const MatD a = gaussian(400, 1, rng);
    const MatD b = (0.1 * t - 1.0) * a + gaussian(400, 1, rng);
    const VecD ac = a.col(0).array() - a.mean(), bc = b.col(0).array() - b.mean();
    const double r = ac.dot(bc) / std::sqrt(ac.squaredNorm() * bc.squaredNorm());
    const auto w1 = svcca(a, b);
    pearson_err = std::max(pearson_err, std::abs(w1.mean - 100.0 * std::abs(r)));
    pearson_std = std::max(pearson_std, w1.std);

    const int d = 2 + t % 10;
    const MatD z = gaussian(600, d, rng);
    MatD m = gaussian(d, d, rng);
    m.diagonal().array() += 2.0 * d;
    inv_err = std::max(inv_err, std::abs(svcca(z, z * m, 1.0).mean - 100.0));
  }
  const bool pass = self_err <= 1e-6 && pearson_err <= 1e-4 && pearson_std == 0.0 && inv_err <= 1e-4;
  return {pass, "self |err| " + fmt("%.1e", self_err) + " (1e-6); width-1 |err| " + fmt("%.1e", pearson_err) +
                    " std " + fmt("%.1f", pearson_std) + "; invertible map |err| " + fmt("%.1e", inv_err) + " (1e-4)"};
}

// --- 5-8 ----------------------------------------------------------------------

double pretrain_seconds(const fs::path& work) {
  std::ifstream f(work / "pretrain_seconds.txt");
  double s = 0.0;
  f >> s;
  return s;
}

void ensure_zoo(const fs::path& work) {
  const auto cfg = desk_config(work);
  bool ready = true;
  for (const auto& m : cfg.models)
    for (auto s : cfg.seeds) ready = ready && Zoo(cfg.zoo_path()).find(zoo_entry_name(m.name, "pretrain", s)).has_value();
  if (ready) return;
  const auto t0 = std::chrono::steady_clock::now();
  Experiment(cfg).pretrain();
  std::ofstream(work / "pretrain_seconds.txt") << seconds_since(t0) << '\n';
}

Outcome transfer_benefit(const fs::path& work) {
  const auto cfg = desk_config(work);
  Experiment(cfg).transfer();
  bool pass = true;
  std::string detail;
  for (const auto& m : cfg.models) {
    std::vector<double> d;
    for (auto s : cfg.seeds)
      for (const auto& t : target_ids(cfg))
        d.push_back(result_value(work, {"transfer", m.name, t, "pretrained", std::nullopt, s}) -
                    result_value(work, {"transfer", m.name, t, "random", std::nullopt, s}));
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / d.size();
    const double p = paired_sign_flip_pvalue(d);
    pass = pass && mean > 0.0 && p < 0.1;
    detail += (detail.empty() ? "" : "; ") + m.name + " mean delta " + fmt("%+.4f", mean) + " p=" + fmt("%.4f", p) +
              " (n=" + std::to_string(d.size()) + ")";
  }
  return {pass, detail};
}

Outcome fewshot_ordering(const fs::path& work) {
  const auto cfg = desk_config(work);
  Experiment(cfg).fewshot({"abmil"});
  int wins = 0;
  std::string gaps;
  for (auto s : cfg.seeds) {
    double g[2] = {0, 0};
    int i = 0;
    for (int k : {4, 32}) {
      for (const auto& t : target_ids(cfg))
        g[i] += result_value(work, {"fewshot", "abmil", t, "pretrained", k, s}) -
                result_value(work, {"fewshot", "abmil", t, "random", k, s});
      g[i++] /= static_cast<double>(target_ids(cfg).size());
    }
    wins += g[0] > g[1];
    gaps += " s" + std::to_string(s) + ":" + fmt("%+.3f", g[0]) + "/" + fmt("%+.3f", g[1]);
  }
  return {wins >= 4, "gap(K=4) > gap(K=32) in " + std::to_string(wins) + "/5 seeds;" + gaps};
}

Outcome reset_ordering(const fs::path& work) {
  const auto cfg = desk_config(work);
  Experiment ex(cfg);
  ex.transfer({"abmil"});
  ex.reset({"abmil"});
  auto mean_of = [&](const std::string& cmd, const std::string& init) {
    double sum = 0.0;
    int n = 0;
    for (auto s : cfg.seeds)
      for (const auto& t : target_ids(cfg)) {
        sum += result_value(work, {cmd, "abmil", t, init, std::nullopt, s});
        ++n;
      }
    return sum / n;
  };
  const double full = mean_of("transfer", "pretrained");
  const double attn = mean_of("reset", "reset_attn");
  const double all = mean_of("reset", "reset_all");
  // one metric point is 0.01
  const bool pass = full >= attn && attn >= all - 0.01;
  return {pass, "abmil full " + fmt("%.4f", full) + " >= reset_attn " + fmt("%.4f", attn) + " >= reset_all " +
                    fmt("%.4f", all) + " - 0.01"};
}

Outcome stability_ordering(const fs::path& work) {
  const auto cfg = desk_config(work);
  Experiment(cfg).svcca({"abmil"});
  int wins = 0;
  std::string detail;
  for (auto s : cfg.seeds) {
    double v[2] = {0, 0};
    int i = 0;
    for (const char* init : {"pretrained", "random"}) {
      for (const auto& t : target_ids(cfg)) {
        const auto j = read_result(work / "results" / RunKey{"svcca", "abmil", t, init, std::nullopt, s}.relative_path());
        for (const auto& l : j.at("svcca").at("layers"))
          if (l.at("name") == "attn") v[i] += l.at("mean").get<double>();
      }
      v[i++] /= static_cast<double>(target_ids(cfg).size());
    }
    wins += v[0] > v[1];
    detail += " s" + std::to_string(s) + ":" + fmt("%.1f", v[0]) + "/" + fmt("%.1f", v[1]);
  }
  return {wins >= 4, "attention SVCCA pretrained > random in " + std::to_string(wins) + "/5 seeds;" + detail};
}

// --- 9 ----------------------------------------------------------------------

Outcome determinism(const fs::path& work) {
  std::vector<std::string> fails;
  Rng rng(9);
  std::normal_distribution<float> g;

  // feature files
  MatF f(37, 13);
  for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = g(rng);
  f(0, 0) = -0.0f;
  f(1, 0) = std::numeric_limits<float>::denorm_min();
  const fs::path ff = work / "det" / "bag.milf";
  fs::create_directories(ff.parent_path());
  write_feature_file(f, ff);
  const MatF back = read_feature_file(ff);
  if (encode_features(back) != encode_features(f) || std::memcmp(back.data(), f.data(), f.size() * sizeof(float)) != 0)
    fails.push_back("feature round trip");

  // checkpoints: round trip, and identical training twice
  SynthTaskConfig s;
  s.feat_dim = 16;
  s.n_concepts = 4;
  s.concepts_per_class = {{0}, {1}};
  s.n_bags_per_class = 20;
  s.seed = 3;
  const auto data = synth_bags(s).to_dataset();
  const auto cfg = ModelConfig::abmil(16, 8, 4, {8}, 2);
  TrainConfig tc;
  tc.max_epochs = 4;
  tc.min_epochs = 2;
  tc.seed = 5;
  auto make = [&] {
    const auto r = train(cfg, build_model(cfg, 11), data, tc);
    return Checkpoint{cfg, r.params, data.manifest.task, tc, "2026-01-01T00:00:00Z", kCheckpointVersion};
  };
  const auto a = make(), b = make();
  if (encode_checkpoint(a) != encode_checkpoint(b)) fails.push_back("identical runs differ");
  save_checkpoint(a, work / "det" / "a.milc");
  const auto loaded = load_checkpoint(work / "det" / "a.milc");
  if (encode_checkpoint(loaded) != encode_checkpoint(a) || !loaded.params.bitwise_equal(a.params))
    fails.push_back("checkpoint round trip");

  // knn and bootstrap per seed
  const auto tr = embed_bags(a.params, cfg, data, Split::kTrain);
  const auto te = embed_bags(a.params, cfg, data, Split::kTest);
  const auto k1 = knn_evaluate(tr, te, 5, data.manifest.task, KnnDistance::kEuclidean, 200, 4);
  const auto k2 = knn_evaluate(tr, te, 5, data.manifest.task, KnnDistance::kEuclidean, 200, 4);
  bool same = k1.value == k2.value && k1.std == k2.std && k1.predictions.size() == k2.predictions.size();
  for (std::size_t i = 0; same && i < k1.predictions.size(); ++i)
    same = k1.predictions[i].score == k2.predictions[i].score && k1.predictions[i].pred == k2.predictions[i].pred;
  if (!same) fails.push_back("knn");
  const auto e1 = evaluate_split(a.params, cfg, data, Split::kTest, 500, 8);
  const auto e2 = evaluate_split(a.params, cfg, data, Split::kTest, 500, 8);
  if (e1.std != e2.std || e1.value != e2.value) fails.push_back("bootstrap");

  std::string detail = "feature files, checkpoints, repeated training, knn, bootstrap";
  if (!fails.empty()) {
    detail = "failed:";
    for (const auto& x : fails) detail += " " + x;
  }
  return {fails.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"milkit acceptance suite"};
  std::string work = "acceptance_work";
  bool setup = false;
  std::vector<int> which;
  app.add_option("--work", work, "Scratch directory shared by criteria 5-8");
  app.add_flag("--setup", setup, "Wipe the scratch directory and pretrain the shared zoo");
  app.add_option("--criterion", which, "Criterion to run (repeatable); all when omitted")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);
  if (!setup && which.empty()) which = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  const fs::path dir = fs::absolute(work);
  bool all_pass = true;
  try {
    if (setup) {
      fs::remove_all(dir);
      fs::create_directories(dir);
      const auto t0 = std::chrono::steady_clock::now();
      ensure_zoo(dir);
      std::cout << "SETUP pretrained desk zoo in " << fmt("%.1f", seconds_since(t0)) << " s" << std::endl;
    }
    fs::create_directories(dir);
    // (criterion, budget seconds, name, body)
    const std::map<int, std::tuple<double, std::string, std::function<Outcome()>>> table = {
        {1, {1, "architecture fidelity", architecture_fidelity}},
        {2, {30, "gradient correctness", gradient_correctness}},
        {3, {10, "metric oracles", metric_oracles}},
        {4, {30, "svcca properties", svcca_properties}},
        {5, {1200, "transfer benefit", [&] { return transfer_benefit(dir); }}},
        {6, {900, "few-shot ordering", [&] { return fewshot_ordering(dir); }}},
        {7, {1200, "reset ordering", [&] { return reset_ordering(dir); }}},
        {8, {900, "stability ordering", [&] { return stability_ordering(dir); }}},
        {9, {60, "round-trip determinism", [&] { return determinism(dir); }}},
    };
    for (int c : which) {
      const auto& [budget, name, body] = table.at(c);
      double extra = 0.0;
      if (c >= 5 && c <= 8) {
        ensure_zoo(dir);
        // the shared pretraining counts against the transfer criterion
        if (c == 5) extra = pretrain_seconds(dir);
      }
      const auto t0 = std::chrono::steady_clock::now();
      Outcome o = body();
      const double secs = seconds_since(t0) + extra;
      const bool in_time = secs < budget;
      const bool pass = o.pass && in_time;
      all_pass = all_pass && pass;
      std::cout << "CRITERION " << c << ' ' << (pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << " ["
                << fmt("%.1f", secs) << " s / budget " << fmt("%.0f", budget) << " s" << (in_time ? "" : ", over budget")
                << "]" << std::endl;
    }
  } catch (const Error& e) {
    std::cout << "ERROR " << e.what() << std::endl;
    return 1;
  }
  return all_pass ? 0 : 1;
}
