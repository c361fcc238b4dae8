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

#include "milkit/experiment.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "milkit/presets.hpp"

namespace fs = std::filesystem;

namespace milkit {
namespace {

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot read " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_atomic(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + tmp.string());
    f << text;
    if (!f) throw DataError("failed writing " + tmp.string());
  }
  fs::rename(tmp, p);
}

Json read_json_file(const fs::path& p) {
  try {
    return Json::parse(read_text(p));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(p.string() + ": invalid JSON (" + e.what() + ")");
  }
}

void check_name(const std::string& what, const std::string& name) {
  const bool ok = !name.empty() && name.front() != '.' &&
                  std::all_of(name.begin(), name.end(), [](char c) {
                    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
                  });
  if (!ok) throw ConfigError(what + " '" + name + "' must use only letters, digits, '_', '-' and '.'");
}

std::string fmt(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Advisory exclusive lock held for the object's lifetime.
class FileLock {
 public:
  explicit FileLock(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    fd_ = ::open(p.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw DataError("cannot open lock file " + p.string());
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      throw DataError("cannot lock " + p.string());
    }
  }
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

Json models_to_json(const std::vector<NamedModel>& models) {
  Json j = Json::object();
  for (const auto& m : models) {
    Json c = to_json(m.cfg);
    c.erase("n_classes");
    j[m.name] = c;
  }
  return j;
}

std::vector<NamedModel> models_from_json(const Json& j, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + ": expected an object of named models");
  std::vector<NamedModel> out;
  for (const auto& [name, block] : j.items()) {
    check_name("model name", name);
    if (block.is_object() && block.contains("n_classes"))
      throw ConfigError(what + "." + name + ": n_classes is set from each task, remove it");
    NamedModel m{name, model_config_from_json(block)};
    m.cfg.validate();
    out.push_back(std::move(m));
  }
  return out;
}

Json source_to_json(const DataSource& s) {
  Json j;
  j["manifest"] = s.manifest.generic_string();
  if (s.task) j["task"] = to_json(*s.task);
  return j;
}

DataSource source_from_json(const Json& j, const fs::path& base, const std::string& what) {
  JsonReader r(j, what);
  DataSource s;
  std::string manifest;
  r.get("manifest", manifest);
  if (manifest.empty()) throw ConfigError(what + ": 'manifest' is required");
  s.manifest = fs::path(manifest).is_absolute() ? fs::path(manifest) : base / manifest;
  if (const Json* t = r.raw("task")) s.task = task_spec_from_json(*t);
  r.finish();
  return s;
}

fs::path resolve(const std::string& p, const fs::path& base) {
  return fs::path(p).is_absolute() || base.empty() ? fs::path(p) : base / p;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

// Population std.
double std_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / v.size());
}

Split eval_split_of(const DatasetManifest& m) {
  if (m.has_split(Split::kTest)) return Split::kTest;
  if (m.has_split(Split::kVal)) return Split::kVal;
  return Split::kTrain;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("config: seeds must be non-empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("config: seeds must be unique");
  if (suite && (pretrain || !targets.empty()))
    throw ConfigError("config: give either 'suite' or 'pretrain'/'targets', not both");
  if (!suite && !pretrain) throw ConfigError("config: need a 'suite' or a 'pretrain' manifest");
  if (!suite && targets.empty()) throw ConfigError("config: need at least one target manifest");
  if (models.empty()) throw ConfigError("config: need at least one model");
  for (const auto* list : {&models, &scale_models}) {
    std::set<std::string> names;
    for (const auto& m : *list) {
      check_name("model name", m.name);
      if (!names.insert(m.name).second) throw ConfigError("config: duplicate model name '" + m.name + "'");
      m.cfg.validate();
    }
  }
  train.validate();
  if (pretrain_train) pretrain_train->validate();
  if (suite) suite->validate();
  if (n_bootstrap < 0) throw ConfigError("config: n_bootstrap must be >= 0");
  if (knn_k < 1) throw ConfigError("config: knn.k must be >= 1");
  if (k_shots.empty()) throw ConfigError("config: fewshot.k_shots must be non-empty");
  for (int k : k_shots)
    if (k < 1) throw ConfigError("config: few-shot K must be >= 1");
  if (svcca_max_instances < 1) throw ConfigError("config: svcca.max_instances must be >= 1");
  if (!(svcca_variance_keep > 0.0 && svcca_variance_keep <= 1.0))
    throw ConfigError("config: svcca.variance_keep must be in (0, 1]");
}

Json ExperimentConfig::to_json() const {
  Json j;
  j["config_version"] = kConfigVersion;
  j["seeds"] = seeds;
  j["output_dir"] = output_dir.generic_string();
  if (zoo) j["zoo"] = zoo->generic_string();
  if (suite) j["suite"] = milkit::to_json(*suite);
  if (pretrain) j["pretrain"] = source_to_json(*pretrain);
  if (!targets.empty()) {
    j["targets"] = Json::array();
    for (const auto& t : targets) j["targets"].push_back(source_to_json(t));
  }
  j["models"] = models_to_json(models);
  j["train"] = milkit::to_json(train);
  if (pretrain_train) j["pretrain_train"] = milkit::to_json(*pretrain_train);
  j["n_bootstrap"] = n_bootstrap;
  j["knn"] = {{"k", knn_k}, {"distance", milkit::to_string(knn_distance)}};
  j["fewshot"] = {{"k_shots", k_shots}};
  j["svcca"] = {{"layers", svcca_layers},
                {"max_instances", svcca_max_instances},
                {"variance_keep", svcca_variance_keep},
                {"split", milkit::to_string(svcca_split)}};
  Json specs = Json::array();
  for (auto r : resets) specs.push_back(milkit::to_string(r));
  j["reset"] = {{"specs", specs}};
  if (!scale_models.empty()) j["scale_sweep"] = {{"models", models_to_json(scale_models)}};
  return j;
}

std::string ExperimentConfig::digest() const {
  Json j = to_json();
  j.erase("seeds");
  j.erase("output_dir");
  j.erase("zoo");
  // the per-run seed is written into each result
  j["train"].erase("seed");
  if (j.contains("pretrain_train")) j["pretrain_train"].erase("seed");
  return hex64(fnv1a(j.dump()));
}

fs::path ExperimentConfig::zoo_path() const { return zoo ? *zoo : output_dir / "zoo" / "zoo.json"; }

ExperimentConfig ExperimentConfig::from_json(const Json& j, const fs::path& base) {
  JsonReader r(j, "config");
  int version = 0;
  r.get("config_version", version);
  if (version != kConfigVersion)
    throw ConfigError("config: config_version must be " + std::to_string(kConfigVersion) + " (got " +
                      std::to_string(version) + ")");
  ExperimentConfig c;
  c.models.clear();
  r.get("seeds", c.seeds);
  std::string out = c.output_dir.string();
  r.get("output_dir", out);
  c.output_dir = resolve(out, base);
  std::optional<std::string> zoo;
  r.get("zoo", zoo);
  if (zoo) c.zoo = resolve(*zoo, base);
  if (const Json* s = r.raw("suite")) c.suite = suite_config_from_json(*s);
  if (const Json* p = r.raw("pretrain")) c.pretrain = source_from_json(*p, base, "pretrain");
  if (const Json* t = r.raw("targets")) {
    if (!t->is_array()) throw ConfigError("config: 'targets' must be a list");
    for (std::size_t i = 0; i < t->size(); ++i)
      c.targets.push_back(source_from_json((*t)[i], base, "targets[" + std::to_string(i) + "]"));
  }
  if (const Json* m = r.raw("models")) c.models = models_from_json(*m, "models");
  if (const Json* t = r.raw("train")) c.train = train_config_from_json(*t);
  if (const Json* t = r.raw("pretrain_train")) c.pretrain_train = train_config_from_json(*t);
  r.get("n_bootstrap", c.n_bootstrap);
  if (const Json* k = r.raw("knn")) {
    JsonReader kr(*k, "knn");
    kr.get("k", c.knn_k);
    std::string d = to_string(c.knn_distance);
    kr.get("distance", d);
    kr.finish();
    try {
      c.knn_distance = parse_knn_distance(d);
    } catch (const Error&) {
      throw ConfigError("knn: unknown distance '" + d + "'");
    }
  }
  if (const Json* f = r.raw("fewshot")) {
    JsonReader fr(*f, "fewshot");
    fr.get("k_shots", c.k_shots);
    fr.finish();
  }
  if (const Json* s = r.raw("svcca")) {
    JsonReader sr(*s, "svcca");
    sr.get("layers", c.svcca_layers);
    sr.get("max_instances", c.svcca_max_instances);
    sr.get("variance_keep", c.svcca_variance_keep);
    std::string split = to_string(c.svcca_split);
    sr.get("split", split);
    sr.finish();
    try {
      c.svcca_split = parse_split(split);
    } catch (const Error&) {
      throw ConfigError("svcca: unknown split '" + split + "'");
    }
  }
  if (const Json* rs = r.raw("reset")) {
    JsonReader rr(*rs, "reset");
    std::vector<std::string> specs;
    rr.get("specs", specs);
    rr.finish();
    c.resets.clear();
    for (const auto& s : specs) {
      try {
        c.resets.push_back(parse_reset_spec(s));
      } catch (const Error&) {
        throw ConfigError("reset: unknown spec '" + s + "'");
      }
    }
  }
  if (const Json* s = r.raw("scale_sweep")) {
    JsonReader sr(*s, "scale_sweep");
    if (const Json* m = sr.raw("models")) c.scale_models = models_from_json(*m, "scale_sweep.models");
    sr.finish();
  }
  r.finish();
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  std::string text;
  try {
    text = read_text(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return from_json(parse_json(text, path.string()), path.parent_path());
}

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.suite = presets::desk_suite();
  c.models = {{"abmil", presets::desk_abmil(2)}, {"transformer", presets::desk_transformer(2)}};
  c.train = presets::desk_train(0);
  c.scale_models = {{"abmil-s", ModelConfig::abmil(64, 32, 16, {}, 2)},
                    {"abmil-m", presets::desk_abmil(2)},
                    {"abmil-l", ModelConfig::abmil(64, 128, 64, {256, 128}, 2)}};
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Zoo

std::string zoo_entry_name(const std::string& model, const std::string& task_id, std::uint64_t seed) {
  return model + "-" + task_id + "-s" + std::to_string(seed);
}

std::vector<ZooEntry> Zoo::entries() const {
  if (!fs::exists(path_)) return {};
  const Json j = read_json_file(path_);
  if (!j.is_object() || j.value("zoo_version", 0) != kZooVersion)
    throw DataError(path_.string() + ": not a version " + std::to_string(kZooVersion) + " zoo manifest");
  std::vector<ZooEntry> out;
  try {
    for (const auto& e : j.at("entries"))
      out.push_back({e.at("name").get<std::string>(), e.at("arch").get<std::string>(),
                     e.at("cfg_digest").get<std::string>(), e.at("pretrain_task_id").get<std::string>(),
                     fs::path(e.at("checkpoint").get<std::string>()), e.value("eval", Json::object())});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path_.string() + ": malformed zoo entry (" + e.what() + ")");
  }
  return out;
}

std::optional<ZooEntry> Zoo::find(const std::string& name) const {
  for (auto& e : entries())
    if (e.name == name) return e;
  return std::nullopt;
}

ZooEntry Zoo::publish(const std::string& name, const Checkpoint& ckpt, const Json& eval) {
  check_name("zoo entry", name);
  FileLock lock(path_.string() + ".lock");
  const fs::path rel = fs::path("checkpoints") / (name + ".milc");
  save_checkpoint(ckpt, path_.parent_path() / rel);
  ZooEntry entry{name, to_string(ckpt.cfg.arch), ckpt.cfg.digest(), ckpt.task.task_id, rel, eval};

  auto all = entries();
  auto it = std::find_if(all.begin(), all.end(), [&](const ZooEntry& e) { return e.name == name; });
  if (it != all.end())
    *it = entry;
  else
    all.push_back(entry);
  std::sort(all.begin(), all.end(), [](const ZooEntry& a, const ZooEntry& b) { return a.name < b.name; });

  Json j;
  j["zoo_version"] = kZooVersion;
  j["entries"] = Json::array();
  for (const auto& e : all)
    j["entries"].push_back({{"name", e.name},
                            {"arch", e.arch},
                            {"cfg_digest", e.cfg_digest},
                            {"pretrain_task_id", e.pretrain_task_id},
                            {"checkpoint", e.checkpoint.generic_string()},
                            {"eval", e.eval}});
  write_text_atomic(path_, j.dump(2) + "\n");
  return entry;
}

Checkpoint Zoo::load(const std::string& name) const {
  const auto e = find(name);
  if (!e) throw ConfigError("zoo " + path_.string() + " has no entry '" + name + "' (run pretrain first)");
  Checkpoint ck = load_checkpoint(path_.parent_path() / e->checkpoint);
  if (ck.cfg.digest() != e->cfg_digest)
    throw DataError("zoo entry '" + name + "': checkpoint digest " + ck.cfg.digest() + " does not match manifest " +
                    e->cfg_digest);
  return ck;
}

// ---------------------------------------------------------------------------
// Experiment

fs::path RunKey::relative_path() const {
  fs::path p = fs::path(command) / model / target / init;
  if (k) p /= "k" + std::to_string(*k);
  return p / ("seed" + std::to_string(seed) + ".json");
}

Experiment::Experiment(ExperimentConfig cfg, std::ostream* echo)
    : cfg_(std::move(cfg)), digest_(cfg_.digest()), echo_(echo) {
  cfg_.validate();
}

std::vector<NamedModel> Experiment::select(const std::vector<NamedModel>& all,
                                           const std::vector<std::string>& only) const {
  if (only.empty()) return all;
  std::vector<NamedModel> out;
  for (const auto& name : only) {
    auto it = std::find_if(all.begin(), all.end(), [&](const NamedModel& m) { return m.name == name; });
    if (it == all.end()) throw ConfigError("no model named '" + name + "' in the config");
    out.push_back(*it);
  }
  return out;
}

void Experiment::open_log(const std::string& command) {
  const fs::path p = cfg_.output_dir / "logs" / (command + ".log");
  fs::create_directories(p.parent_path());
  log_ = std::ofstream(p, std::ios::trunc);
  if (!log_) throw DataError("cannot write " + p.string());
  log("command " + command + " config " + digest_);
}

void Experiment::log(const std::string& line) {
  if (log_.is_open()) log_ << line << '\n' << std::flush;
  if (echo_) *echo_ << line << '\n' << std::flush;
}

Experiment::TaskData Experiment::data(std::uint64_t seed) {
  TaskData out;
  if (cfg_.suite) {
    const Suite suite = make_suite(*cfg_.suite, seed);
    std::vector<SynthTaskConfig> tasks{suite.pretrain};
    tasks.insert(tasks.end(), suite.targets.begin(), suite.targets.end());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const fs::path dir = cfg_.output_dir / "data" / ("seed" + std::to_string(seed)) / tasks[i].task_id;
      const Json synth = to_json(tasks[i]);
      std::optional<DatasetManifest> m;
      if (fs::exists(dir / "task.json") && fs::exists(dir / "manifest.csv")) {
        const Json meta = read_json_file(dir / "task.json");
        if (meta.contains("synth") && meta.at("synth") == synth)
          m = load_manifest(dir / "manifest.csv", task_spec_from_json(meta.at("task")));
      }
      if (!m) {
        m = synth_generate(tasks[i], dir);
        write_text_atomic(dir / "task.json", Json{{"task", to_json(m->task)}, {"synth", synth}}.dump(2) + "\n");
      }
      auto d = Dataset::from_manifest(std::move(*m));
      if (i == 0)
        out.pretrain = std::move(d);
      else
        out.targets.push_back(std::move(d));
    }
  } else {
    out.pretrain = Dataset::from_manifest(load_manifest(cfg_.pretrain->manifest, cfg_.pretrain->task));
    for (const auto& t : cfg_.targets) out.targets.push_back(Dataset::from_manifest(load_manifest(t.manifest, t.task)));
  }
  check_name("task id", out.pretrain.manifest.task.task_id);
  std::set<std::string> ids{out.pretrain.manifest.task.task_id};
  for (const auto& t : out.targets) {
    check_name("task id", t.manifest.task.task_id);
    if (!ids.insert(t.manifest.task.task_id).second)
      throw ConfigError("duplicate task id '" + t.manifest.task.task_id + "'");
  }
  return out;
}

fs::path Experiment::result_path(const RunKey& key) const {
  return cfg_.output_dir / "results" / key.relative_path();
}

bool Experiment::done(const RunKey& key) const {
  const fs::path p = result_path(key);
  if (!fs::exists(p)) return false;
  const Json j = read_json_file(p);
  const std::string d = j.value("config_digest", "");
  if (d != digest_)
    throw ConfigError("resume conflict: " + p.string() + " was written under config " + d + ", current config is " +
                      digest_ + " (use a fresh --out)");
  return true;
}

void Experiment::write_result(const RunKey& key, Json body, const EvalResult& eval,
                              const std::vector<EpochRecord>* history) {
  const fs::path p = result_path(key);
  const std::string stem = p.stem().string();
  std::ostringstream preds;
  preds << "bag_id,label,pred,score\n";
  for (const auto& r : eval.predictions) preds << r.bag_id << ',' << r.label << ',' << r.pred << ',' << fmt_g(r.score) << '\n';
  write_text_atomic(p.parent_path() / (stem + ".predictions.csv"), preds.str());
  if (history) write_text_atomic(p.parent_path() / (stem + ".history.jsonl"), to_jsonl(*history));

  Json j;
  j["command"] = key.command;
  j["model"] = key.model;
  j["target_task"] = key.target;
  j["init"] = key.init;
  j["k"] = key.k ? Json(*key.k) : Json(nullptr);
  j["seed"] = key.seed;
  j["config_digest"] = digest_;
  for (auto& [k, v] : body.items()) j[k] = v;
  j["eval"] = Json::parse(to_json(eval));
  write_text_atomic(p, j.dump(2) + "\n");
  log(key.relative_path().generic_string() + " " + eval.metric + " " + fmt(eval.value) + " +- " + fmt(eval.std));
}

Checkpoint Experiment::pretrained(const NamedModel& m, const Dataset& pretrain_data, std::uint64_t seed) const {
  const auto& task = pretrain_data.manifest.task;
  const std::string name = zoo_entry_name(m.name, task.task_id, seed);
  Checkpoint ck = zoo().load(name);
  if (ck.cfg.digest() != retarget(m.cfg, task.n_classes).digest())
    throw ConfigError("zoo entry '" + name + "' was built from a different '" + m.name + "' config");
  return ck;
}

void Experiment::pretrain_models(const std::string& command, const std::vector<NamedModel>& models) {
  for (const auto& m : models) {
    for (auto seed : cfg_.seeds) {
      const Dataset pre = data(seed).pretrain;
      const auto& task = pre.manifest.task;
      const RunKey key{command, m.name, task.task_id, "scratch", std::nullopt, seed};
      const std::string name = zoo_entry_name(m.name, task.task_id, seed);
      if (done(key) && zoo().find(name)) {
        log(key.relative_path().generic_string() + " skip (done)");
        continue;
      }
      const ModelConfig cfg = retarget(m.cfg, task.n_classes);
      TrainConfig tc = cfg_.pretrain_train.value_or(cfg_.train);
      tc.seed = seed;
      const auto r = train(cfg, build_model(cfg, init_seed_for(seed)), pre, tc);
      const auto eval = evaluate_split(r.params, cfg, pre, eval_split_of(pre.manifest), cfg_.n_bootstrap,
                                       eval_seed_for(seed));
      Checkpoint ck{cfg, r.params, task, tc, {}, kCheckpointVersion};
      const Json eval_json = Json::parse(to_json(eval));
      zoo().publish(name, ck, eval_json);
      Json body;
      body["arch"] = to_string(cfg.arch);
      body["source_task"] = task.task_id;
      body["param_count"] = param_count(cfg);
      body["zoo_entry"] = name;
      body["best_epoch"] = r.best_epoch;
      body["best_val"] = std::isfinite(r.best_val) ? Json(r.best_val) : Json(nullptr);
      write_result(key, body, eval, &r.history);
    }
  }
}

void Experiment::finetune_cell(const RunKey& key, const TransferPlan& plan, const std::string& source_task,
                               std::uint64_t seed, Json extra) {
  if (done(key)) {
    log(key.relative_path().generic_string() + " skip (done)");
    return;
  }
  TrainConfig tc = cfg_.train;
  tc.seed = seed;
  const auto o = finetune(plan, tc, cfg_.n_bootstrap, eval_seed_for(seed));
  Json body;
  body["arch"] = to_string(o.cfg.arch);
  body["source_task"] = source_task;
  body["param_count"] = param_count(o.cfg);
  body["best_epoch"] = o.train.best_epoch;
  body["best_val"] = std::isfinite(o.train.best_val) ? Json(o.train.best_val) : Json(nullptr);
  if (key.command == "svcca") {
    const auto rep = layer_stability_report(plan.initial_params(), o.train.params, o.cfg, plan.target,
                                            cfg_.svcca_split, cfg_.svcca_layers, cfg_.svcca_max_instances,
                                            derive_seed(seed, "svcca"), cfg_.svcca_variance_keep);
    body["svcca"] = Json::parse(to_json(rep));
    for (const auto& l : rep.layers)
      log(key.relative_path().generic_string() + " svcca " + l.name + " " + fmt(l.mean, 2) + " +- " + fmt(l.std, 2));
  }
  for (auto& [k, v] : extra.items()) body[k] = v;
  write_result(key, body, o.test, &o.train.history);
}

void Experiment::generate() {
  open_log("generate");
  for (auto seed : cfg_.seeds) {
    const auto d = data(seed);
    auto describe = [&](const Dataset& ds) {
      const auto& m = ds.manifest;
      log("seed" + std::to_string(seed) + " " + m.task.task_id + " classes " + std::to_string(m.task.n_classes) +
          " train " + std::to_string(m.count(Split::kTrain)) + " val " + std::to_string(m.count(Split::kVal)) +
          " test " + std::to_string(m.count(Split::kTest)));
    };
    describe(d.pretrain);
    for (const auto& t : d.targets) describe(t);
  }
}

void Experiment::pretrain(const std::vector<std::string>& only) {
  open_log("pretrain");
  pretrain_models("pretrain", select(cfg_.models, only));
}

void Experiment::transfer(const std::vector<std::string>& only) {
  open_log("transfer");
  for (const auto& m : select(cfg_.models, only)) {
    for (auto seed : cfg_.seeds) {
      const auto d = data(seed);
      const Checkpoint ck = pretrained(m, d.pretrain, seed);
      for (const auto& t : d.targets) {
        const auto& id = t.manifest.task.task_id;
        finetune_cell({"transfer", m.name, id, "pretrained", std::nullopt, seed},
                      TransferPlan{ck, m.cfg, t, std::nullopt, init_seed_for(seed)}, ck.task.task_id, seed);
        finetune_cell({"transfer", m.name, id, "random", std::nullopt, seed},
                      TransferPlan{std::nullopt, m.cfg, t, std::nullopt, init_seed_for(seed)}, "random", seed);
      }
    }
  }
}

void Experiment::knn(const std::vector<std::string>& only) {
  open_log("knn");
  for (const auto& m : select(cfg_.models, only)) {
    for (auto seed : cfg_.seeds) {
      const auto d = data(seed);
      const Checkpoint ck = pretrained(m, d.pretrain, seed);
      for (const auto& t : d.targets) {
        const auto& task = t.manifest.task;
        const ModelConfig rcfg = retarget(m.cfg, task.n_classes);
        const ParamsF rnd = build_model(rcfg, init_seed_for(seed));
        for (const bool pre : {true, false}) {
          const RunKey key{"knn", m.name, task.task_id, pre ? "pretrained" : "random", std::nullopt, seed};
          if (done(key)) {
            log(key.relative_path().generic_string() + " skip (done)");
            continue;
          }
          const ParamsF& p = pre ? ck.params : rnd;
          const ModelConfig& c = pre ? ck.cfg : rcfg;
          const auto eval = knn_evaluate(embed_bags(p, c, t, Split::kTrain), embed_bags(p, c, t, Split::kTest),
                                         cfg_.knn_k, task, cfg_.knn_distance, cfg_.n_bootstrap, eval_seed_for(seed));
          Json body;
          body["arch"] = to_string(c.arch);
          body["source_task"] = pre ? ck.task.task_id : "random";
          body["neighbors"] = cfg_.knn_k;
          body["distance"] = to_string(cfg_.knn_distance);
          write_result(key, body, eval, nullptr);
        }
      }
    }
  }
}

void Experiment::fewshot(const std::vector<std::string>& only) {
  open_log("fewshot");
  for (const auto& m : select(cfg_.models, only)) {
    for (auto seed : cfg_.seeds) {
      const auto d = data(seed);
      const Checkpoint ck = pretrained(m, d.pretrain, seed);
      for (const auto& t : d.targets) {
        const auto& id = t.manifest.task.task_id;
        for (int k : cfg_.k_shots) {
          const Dataset few{fewshot_sample(t.manifest, k, fewshot_seed_for(seed)), t.store};
          finetune_cell({"fewshot", m.name, id, "pretrained", k, seed},
                        TransferPlan{ck, m.cfg, few, std::nullopt, init_seed_for(seed)}, ck.task.task_id, seed);
          finetune_cell({"fewshot", m.name, id, "random", k, seed},
                        TransferPlan{std::nullopt, m.cfg, few, std::nullopt, init_seed_for(seed)}, "random", seed);
        }
      }
    }
  }
}

void Experiment::svcca(const std::vector<std::string>& only) {
  open_log("svcca");
  for (const auto& m : select(cfg_.models, only)) {
    for (auto seed : cfg_.seeds) {
      const auto d = data(seed);
      const Checkpoint ck = pretrained(m, d.pretrain, seed);
      for (const auto& t : d.targets) {
        const auto& id = t.manifest.task.task_id;
        finetune_cell({"svcca", m.name, id, "pretrained", std::nullopt, seed},
                      TransferPlan{ck, m.cfg, t, std::nullopt, init_seed_for(seed)}, ck.task.task_id, seed);
        finetune_cell({"svcca", m.name, id, "random", std::nullopt, seed},
                      TransferPlan{std::nullopt, m.cfg, t, std::nullopt, init_seed_for(seed)}, "random", seed);
      }
    }
  }
}

void Experiment::reset(const std::vector<std::string>& only) {
  open_log("reset");
  for (const auto& m : select(cfg_.models, only)) {
    for (auto spec : cfg_.resets) {
      try {
        reset_layer_names(m.cfg, spec);
      } catch (const ConfigError& e) {
        log(m.name + " reset_" + to_string(spec) + " not applicable: " + e.what());
        continue;
      }
      for (auto seed : cfg_.seeds) {
        const auto d = data(seed);
        const Checkpoint ck = pretrained(m, d.pretrain, seed);
        for (const auto& t : d.targets)
          finetune_cell({"reset", m.name, t.manifest.task.task_id, "reset_" + to_string(spec), std::nullopt, seed},
                        TransferPlan{ck, m.cfg, t, spec, init_seed_for(seed)}, ck.task.task_id, seed);
      }
    }
  }
}

void Experiment::scale_sweep(const std::vector<std::string>& only) {
  if (cfg_.scale_models.empty()) throw ConfigError("config: scale_sweep.models is empty");
  open_log("scale-sweep");
  const auto models = select(cfg_.scale_models, only);
  pretrain_models("scale-sweep", models);
  for (const auto& m : models) {
    for (auto seed : cfg_.seeds) {
      const auto d = data(seed);
      const Checkpoint ck = pretrained(m, d.pretrain, seed);
      for (const auto& t : d.targets) {
        const auto& id = t.manifest.task.task_id;
        finetune_cell({"scale-sweep", m.name, id, "pretrained", std::nullopt, seed},
                      TransferPlan{ck, m.cfg, t, std::nullopt, init_seed_for(seed)}, ck.task.task_id, seed);
        finetune_cell({"scale-sweep", m.name, id, "random", std::nullopt, seed},
                      TransferPlan{std::nullopt, m.cfg, t, std::nullopt, init_seed_for(seed)}, "random", seed);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Report

namespace {

struct ResultRow {
  std::string command, model, target, init, source, metric;
  std::optional<int> k;
  std::uint64_t seed = 0;
  double value = 0.0;
  long long param_count = -1;
  Json svcca;
};

using GroupKey = std::tuple<std::string, std::string, std::string, std::string, int>;  // k = -1 when absent

GroupKey group_of(const ResultRow& r) { return {r.command, r.model, r.target, r.init, r.k.value_or(-1)}; }

Json k_json(int k) { return k < 0 ? Json(nullptr) : Json(k); }

std::string k_csv(int k) { return k < 0 ? "" : std::to_string(k); }

}  // namespace

Json Experiment::report() {
  open_log("report");
  const fs::path root = cfg_.output_dir / "results";
  std::vector<ResultRow> rows;
  if (fs::exists(root)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const Json j = read_json_file(f);
      try {
        ResultRow r;
        r.command = j.at("command");
        r.model = j.at("model");
        r.target = j.at("target_task");
        r.init = j.at("init");
        r.source = j.value("source_task", "");
        if (!j.at("k").is_null()) r.k = j.at("k").get<int>();
        r.seed = j.at("seed");
        r.metric = j.at("eval").at("metric");
        r.value = j.at("eval").at("value");
        r.param_count = j.value("param_count", -1LL);
        if (j.contains("svcca")) r.svcca = j.at("svcca");
        rows.push_back(std::move(r));
      } catch (const nlohmann::json::exception& e) {
        throw DataError(f.string() + ": not a result file (" + e.what() + ")");
      }
    }
  }
  if (rows.empty()) throw DataError("report: no results under " + root.string());

  std::map<GroupKey, std::map<std::uint64_t, const ResultRow*>> groups;
  for (const auto& r : rows) groups[group_of(r)][r.seed] = &r;

  Json out;
  out["n_results"] = rows.size();
  out["groups"] = Json::array();
  for (const auto& [key, by_seed] : groups) {
    const auto& [cmd, model, target, init, k] = key;
    std::vector<double> v;
    Json seeds = Json::array();
    for (const auto& [s, r] : by_seed) {
      v.push_back(r->value);
      seeds.push_back(s);
    }
    out["groups"].push_back({{"command", cmd},
                             {"model", model},
                             {"target", target},
                             {"init", init},
                             {"k", k_json(k)},
                             {"metric", by_seed.begin()->second->metric},
                             {"param_count", by_seed.begin()->second->param_count},
                             {"n", v.size()},
                             {"mean", mean_of(v)},
                             {"std", std_of(v)},
                             {"seeds", seeds},
                             {"values", v}});
  }

  // Paired by seed against the random-init group of the same cell.
  struct Pooled {
    std::vector<double> deltas;
    std::set<std::string> targets;
  };
  std::map<std::tuple<std::string, std::string, std::string, int>, Pooled> pooled;
  std::map<GroupKey, Json> delta_of;
  out["deltas"] = Json::array();
  std::ostringstream scatter;
  scatter << "command,model,target,k,init,seed,random,value\n";
  for (const auto& [key, by_seed] : groups) {
    const auto& [cmd, model, target, init, k] = key;
    if (init == "random" || init == "scratch") continue;
    const auto rnd = groups.find({cmd, model, target, "random", k});
    if (rnd == groups.end()) continue;
    std::vector<double> d;
    Json per_seed = Json::array();
    for (const auto& [s, r] : by_seed) {
      const auto it = rnd->second.find(s);
      if (it == rnd->second.end()) continue;
      d.push_back(r->value - it->second->value);
      per_seed.push_back({{"seed", s}, {"delta", d.back()}});
      scatter << cmd << ',' << model << ',' << target << ',' << k_csv(k) << ',' << init << ',' << s << ','
              << fmt_g(it->second->value) << ',' << fmt_g(r->value) << '\n';
    }
    if (d.empty()) continue;
    auto& p = pooled[{cmd, model, init, k}];
    p.deltas.insert(p.deltas.end(), d.begin(), d.end());
    p.targets.insert(target);
    Json dj = {{"command", cmd},     {"model", model},          {"target", target},
               {"init", init},       {"k", k_json(k)},          {"n_pairs", d.size()},
               {"mean", mean_of(d)}, {"std", std_of(d)},        {"p_value", paired_sign_flip_pvalue(d)},
               {"per_seed", per_seed}};
    delta_of[key] = dj;
    out["deltas"].push_back(dj);
  }

  // Across-target averages of the per-target means.
  std::map<std::tuple<std::string, std::string, std::string, int>, std::vector<double>> across;
  for (const auto& [key, by_seed] : groups) {
    const auto& [cmd, model, target, init, k] = key;
    std::vector<double> v;
    for (const auto& [s, r] : by_seed) v.push_back(r->value);
    across[{cmd, model, init, k}].push_back(mean_of(v));
  }
  out["averages"] = Json::array();
  for (const auto& [key, means] : across) {
    const auto& [cmd, model, init, k] = key;
    Json a = {{"command", cmd}, {"model", model}, {"init", init}, {"k", k_json(k)},
              {"n_targets", means.size()}, {"mean", mean_of(means)}};
    if (const auto p = pooled.find(key); p != pooled.end()) {
      a["delta_mean"] = mean_of(p->second.deltas);
      a["delta_n_pairs"] = p->second.deltas.size();
      a["delta_p_value"] = paired_sign_flip_pvalue(p->second.deltas);
    }
    out["averages"].push_back(a);
  }

  // SVCCA per layer.
  std::map<std::tuple<std::string, std::string, std::string, std::string>, std::vector<double>> layers;
  for (const auto& r : rows)
    if (!r.svcca.is_null())
      for (const auto& l : r.svcca.at("layers")) layers[{r.model, r.target, r.init, l.at("name")}].push_back(l.at("mean"));
  out["svcca"] = Json::array();
  std::ostringstream svcca_csv;
  svcca_csv << "model,target,init,layer,n,mean,std\n";
  for (const auto& [key, v] : layers) {
    const auto& [model, target, init, layer] = key;
    out["svcca"].push_back({{"model", model}, {"target", target}, {"init", init}, {"layer", layer},
                            {"n", v.size()}, {"mean", mean_of(v)}, {"std", std_of(v)}});
    svcca_csv << model << ',' << target << ',' << init << ',' << layer << ',' << v.size() << ',' << fmt_g(mean_of(v))
              << ',' << fmt_g(std_of(v)) << '\n';
  }

  // KNN contingency: rows are sources, columns targets.
  std::set<std::string> knn_targets;
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::vector<double>>> knn_cells;
  for (const auto& r : rows)
    if (r.command == "knn") {
      knn_targets.insert(r.target);
      knn_cells[{r.model, r.source}][r.target].push_back(r.value);
    }

  const fs::path dir = cfg_.output_dir / "report";
  std::map<std::string, std::ostringstream> tables;
  for (const auto& g : out["groups"]) {
    auto& t = tables[g.at("command").get<std::string>()];
    if (t.tellp() == 0) t << "model,target,init,k,n,mean,std,delta_mean,delta_p\n";
    const GroupKey key{g.at("command"), g.at("model"), g.at("target"), g.at("init"),
                       g.at("k").is_null() ? -1 : g.at("k").get<int>()};
    t << g.at("model").get<std::string>() << ',' << g.at("target").get<std::string>() << ','
      << g.at("init").get<std::string>() << ',' << k_csv(std::get<4>(key)) << ',' << g.at("n").get<int>() << ','
      << fmt_g(g.at("mean")) << ',' << fmt_g(g.at("std"));
    if (const auto it = delta_of.find(key); it != delta_of.end())
      t << ',' << fmt_g(it->second.at("mean")) << ',' << fmt_g(it->second.at("p_value"));
    else
      t << ",,";
    t << '\n';
  }
  for (const auto& a : out["averages"]) {
    auto& t = tables[a.at("command").get<std::string>()];
    const int k = a.at("k").is_null() ? -1 : a.at("k").get<int>();
    t << a.at("model").get<std::string>() << ",average," << a.at("init").get<std::string>() << ',' << k_csv(k) << ','
      << a.at("n_targets").get<int>() << ',' << fmt_g(a.at("mean")) << ",,";
    if (a.contains("delta_mean"))
      t << fmt_g(a.at("delta_mean")) << ',' << fmt_g(a.at("delta_p_value"));
    else
      t << ',';
    t << '\n';
  }
  for (const auto& [cmd, t] : tables) write_text_atomic(dir / "tables" / (cmd + ".csv"), t.str());
  write_text_atomic(dir / "scatter.csv", scatter.str());
  if (!layers.empty()) write_text_atomic(dir / "svcca.csv", svcca_csv.str());
  if (!knn_cells.empty()) {
    std::ostringstream c;
    c << "model,source";
    for (const auto& t : knn_targets) c << ',' << t;
    c << '\n';
    for (const auto& [row, cells] : knn_cells) {
      c << row.first << ',' << row.second;
      for (const auto& t : knn_targets) {
        c << ',';
        if (const auto it = cells.find(t); it != cells.end()) c << fmt_g(mean_of(it->second));
      }
      c << '\n';
    }
    write_text_atomic(dir / "knn_contingency.csv", c.str());
  }
  write_text_atomic(dir / "report.json", out.dump(2) + "\n");
  log("report: " + std::to_string(rows.size()) + " results, " + std::to_string(groups.size()) + " groups");
  for (const auto& a : out["averages"])
    if (a.contains("delta_mean"))
      log(a.at("command").get<std::string>() + " " + a.at("model").get<std::string>() + " " +
          a.at("init").get<std::string>() + (a.at("k").is_null() ? "" : " k" + std::to_string(a.at("k").get<int>())) +
          " delta " + fmt(a.at("delta_mean")) + " p " + fmt(a.at("delta_p_value")));
  return out;
}

}  // namespace milkit
