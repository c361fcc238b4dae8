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

#include "milkit/bagdata.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace milkit {

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) out[i] = digits[v & 0xf];
  return out;
}

std::string to_string(MetricKind m) {
  switch (m) {
    case MetricKind::kAuroc: return "auroc";
    case MetricKind::kBalancedAccuracy: return "balanced_accuracy";
    case MetricKind::kQuadraticKappa: return "quadratic_weighted_kappa";
  }
  return "?";
}

MetricKind parse_metric(const std::string& s) {
  if (s == "auroc") return MetricKind::kAuroc;
  if (s == "balanced_accuracy") return MetricKind::kBalancedAccuracy;
  if (s == "quadratic_weighted_kappa") return MetricKind::kQuadraticKappa;
  throw ConfigError("unknown metric '" + s + "'");
}

void TaskSpec::validate() const {
  if (n_classes < 2) throw ConfigError("task " + task_id + ": n_classes must be >= 2");
  if (static_cast<int>(class_names.size()) != n_classes)
    throw ConfigError("task " + task_id + ": class_names has " +
                      std::to_string(class_names.size()) + " entries, expected " +
                      std::to_string(n_classes));
  if (metric == MetricKind::kAuroc && n_classes != 2)
    throw ConfigError("task " + task_id + ": auroc requires exactly 2 classes");
}

TaskSpec TaskSpec::make(std::string task_id, int n_classes) {
  TaskSpec t;
  t.task_id = std::move(task_id);
  t.n_classes = n_classes;
  for (int c = 0; c < n_classes; ++c) t.class_names.push_back("class_" + std::to_string(c));
  t.metric = n_classes == 2 ? MetricKind::kAuroc : MetricKind::kBalancedAccuracy;
  return t;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw DataError("unknown split tag '" + s + "'");
}

std::vector<const ManifestEntry*> DatasetManifest::split(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(&e);
  return out;
}

std::size_t DatasetManifest::count(Split s) const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [s](const ManifestEntry& e) { return e.split == s; }));
}

void DatasetManifest::validate() const {
  task.validate();
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.bag_id).second) throw DataError("duplicate bag_id '" + e.bag_id + "'");
    if (e.label < 0 || e.label >= task.n_classes)
      throw DataError("bag '" + e.bag_id + "': label " + std::to_string(e.label) +
                      " outside [0, " + std::to_string(task.n_classes) + ")");
  }
  if (count(Split::kTrain) == 0) throw DataError("manifest has no train entries");
}

// ---------------------------------------------------------------------------
// Feature files

namespace {

constexpr char kMagic[4] = {'M', 'I', 'L', 'F'};
constexpr std::uint8_t kVersion = 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void put_f32(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

float get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<float>(bits);
}

}  // namespace

std::string encode_features(const MatF& features) {
  if (features.rows() < 1 || features.cols() < 1)
    throw DataError("feature matrix must have at least one row and column");
  if (!features.allFinite()) throw DataError("feature matrix contains non-finite values");
  std::string out;
  out.reserve(kFeatureHeaderBytes + 4 * features.size());
  out.append(kMagic, 4);
  out.push_back(static_cast<char>(kVersion));
  out.append(8, '\0');
  put_u64(out, static_cast<std::uint64_t>(features.rows()));
  put_u64(out, static_cast<std::uint64_t>(features.cols()));
  for (Eigen::Index r = 0; r < features.rows(); ++r)
    for (Eigen::Index c = 0; c < features.cols(); ++c) put_f32(out, features(r, c));
  return out;
}

MatF decode_features(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw BadMagicError("feature file: bad magic (expected \"MILF\")");
  if (bytes.size() < kFeatureHeaderBytes)
    throw TruncatedFileError("feature file: truncated header");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (p[4] != kVersion)
    throw DataError("feature file: unsupported version " + std::to_string(p[4]));
  const std::uint64_t n = get_u64(p + 13);
  const std::uint64_t d = get_u64(p + 21);
  if (n == 0 || d == 0) throw DataError("feature file: zero dimension");
  constexpr std::uint64_t kMaxIndex = std::numeric_limits<std::int32_t>::max();
  if (n > kMaxIndex || d > kMaxIndex || n > std::numeric_limits<std::uint64_t>::max() / 4 / d)
    throw DimensionOverflowError("feature file: dimensions " + std::to_string(n) + "x" +
                                 std::to_string(d) + " overflow");
  const std::uint64_t payload = n * d * 4;
  if (bytes.size() - kFeatureHeaderBytes < payload)
    throw TruncatedFileError("feature file: truncated payload");
  if (bytes.size() - kFeatureHeaderBytes > payload)
    throw DataError("feature file: trailing bytes after payload");
  MatF m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const unsigned char* q = p + kFeatureHeaderBytes;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c, q += 4) m(r, c) = get_f32(q);
  if (!m.allFinite()) throw DataError("feature file: non-finite values");
  return m;
}

void write_feature_file(const MatF& features, const std::filesystem::path& path) {
  const std::string bytes = encode_features(features);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("write failed for '" + path.string() + "'");
}

MatF read_feature_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing feature file '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  try {
    return decode_features(ss.str());
  } catch (const BadMagicError& e) {
    throw BadMagicError(path.string() + ": " + e.what());
  } catch (const TruncatedFileError& e) {
    throw TruncatedFileError(path.string() + ": " + e.what());
  } catch (const DimensionOverflowError& e) {
    throw DimensionOverflowError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Manifest CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && s[i] == ' ') ++i;
  return s.substr(i);
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& csv, const std::optional<TaskSpec>& task) {
  std::ifstream is(csv);
  if (!is) throw DataError("cannot open manifest '" + csv.string() + "'");
  std::string line;
  if (!std::getline(is, line)) throw DataError("manifest '" + csv.string() + "' is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (trim(line) != "bag_id,path,label,split")
    throw DataError("manifest header must be 'bag_id,path,label,split'");

  const auto base = csv.has_parent_path() ? csv.parent_path() : std::filesystem::path(".");
  DatasetManifest m;
  int lineno = 1;
  int max_label = -1;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 4)
      throw DataError("manifest line " + std::to_string(lineno) + ": expected 4 fields, got " +
                      std::to_string(cells.size()));
    ManifestEntry e;
    e.bag_id = trim(cells[0]);
    if (e.bag_id.empty()) throw DataError("manifest line " + std::to_string(lineno) + ": empty bag_id");
    std::filesystem::path p = trim(cells[1]);
    e.path = p.is_absolute() ? p : base / p;
    try {
      std::size_t pos = 0;
      e.label = std::stoi(trim(cells[2]), &pos);
      if (pos != trim(cells[2]).size()) throw std::invalid_argument("junk");
    } catch (const std::exception&) {
      throw DataError("manifest line " + std::to_string(lineno) + ": bad label '" + cells[2] + "'");
    }
    if (e.label < 0) throw DataError("manifest line " + std::to_string(lineno) + ": negative label");
    e.split = parse_split(trim(cells[3]));
    max_label = std::max(max_label, e.label);
    m.entries.push_back(std::move(e));
  }

  if (task) {
    m.task = *task;
  } else {
    std::set<int> labels;
    for (const auto& e : m.entries) labels.insert(e.label);
    for (int c = 0; c <= max_label; ++c)
      if (!labels.count(c))
        throw DataError("manifest labels are not contiguous from 0 (missing " + std::to_string(c) + ")");
    m.task = TaskSpec::make(csv.stem().string(), std::max(2, max_label + 1));
  }
  m.validate();
  return m;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& csv) {
  if (csv.has_parent_path()) std::filesystem::create_directories(csv.parent_path());
  std::ofstream os(csv, std::ios::trunc);
  if (!os) throw DataError("cannot write manifest '" + csv.string() + "'");
  const auto base = csv.has_parent_path() ? csv.parent_path() : std::filesystem::path(".");
  os << "bag_id,path,label,split\n";
  for (const auto& e : m.entries) {
    if (e.bag_id.find(',') != std::string::npos)
      throw DataError("bag_id '" + e.bag_id + "' contains a comma");
    auto rel = e.path.lexically_relative(base);
    const auto& p = (rel.empty() || *rel.begin() == "..") ? e.path : rel;
    os << e.bag_id << ',' << p.generic_string() << ',' << e.label << ',' << to_string(e.split) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Sampling

DatasetManifest fewshot_sample(const DatasetManifest& m, int k, std::uint64_t seed) {
  if (k < 1) throw ConfigError("few-shot K must be >= 1");
  std::vector<std::vector<std::size_t>> by_class(m.task.n_classes);
  for (std::size_t i = 0; i < m.entries.size(); ++i)
    if (m.entries[i].split == Split::kTrain) by_class[m.entries[i].label].push_back(i);

  std::vector<bool> keep(m.entries.size(), false);
  for (int c = 0; c < m.task.n_classes; ++c) {
    auto& members = by_class[c];
    if (static_cast<int>(members.size()) < k) {
      const auto& name = c < static_cast<int>(m.task.class_names.size()) ? m.task.class_names[c]
                                                                          : std::to_string(c);
      throw DataError("few-shot: class '" + name + "' has " + std::to_string(members.size()) +
                      " train bags, fewer than K=" + std::to_string(k));
    }
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    // Partial Fisher-Yates: the first k slots are a uniform sample.
    for (int i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, members.size() - 1);
      std::swap(members[i], members[pick(rng)]);
      keep[members[i]] = true;
    }
  }

  DatasetManifest out;
  out.task = m.task;
  for (std::size_t i = 0; i < m.entries.size(); ++i)
    if (m.entries[i].split != Split::kTrain || keep[i]) out.entries.push_back(m.entries[i]);
  return out;
}

std::vector<std::size_t> weighted_epoch_indices(const DatasetManifest& m, std::size_t epoch_len,
                                                std::uint64_t seed) {
  std::vector<std::size_t> train;
  std::map<int, std::size_t> class_count;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    if (m.entries[i].split != Split::kTrain) continue;
    train.push_back(i);
    ++class_count[m.entries[i].label];
  }
  if (train.empty()) throw DataError("weighted sampling: empty train split");
  std::vector<double> weights;
  weights.reserve(train.size());
  for (auto i : train) weights.push_back(1.0 / static_cast<double>(class_count[m.entries[i].label]));
  std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
  Rng rng(seed);
  std::vector<std::size_t> order(epoch_len);
  for (auto& o : order) o = train[dist(rng)];
  return order;
}

std::vector<std::string> weighted_epoch_order(const DatasetManifest& m, std::size_t epoch_len,
                                              std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(epoch_len);
  for (auto i : weighted_epoch_indices(m, epoch_len, seed)) ids.push_back(m.entries[i].bag_id);
  return ids;
}

// ---------------------------------------------------------------------------
// BagStore

void BagStore::add(const DatasetManifest& m) {
  std::lock_guard lock(mu_);
  for (const auto& e : m.entries) {
    paths_[e.bag_id] = e.path;
    labels_[e.bag_id] = e.label;
  }
}

void BagStore::add(Bag bag) {
  std::lock_guard lock(mu_);
  auto id = bag.id;
  labels_[id] = bag.label;
  cache_[id] = std::make_shared<const Bag>(std::move(bag));
}

bool BagStore::contains(const std::string& bag_id) const {
  std::lock_guard lock(mu_);
  return cache_.count(bag_id) || paths_.count(bag_id);
}

const Bag& BagStore::get(const std::string& bag_id) const {
  std::filesystem::path path;
  int label = 0;
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(bag_id); it != cache_.end()) return *it->second;
    auto pit = paths_.find(bag_id);
    if (pit == paths_.end()) throw DataError("unknown bag '" + bag_id + "'");
    path = pit->second;
    label = labels_.at(bag_id);
  }
  auto bag = std::make_shared<Bag>();
  bag->id = bag_id;
  bag->label = label;
  bag->features = read_feature_file(path);
  std::lock_guard lock(mu_);
  auto [it, inserted] = cache_.emplace(bag_id, std::move(bag));
  return *it->second;
}

Dataset Dataset::from_manifest(DatasetManifest m) {
  Dataset d;
  d.store = std::make_shared<BagStore>(m);
  d.manifest = std::move(m);
  return d;
}

}  // namespace milkit
