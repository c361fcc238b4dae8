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

#include "milkit/checkpoint.hpp"

#include <bit>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <sstream>

#include "milkit/json_io.hpp"

namespace milkit {
namespace {

constexpr char kMagic[4] = {'M', 'I', 'L', 'C'};

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const std::string& in, std::size_t at) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

void put_f32(std::string& out, float f) { put_le(out, std::bit_cast<std::uint32_t>(f)); }

}  // namespace

std::string utc_now_iso8601() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  if (const auto bad = ckpt.params.schema_mismatches(ckpt.cfg); !bad.empty())
    throw ConfigError("checkpoint params do not match its config: " + bad.front());

  Json layers = Json::array();
  std::string blob;
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    const MatF& t = ckpt.params.tensor(i);
    Json l;
    l["name"] = ckpt.params.name(i);
    l["shape"] = {t.rows(), t.cols()};
    l["offset"] = blob.size();
    l["length"] = static_cast<std::uint64_t>(t.size()) * 4;
    layers.push_back(l);
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) put_f32(blob, t(r, c));
  }

  Json h;
  h["cfg"] = to_json(ckpt.cfg);
  h["cfg_digest"] = ckpt.cfg.digest();
  h["task"] = to_json(ckpt.task);
  h["train"] = to_json(ckpt.train);
  h["created_at"] = ckpt.created_at;
  h["layers"] = layers;
  const std::string header = h.dump();

  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, ckpt.format_version);
  put_le<std::uint64_t>(out, header.size());
  out += header;
  out += blob;
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw BadMagicError("not a checkpoint (bad magic)");
  if (bytes.size() < 16) throw TruncatedFileError("checkpoint truncated in preamble");
  Checkpoint ck;
  ck.format_version = get_le<std::uint32_t>(bytes, 4);
  if (ck.format_version != kCheckpointVersion)
    throw CheckpointVersionError("checkpoint version " + std::to_string(ck.format_version) + " unsupported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  const std::uint64_t header_len = get_le<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - 16) throw TruncatedFileError("checkpoint truncated in header");
  const std::size_t blob_at = 16 + static_cast<std::size_t>(header_len);

  Json h;
  try {
    h = Json::parse(bytes.substr(16, header_len));
    ck.cfg = model_config_from_json(h.at("cfg"));
    ck.cfg.validate();
    ck.task = task_spec_from_json(h.at("task"));
    ck.train = train_config_from_json(h.at("train"));
    ck.created_at = h.at("created_at").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header malformed: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint header malformed: ") + e.what());
  }
  if (h.contains("cfg_digest") && h["cfg_digest"] != ck.cfg.digest())
    throw DataError("checkpoint cfg_digest does not match its config");

  const auto schema = layer_schema(ck.cfg);
  const Json& layers = h.at("layers");
  if (!layers.is_array()) throw DataError("checkpoint layer table is not an array");
  std::uint64_t expected_offset = 0;
  std::size_t li = 0;
  for (const auto& l : layers) {
    std::string name;
    long rows = 0, cols = 0;
    std::uint64_t offset = 0, length = 0;
    try {
      name = l.at("name").get<std::string>();
      rows = l.at("shape").at(0).get<long>();
      cols = l.at("shape").at(1).get<long>();
      offset = l.at("offset").get<std::uint64_t>();
      length = l.at("length").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("checkpoint layer table malformed: ") + e.what());
    }
    if (li >= schema.size() || schema[li].name != name)
      throw DataError("checkpoint layer '" + name + "' is not expected at position " + std::to_string(li) +
                      " for its config");
    const auto& want = schema[li];
    if (rows != want.rows || cols != want.cols)
      throw DataError("shape mismatch for layer '" + name + "': header " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", config " + std::to_string(want.rows) + "x" + std::to_string(want.cols));
    if (offset != expected_offset || length != static_cast<std::uint64_t>(rows * cols) * 4)
      throw DataError("checkpoint layer '" + name + "' has inconsistent offset/length");
    if (blob_at + offset + length > bytes.size()) throw TruncatedFileError("checkpoint truncated in layer '" + name + "'");
    MatF t(rows, cols);
    std::size_t at = blob_at + offset;
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c, at += 4) t(r, c) = std::bit_cast<float>(get_le<std::uint32_t>(bytes, at));
    ck.params.add(name, std::move(t));
    expected_offset += length;
    ++li;
  }
  if (li != schema.size()) throw DataError("checkpoint missing layer '" + schema[li].name + "'");
  if (blob_at + expected_offset != bytes.size()) throw DataError("checkpoint has trailing bytes");
  return ck;
}

void save_checkpoint(Checkpoint ckpt, const std::filesystem::path& path) {
  if (ckpt.created_at.empty()) ckpt.created_at = utc_now_iso8601();
  const std::string bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write checkpoint " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace milkit
