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

#pragma once

#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "milkit/bagdata.hpp"
#include "milkit/model_config.hpp"
#include "milkit/synth.hpp"
#include "milkit/trainer.hpp"

namespace milkit {

using Json = nlohmann::ordered_json;

/// Strict object reader: get() claims keys, finish() rejects the rest.
class JsonReader {
 public:
  JsonReader(const Json& j, std::string what) : j_(j), what_(std::move(what)) {
    if (!j.is_object()) throw ConfigError(what_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(what_ + ": bad value for '" + key + "'");
    }
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T v{};
    get(key, v);
    out = v;
  }

  /// Claims a key and returns its raw value, or nullptr when absent.
  const Json* raw(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(what_ + ": unknown key '" + k + "'");
  }

  const std::string& what() const { return what_; }

 private:
  const Json& j_;
  std::string what_;
  std::set<std::string> seen_;
};

// Readers are strict: unknown keys and wrong types raise ConfigError naming
// the offending key. Missing keys keep their defaults.

Json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const Json& j);

Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);

Json to_json(const TaskSpec& t);
TaskSpec task_spec_from_json(const Json& j);

Json to_json(const SynthTaskConfig& c);
SynthTaskConfig synth_config_from_json(const Json& j);

Json to_json(const SuiteConfig& c);
SuiteConfig suite_config_from_json(const Json& j);

/// Parses text, mapping syntax errors to ConfigError.
Json parse_json(const std::string& text, const std::string& what);

}  // namespace milkit
