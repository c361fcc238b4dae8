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

#include <algorithm>
#include <cstring>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "milkit/common.hpp"
#include "milkit/model_config.hpp"

namespace milkit {

/// Ordered collection of named dense tensors. Also used for gradients and
/// optimizer moments, which share the parameter layout.
template <typename Scalar>
class Params {
 public:
  using Tensor = Mat<Scalar>;

  Params() = default;

  /// Zero tensors laid out per the config's schema.
  static Params zeros(const ModelConfig& cfg) {
    Params p;
    for (const auto& s : layer_schema(cfg)) p.add(s.name, Tensor::Zero(s.rows, s.cols));
    return p;
  }

  void add(std::string name, Tensor t) {
    if (index_.count(name)) throw ConfigError("duplicate tensor '" + name + "'");
    index_.emplace(name, tensors_.size());
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(t));
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Tensor& at(const std::string& name) { return tensors_[lookup(name)]; }
  const Tensor& at(const std::string& name) const { return tensors_[lookup(name)]; }

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& tensor(std::size_t i) { return tensors_[i]; }
  const Tensor& tensor(std::size_t i) const { return tensors_[i]; }
  const std::vector<std::string>& names() const { return names_; }

  long long count() const {
    long long n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  void set_zero() {
    for (auto& t : tensors_) t.setZero();
  }

  template <typename Other>
  Params<Other> cast() const {
    Params<Other> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], tensors_[i].template cast<Other>());
    return out;
  }

  bool all_finite() const {
    for (const auto& t : tensors_)
      if (!t.allFinite()) return false;
    return true;
  }

  /// Layers expected by `cfg` that are absent here, or have another shape.
  std::vector<std::string> schema_mismatches(const ModelConfig& cfg) const {
    std::vector<std::string> bad;
    for (const auto& s : layer_schema(cfg)) {
      if (!contains(s.name)) {
        bad.push_back(s.name + " (missing)");
      } else if (at(s.name).rows() != s.rows || at(s.name).cols() != s.cols) {
        bad.push_back(s.name + " (shape)");
      }
    }
    return bad;
  }

  /// Bitwise equality of one tensor.
  bool tensor_equal(const Params& other, const std::string& name) const {
    const auto& a = at(name);
    const auto& b = other.at(name);
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::equal(a.data(), a.data() + a.size(), b.data(),
                      [](Scalar x, Scalar y) { return std::memcmp(&x, &y, sizeof(Scalar)) == 0; });
  }

  bool bitwise_equal(const Params& other) const {
    if (names_ != other.names_) return false;
    for (const auto& n : names_)
      if (!tensor_equal(other, n)) return false;
    return true;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no tensor named '" + name + "'");
    return it->second;
  }

  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ParamsF = Params<float>;
using ParamsD = Params<double>;

}  // namespace milkit
