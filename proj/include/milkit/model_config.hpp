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
#include <string>
#include <vector>

namespace milkit {

enum class Arch { kMean, kMax, kAbmil, kTransformer, kAuxMil };

std::string to_string(Arch a);
Arch parse_arch(const std::string& s);

/// Architecture description. Instance features pass through an FC stack
/// in_dim -> fc_hidden_dims... -> embed_dim (linear + ReLU each) before the
/// arch-specific pooling.
struct ModelConfig {
  Arch arch = Arch::kAbmil;
  int in_dim = 1024;
  int embed_dim = 512;
  /// Gated-attention width (abmil, auxmil only).
  int attn_dim = 0;
  std::vector<int> fc_hidden_dims;
  int n_classes = 2;
  /// Transformer only.
  int n_layers = 0;
  std::optional<int> encoder_hidden_dim;
  int n_heads = 8;
  double dropout_ff = 0.25;
  double dropout_input = 0.1;

  bool has_attention_branch() const { return arch == Arch::kAbmil || arch == Arch::kAuxMil; }
  int n_fc_layers() const { return static_cast<int>(fc_hidden_dims.size()) + 1; }

  /// Throws ConfigError on invalid arch/field combinations.
  void validate() const;

  /// Canonical text used for digests.
  std::string canonical() const;
  std::string digest() const;

  static ModelConfig mean(int in_dim, int n_classes, int embed_dim = 512);
  static ModelConfig max(int in_dim, int n_classes, int embed_dim = 512);
  static ModelConfig abmil(int in_dim, int embed_dim, int attn_dim, std::vector<int> hidden, int n_classes);
  static ModelConfig auxmil(int in_dim, int embed_dim, int attn_dim, std::vector<int> hidden, int n_classes);
  static ModelConfig transformer(int in_dim, int embed_dim, int n_layers, std::optional<int> encoder_hidden,
                                 std::vector<int> hidden, int n_classes, int n_heads = 8);
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

/// Layer shape as (rows, cols); biases are (out, 1).
struct LayerShape {
  std::string name;
  long rows = 0;
  long cols = 0;
};

/// Canonical ordered tensor schema for a config.
std::vector<LayerShape> layer_schema(const ModelConfig& cfg);

/// Closed-form parameter count.
long long param_count(const ModelConfig& cfg);

/// True for tensors that are re-initialized when a model moves to a new task.
bool is_head_layer(const std::string& name);

}  // namespace milkit
