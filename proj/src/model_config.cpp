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

#include "milkit/model_config.hpp"

#include <sstream>

#include "milkit/common.hpp"

namespace milkit {

std::string to_string(Arch a) {
  switch (a) {
    case Arch::kMean: return "mean";
    case Arch::kMax: return "max";
    case Arch::kAbmil: return "abmil";
    case Arch::kTransformer: return "transformer";
    case Arch::kAuxMil: return "auxmil";
  }
  return "?";
}

Arch parse_arch(const std::string& s) {
  if (s == "mean") return Arch::kMean;
  if (s == "max") return Arch::kMax;
  if (s == "abmil") return Arch::kAbmil;
  if (s == "transformer") return Arch::kTransformer;
  if (s == "auxmil") return Arch::kAuxMil;
  throw ConfigError("unknown arch '" + s + "'");
}

void ModelConfig::validate() const {
  const std::string a = to_string(arch);
  auto fail = [&a](const std::string& msg) { throw ConfigError("model config (" + a + "): " + msg); };
  if (in_dim < 1 || embed_dim < 1) fail("in_dim and embed_dim must be positive");
  if (n_classes < 2) fail("n_classes must be >= 2");
  for (int h : fc_hidden_dims)
    if (h < 1) fail("fc_hidden_dims entries must be positive");
  if (!(dropout_ff >= 0.0 && dropout_ff < 1.0) || !(dropout_input >= 0.0 && dropout_input < 1.0))
    fail("dropout rates must be in [0, 1)");
  if (has_attention_branch()) {
    if (attn_dim < 1) fail("attn_dim required");
  } else if (attn_dim != 0) {
    fail("attn_dim only applies to abmil/auxmil");
  }
  if (arch == Arch::kTransformer) {
    if (n_layers < 1) fail("n_layers required");
    if (n_heads < 1 || embed_dim % n_heads != 0) fail("embed_dim must be divisible by n_heads");
    if (encoder_hidden_dim && *encoder_hidden_dim < 1) fail("encoder_hidden_dim must be positive");
  } else {
    if (n_layers != 0) fail("n_layers only applies to transformer");
    if (encoder_hidden_dim) fail("encoder_hidden_dim only applies to transformer");
  }
}

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os << "arch=" << to_string(arch) << ";in=" << in_dim << ";embed=" << embed_dim << ";attn=" << attn_dim
     << ";hidden=[";
  for (std::size_t i = 0; i < fc_hidden_dims.size(); ++i) os << (i ? "," : "") << fc_hidden_dims[i];
  os << "];classes=" << n_classes << ";layers=" << n_layers
     << ";ff=" << (encoder_hidden_dim ? std::to_string(*encoder_hidden_dim) : "none") << ";heads=" << n_heads
     << ";dropout_ff=" << dropout_ff << ";dropout_input=" << dropout_input;
  return os.str();
}

std::string ModelConfig::digest() const { return hex64(fnv1a(canonical())); }

ModelConfig ModelConfig::mean(int in_dim, int n_classes, int embed_dim) {
  ModelConfig c;
  c.arch = Arch::kMean;
  c.in_dim = in_dim;
  c.embed_dim = embed_dim;
  c.n_classes = n_classes;
  return c;
}

ModelConfig ModelConfig::max(int in_dim, int n_classes, int embed_dim) {
  auto c = mean(in_dim, n_classes, embed_dim);
  c.arch = Arch::kMax;
  return c;
}

ModelConfig ModelConfig::abmil(int in_dim, int embed_dim, int attn_dim, std::vector<int> hidden, int n_classes) {
  ModelConfig c;
  c.arch = Arch::kAbmil;
  c.in_dim = in_dim;
  c.embed_dim = embed_dim;
  c.attn_dim = attn_dim;
  c.fc_hidden_dims = std::move(hidden);
  c.n_classes = n_classes;
  return c;
}

ModelConfig ModelConfig::auxmil(int in_dim, int embed_dim, int attn_dim, std::vector<int> hidden, int n_classes) {
  auto c = abmil(in_dim, embed_dim, attn_dim, std::move(hidden), n_classes);
  c.arch = Arch::kAuxMil;
  return c;
}

ModelConfig ModelConfig::transformer(int in_dim, int embed_dim, int n_layers, std::optional<int> encoder_hidden,
                                     std::vector<int> hidden, int n_classes, int n_heads) {
  ModelConfig c;
  c.arch = Arch::kTransformer;
  c.in_dim = in_dim;
  c.embed_dim = embed_dim;
  c.n_layers = n_layers;
  c.encoder_hidden_dim = encoder_hidden;
  c.fc_hidden_dims = std::move(hidden);
  c.n_classes = n_classes;
  c.n_heads = n_heads;
  return c;
}

bool operator==(const ModelConfig& a, const ModelConfig& b) { return a.canonical() == b.canonical(); }

std::vector<LayerShape> layer_schema(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<LayerShape> out;
  auto linear = [&out](const std::string& name, long in, long outd) {
    out.push_back({name + ".weight", outd, in});
    out.push_back({name + ".bias", outd, 1});
  };
  long prev = cfg.in_dim;
  for (int i = 0; i < cfg.n_fc_layers(); ++i) {
    const long next = i < static_cast<int>(cfg.fc_hidden_dims.size()) ? cfg.fc_hidden_dims[i] : cfg.embed_dim;
    linear("fc." + std::to_string(i), prev, next);
    prev = next;
  }
  const long e = cfg.embed_dim;
  if (cfg.has_attention_branch()) {
    linear("attn.V", e, cfg.attn_dim);
    linear("attn.U", e, cfg.attn_dim);
    linear("attn.w", cfg.attn_dim, 1);
  }
  if (cfg.arch == Arch::kTransformer) {
    out.push_back({"cls_token", 1, e});
    for (int i = 0; i < cfg.n_layers; ++i) {
      const std::string p = "tx." + std::to_string(i) + ".";
      out.push_back({p + "norm1.weight", e, 1});
      out.push_back({p + "norm1.bias", e, 1});
      linear(p + "qkv", e, 3 * e);
      linear(p + "proj", e, e);
      out.push_back({p + "norm2.weight", e, 1});
      out.push_back({p + "norm2.bias", e, 1});
      if (cfg.encoder_hidden_dim) {
        linear(p + "ff1", e, *cfg.encoder_hidden_dim);
        linear(p + "ff2", *cfg.encoder_hidden_dim, e);
      }
    }
  }
  linear("classifier", e, cfg.n_classes);
  if (cfg.arch == Arch::kAuxMil) linear("aux.head", e, cfg.n_classes + 1);
  return out;
}

long long param_count(const ModelConfig& cfg) {
  cfg.validate();
  auto lin = [](long long in, long long out) { return in * out + out; };
  long long total = 0;
  long long prev = cfg.in_dim;
  for (int h : cfg.fc_hidden_dims) {
    total += lin(prev, h);
    prev = h;
  }
  const long long e = cfg.embed_dim;
  total += lin(prev, e);
  total += lin(e, cfg.n_classes);
  switch (cfg.arch) {
    case Arch::kMean:
    case Arch::kMax:
      break;
    case Arch::kAuxMil:
      total += lin(e, cfg.n_classes + 1);
      [[fallthrough]];
    case Arch::kAbmil:
      // tanh branch V, sigmoid branch U, scalar projection w
      total += 2 * lin(e, cfg.attn_dim) + lin(cfg.attn_dim, 1);
      break;
    case Arch::kTransformer: {
      long long block = lin(e, 3 * e) + lin(e, e) + 4 * e;
      if (cfg.encoder_hidden_dim) block += lin(e, *cfg.encoder_hidden_dim) + lin(*cfg.encoder_hidden_dim, e);
      total += e + cfg.n_layers * block;
      break;
    }
  }
  return total;
}

bool is_head_layer(const std::string& name) {
  return name.rfind("classifier.", 0) == 0 || name.rfind("aux.head.", 0) == 0;
}

}  // namespace milkit
