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
#include <vector>

#include "milkit/model_config.hpp"
#include "milkit/nn.hpp"
#include "milkit/params.hpp"

namespace milkit {

/// Result of evaluating one bag.
///
/// `attention` is a distribution over instances for every arch: softmax
/// weights (abmil, auxmil), a one-hot argmax indicator (max), uniform 1/n
/// (mean), or class-token attention of the last block averaged over heads and
/// renormalized over instances (transformer).
template <typename T>
struct ForwardOutput {
  Vec<T> logits;
  Vec<T> embedding;
  Vec<T> attention;
  /// n_instances x (n_classes + 1); auxmil only. The last column is "other".
  std::optional<Mat<T>> aux_logits;
};

struct ForwardOptions {
  bool train = false;
  std::uint64_t dropout_seed = 0;
};

template <typename T>
struct TransformerBlockCache {
  Mat<T> input;
  nn::LayerNormCache<T> norm1;
  Mat<T> normed1;
  Mat<T> qkv;
  std::vector<Mat<T>> probs;  // per head, m x m
  Mat<T> heads;               // concatenated head outputs, m x E
  Mat<T> mid;
  nn::LayerNormCache<T> norm2;
  Mat<T> normed2;
  Mat<T> ff_act;   // post-ReLU
  Mat<T> ff_mask;  // empty when no dropout
};

/// Intermediates retained for backward() and activation capture.
template <typename T>
struct ForwardCache {
  Mat<T> input;        // after input dropout
  Mat<T> input_mask;
  std::vector<Mat<T>> fc_in;
  std::vector<Mat<T>> fc_act;   // post-ReLU, pre-dropout
  std::vector<Mat<T>> fc_mask;
  Mat<T> instances;             // final FC output fed to pooling, n x E

  // max
  Mat<T> instance_logits;
  Eigen::Index selected = 0;

  // abmil / auxmil
  Mat<T> gate_tanh;
  Mat<T> gate_sigmoid;
  Mat<T> gated;
  Vec<T> scores;  // pre-softmax attention logits

  // transformer
  std::vector<TransformerBlockCache<T>> blocks;

  Vec<T> embedding;
};

/// Fresh parameters; weights and the class token ~ N(0, 2/fan_in) truncated
/// at 2 sigma, biases 0, layer-norm gains 1. Each tensor is drawn from its own
/// stream keyed by (seed, name).
ParamsF build_model(const ModelConfig& cfg, std::uint64_t seed);

/// Redraws one tensor exactly as build_model(cfg, seed) would.
MatF init_tensor(const ModelConfig& cfg, const std::string& name, std::uint64_t seed);

template <typename T>
ForwardOutput<T> forward(const Params<T>& params, const ModelConfig& cfg, const Mat<T>& bag,
                         const ForwardOptions& opts = {}, ForwardCache<T>* cache = nullptr);

/// Backpropagates d(loss)/d(logits) (and d(loss)/d(aux_logits) for auxmil)
/// through a cached forward pass, accumulating into `grads`.
template <typename T>
void backward(const Params<T>& params, const ModelConfig& cfg, const ForwardCache<T>& cache, const Vec<T>& dlogits,
              const Mat<T>* daux, Params<T>& grads);

/// Eval-mode attention distribution.
template <typename T>
Vec<T> attention_scores(const Params<T>& params, const ModelConfig& cfg, const Mat<T>& bag) {
  return forward(params, cfg, bag).attention;
}

template <typename T>
struct LossResult {
  T loss = 0;
  Vec<T> dlogits;
  std::optional<Mat<T>> daux;
};

/// Cross-entropy on the bag logits. For auxmil, (1 - aux_weight) * bag CE +
/// aux_weight * instance CE, where the top-k attention instances are
/// pseudo-labeled with the bag label and the bottom-k as "other"
/// (k = min(8, n / 2)).
template <typename T>
LossResult<T> compute_loss(const ForwardOutput<T>& out, int label, const ModelConfig& cfg, double aux_weight);

}  // namespace milkit
