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

#include "milkit/model_config.hpp"
#include "milkit/synth.hpp"
#include "milkit/trainer.hpp"

// Desk-scale settings for the shared-concept synthetic suite: small enough
// for one CPU core, hard enough that training from scratch on a 200-bag
// target does not saturate.
namespace milkit::presets {

inline SuiteConfig desk_suite() {
  SuiteConfig s;
  s.feat_dim = 64;
  s.n_class_concepts = 16;
  s.n_background_concepts = 8;
  s.witness_rate = 0.05;
  s.min_bag_size = 20;
  s.max_bag_size = 40;
  s.noise_sigma = 0.3;
  s.pretrain_bags = 2000;
  s.n_targets = 3;
  s.target_bags = 200;
  return s;
}

/// Three FC layers so every reset spec applies.
inline ModelConfig desk_abmil(int n_classes) { return ModelConfig::abmil(64, 64, 32, {64, 64}, n_classes); }

inline ModelConfig desk_transformer(int n_classes) { return ModelConfig::transformer(64, 64, 2, 64, {}, n_classes, 4); }

/// The standard recipe with lr raised to 1e-3 for the small models.
inline TrainConfig desk_train(std::uint64_t seed) {
  TrainConfig t;
  t.lr = 1e-3;
  t.seed = seed;
  return t;
}

}  // namespace milkit::presets
