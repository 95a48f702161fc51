// Copyright 2026 The cpnet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cpnet/data.hpp"
#include "cpnet/network.hpp"

namespace cpnet {

// Full experiment description. Serialized as `key = value` lines; see
// config_keys() for the accepted keys.
struct TrainConfig {
  // Scenes.
  int64_t scene_height = 96;
  int64_t scene_width = 96;
  int num_classes = 4;
  int shapes_per_image = 3;
  double noise_std = 0.03;
  double shadow_prob = 0.3;
  double color_jitter = 0.06;

  // Augmentation.
  int64_t crop = 32;
  double flip_prob = 0.5;
  std::vector<double> aug_scales{0.5, 0.75, 1.0, 1.5, 1.75, 2.0};

  // Model.
  std::array<int64_t, kNumStages> widths{16, 32, 64, 64, 64};
  int convs_per_stage = 1;
  int64_t c1 = 0;
  int k = 11;
  int64_t aux_width = 32;
  bool use_context_prior = true;

  // Optimization.
  int64_t batch_size = 8;
  int64_t total_iterations = 2000;
  double base_lr = 0.01;
  double poly_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  LossWeights loss;

  // Seeds.
  uint64_t init_seed = 1;
  uint64_t train_seed = 1000;
  // Far above any train_seed ^ index, so held-out scenes never appear in training.
  uint64_t val_seed = uint64_t{1} << 32;
  int64_t val_count = 100;

  // Evaluation and output.
  std::vector<double> eval_scales{0.5, 0.75, 1.0, 1.5, 1.75};
  bool eval_flip = false;
  int64_t eval_every = 0;
  int64_t checkpoint_every = 0;
  std::string out_dir = "cpnet_run";

  // Throws ValueError / DimensionError naming the offending key.
  void validate() const;

  SceneConfig scene() const;
  AugmentConfig augmentation() const;
  NetworkConfig network() const;

  bool operator==(const TrainConfig&) const = default;
};

// Accepted keys in serialization order.
const std::vector<std::string>& config_keys();

// Value of one key as it would be serialized; ValueError for unknown keys.
std::string config_get(const TrainConfig& cfg, const std::string& key);
// Parses and assigns one key; ValueError for unknown keys or bad values.
void config_set(TrainConfig& cfg, const std::string& key, const std::string& value);

// Applies `key = value` lines on top of the defaults. Blank lines and `#`
// comments are skipped. Errors carry the line number.
TrainConfig parse_config(const std::string& text);
std::string serialize_config(const TrainConfig& cfg);

TrainConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const TrainConfig& cfg);

}  // namespace cpnet
