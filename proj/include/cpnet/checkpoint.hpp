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
#include <memory>

#include "cpnet/config.hpp"
#include "cpnet/network.hpp"
#include "cpnet/rng.hpp"

namespace cpnet {

// Checkpoint directory layout:
//   manifest.txt  header, step, RNG state, then one line per tensor:
//                 `tensor <name> <dtype> <d0>x<d1>... <file>`
//   config.txt    the TrainConfig the model was built from
//   <name>.cpt    one CPT1 blob per parameter and BN running statistic
struct Checkpoint {
  TrainConfig config;
  int64_t step = 0;
  Rng::State rng_state{};
  std::unique_ptr<CPNet<float>> model;
};

void save_checkpoint(const std::filesystem::path& dir, const TrainConfig& cfg, CPNet<float>& model,
                     int64_t step, const Rng::State& rng_state);
// IoError for missing or malformed files, DimensionError when a stored
// tensor does not fit the model the config describes.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace cpnet
