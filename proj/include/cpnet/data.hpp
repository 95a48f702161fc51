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

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cpnet/label_map.hpp"
#include "cpnet/rng.hpp"
#include "cpnet/tensor.hpp"

namespace cpnet {

struct SceneConfig {
  int64_t height = 32;
  int64_t width = 32;
  int num_classes = 4;
  int shapes_per_image = 3;
  double noise_std = 0.03;
  double shadow_prob = 0.3;
  // Per-shape uniform jitter applied to each channel of the class color.
  double color_jitter = 0.06;

  void validate() const;
};

struct SyntheticScene {
  Tensor<float> image;  // [3,H,W] in [0,1]
  LabelMap labels;
  uint64_t seed = 0;
};

// Base RGB color of a class. Class 0 is the background.
std::array<float, 3> class_color(int cls);

// Deterministic scene: background class 0, then shapes_per_image
// rectangles / disks / full-width stripes with class colors (later shapes
// occlude earlier ones). With probability shadow_prob a rectangular region is
// darkened without touching labels; Gaussian pixel noise is added last and
// the image is clamped to [0,1].
SyntheticScene gen_synthetic_scene(uint64_t seed, const SceneConfig& cfg);

struct AugmentConfig {
  double flip_prob = 0.5;
  std::vector<double> scales{0.5, 0.75, 1.0, 1.5, 1.75, 2.0};
  int64_t crop = 32;

  void validate() const;
};

SyntheticScene flip_horizontal(const SyntheticScene& scene);
// Bilinear image resampling, nearest-neighbour labels (pixel-center mapping).
SyntheticScene rescale(const SyntheticScene& scene, int64_t out_h, int64_t out_w);
// Crops (when larger) or pads (when smaller) each axis to `crop`, taking the
// offset from rng. Padding is zeros for the image and ignore_index for labels.
SyntheticScene crop_or_pad(const SyntheticScene& scene, int64_t crop, Rng& rng);

// Random flip, random scale from cfg.scales, then crop/pad to cfg.crop.
SyntheticScene augment(const SyntheticScene& scene, Rng& rng, const AugmentConfig& cfg);

// Packs scenes into a [B,3,H,W] tensor (all scenes must share a size).
template <typename T>
Tensor<T> stack_images(std::span<const SyntheticScene> scenes);

// ---- export ---------------------------------------------------------------

// Palette entry for a class id (the PASCAL VOC bit-interleaving scheme:
// bits 0,1,2 of the id feed the top bits of R,G,B, then bits 3,4,5, ...).
// The ignore index maps to (224,224,192).
std::array<uint8_t, 3> palette_color(int32_t cls, int32_t ignore_index = kDefaultIgnoreIndex);
void write_label_ppm(const std::filesystem::path& path, const LabelMap& labels);
void write_image_ppm(const std::filesystem::path& path, const Tensor<float>& image);

// Directory layout: {id}.img.cpt (f32 [3,H,W]), {id}.lbl.cpt (i32 [H,W]) and
// manifest.txt. ids are six-digit zero-padded indices.
std::string scene_id(int64_t index);
void write_dataset(const std::filesystem::path& dir, std::span<const SyntheticScene> scenes,
                   int num_classes);
struct Dataset {
  int num_classes = 0;
  std::vector<SyntheticScene> scenes;
};
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace cpnet
