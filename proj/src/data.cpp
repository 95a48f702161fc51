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

#include "cpnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>

#include "cpnet/io.hpp"
#include "cpnet/ops.hpp"

namespace cpnet {

void SceneConfig::validate() const {
  if (height <= 0 || width <= 0 || height % 8 != 0 || width % 8 != 0) {
    throw DimensionError("scene size " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not divisible by 8");
  }
  if (num_classes < 2) throw ValueError("scene generator needs num_classes >= 2");
  if (num_classes > 254) throw ValueError("num_classes must stay below the ignore index");
  if (shapes_per_image < 0) throw ValueError("shapes_per_image must be >= 0");
  if (noise_std < 0.0 || color_jitter < 0.0) throw ValueError("noise_std and color_jitter must be >= 0");
  if (shadow_prob < 0.0 || shadow_prob > 1.0) throw ValueError("shadow_prob must be in [0,1]");
}

std::array<float, 3> class_color(int cls) {
  static constexpr std::array<std::array<float, 3>, 8> kBase{{
      {0.50f, 0.50f, 0.50f},  // background: grey
      {0.85f, 0.25f, 0.20f},  // red
      {0.20f, 0.75f, 0.30f},  // green
      {0.25f, 0.30f, 0.85f},  // blue
      {0.90f, 0.80f, 0.20f},  // yellow
      {0.70f, 0.30f, 0.80f},  // purple
      {0.20f, 0.80f, 0.80f},  // cyan
      {0.95f, 0.55f, 0.15f},  // orange
  }};
  if (cls >= 0 && cls < static_cast<int>(kBase.size())) return kBase[static_cast<std::size_t>(cls)];
  // Beyond the named colors, derive one from a hash of the id.
  uint64_t s = static_cast<uint64_t>(cls) * 0x9E3779B97F4A7C15ULL;
  std::array<float, 3> c{};
  for (float& v : c) v = 0.15f + 0.8f * static_cast<float>(splitmix64(s) >> 40) / static_cast<float>(1 << 24);
  return c;
}

SyntheticScene gen_synthetic_scene(uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  const int64_t h = cfg.height;
  const int64_t w = cfg.width;
  const int64_t side = std::min(h, w);
  SyntheticScene scene;
  scene.seed = seed;
  scene.labels = LabelMap(h, w, 0);
  std::vector<std::array<float, 3>> color(static_cast<std::size_t>(h * w));

  auto jittered = [&](int cls) {
    std::array<float, 3> c = class_color(cls);
    for (float& v : c) v = static_cast<float>(std::clamp(v + rng.uniform(-cfg.color_jitter, cfg.color_jitter), 0.0, 1.0));
    return c;
  };
  std::fill(color.begin(), color.end(), jittered(0));

  auto paint = [&](int64_t y, int64_t x, int cls, const std::array<float, 3>& c) {
    scene.labels.at(y, x) = cls;
    color[static_cast<std::size_t>(y * w + x)] = c;
  };

  for (int s = 0; s < cfg.shapes_per_image; ++s) {
    const int cls = static_cast<int>(rng.uniform_int(1, cfg.num_classes - 1));
    const auto c = jittered(cls);
    switch (rng.uniform_int(0, 2)) {
      case 0: {  // axis-aligned rectangle
        const int64_t rh = rng.uniform_int(side / 4, side / 2);
        const int64_t rw = rng.uniform_int(side / 4, side / 2);
        const int64_t y0 = rng.uniform_int(0, h - rh);
        const int64_t x0 = rng.uniform_int(0, w - rw);
        for (int64_t y = y0; y < y0 + rh; ++y) {
          for (int64_t x = x0; x < x0 + rw; ++x) paint(y, x, cls, c);
        }
        break;
      }
      case 1: {  // disk
        const double r = rng.uniform(static_cast<double>(side) / 6.0, static_cast<double>(side) / 3.0);
        const double cy = rng.uniform(0.0, static_cast<double>(h));
        const double cx = rng.uniform(0.0, static_cast<double>(w));
        for (int64_t y = 0; y < h; ++y) {
          for (int64_t x = 0; x < w; ++x) {
            const double dy = static_cast<double>(y) + 0.5 - cy;
            const double dx = static_cast<double>(x) + 0.5 - cx;
            if (dy * dy + dx * dx <= r * r) paint(y, x, cls, c);
          }
        }
        break;
      }
      default: {  // stripe spanning the image
        const bool horizontal = rng.bernoulli(0.5);
        const int64_t extent = horizontal ? h : w;
        const int64_t thick = rng.uniform_int(side / 4, side / 3);
        const int64_t off = rng.uniform_int(0, extent - thick);
        for (int64_t y = 0; y < h; ++y) {
          for (int64_t x = 0; x < w; ++x) {
            const int64_t t = horizontal ? y : x;
            if (t >= off && t < off + thick) paint(y, x, cls, c);
          }
        }
        break;
      }
    }
  }

  // Shadow: darken a region regardless of class.
  if (rng.bernoulli(cfg.shadow_prob)) {
    const int64_t sh = rng.uniform_int(side / 4, side / 2);
    const int64_t sw = rng.uniform_int(side / 4, side / 2);
    const int64_t y0 = rng.uniform_int(0, h - sh);
    const int64_t x0 = rng.uniform_int(0, w - sw);
    for (int64_t y = y0; y < y0 + sh; ++y) {
      for (int64_t x = x0; x < x0 + sw; ++x) {
        for (float& v : color[static_cast<std::size_t>(y * w + x)]) v *= 0.55f;
      }
    }
  }

  scene.image = Tensor<float>(Shape{3, h, w});
  for (int64_t ch = 0; ch < 3; ++ch) {
    for (int64_t i = 0; i < h * w; ++i) {
      double v = color[static_cast<std::size_t>(i)][static_cast<std::size_t>(ch)];
      if (cfg.noise_std > 0.0) v += cfg.noise_std * rng.gaussian();
      scene.image[ch * h * w + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return scene;
}

void AugmentConfig::validate() const {
  if (crop < 8 || crop % 8 != 0) {
    throw DimensionError("crop size " + std::to_string(crop) + " must be a positive multiple of 8");
  }
  if (flip_prob < 0.0 || flip_prob > 1.0) throw ValueError("flip_prob must be in [0,1]");
  if (scales.empty()) throw ValueError("augmentation needs at least one scale");
  for (double s : scales) {
    if (!(s > 0.0)) throw ValueError("augmentation scales must be positive");
  }
}

SyntheticScene flip_horizontal(const SyntheticScene& scene) {
  SyntheticScene out = scene;
  const int64_t h = scene.labels.height;
  const int64_t w = scene.labels.width;
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      out.labels.at(y, x) = scene.labels.at(y, w - 1 - x);
      for (int64_t c = 0; c < 3; ++c) out.image[(c * h + y) * w + x] = scene.image[(c * h + y) * w + (w - 1 - x)];
    }
  }
  return out;
}

SyntheticScene rescale(const SyntheticScene& scene, int64_t out_h, int64_t out_w) {
  const int64_t h = scene.labels.height;
  const int64_t w = scene.labels.width;
  if (out_h == h && out_w == w) return scene;
  SyntheticScene out;
  out.seed = scene.seed;
  out.image = resize_bilinear_value(scene.image.reshaped(Shape{1, 3, h, w}), out_h, out_w)
                  .reshaped(Shape{3, out_h, out_w});
  out.labels = LabelMap(out_h, out_w, 0, scene.labels.ignore_index);
  auto nearest = [](int64_t i, int64_t in, int64_t o) {
    const auto src = static_cast<int64_t>(std::floor((static_cast<double>(i) + 0.5) * static_cast<double>(in) /
                                                     static_cast<double>(o)));
    return std::clamp<int64_t>(src, 0, in - 1);
  };
  for (int64_t y = 0; y < out_h; ++y) {
    const int64_t sy = nearest(y, h, out_h);
    for (int64_t x = 0; x < out_w; ++x) out.labels.at(y, x) = scene.labels.at(sy, nearest(x, w, out_w));
  }
  return out;
}

SyntheticScene crop_or_pad(const SyntheticScene& scene, int64_t crop, Rng& rng) {
  const int64_t h = scene.labels.height;
  const int64_t w = scene.labels.width;
  // Source window start (crop) or destination offset (pad) per axis.
  const int64_t src_y = h > crop ? rng.uniform_int(0, h - crop) : 0;
  const int64_t dst_y = h < crop ? rng.uniform_int(0, crop - h) : 0;
  const int64_t src_x = w > crop ? rng.uniform_int(0, w - crop) : 0;
  const int64_t dst_x = w < crop ? rng.uniform_int(0, crop - w) : 0;
  SyntheticScene out;
  out.seed = scene.seed;
  out.image = Tensor<float>(Shape{3, crop, crop});
  out.labels = LabelMap(crop, crop, scene.labels.ignore_index, scene.labels.ignore_index);
  const int64_t rows = std::min(h, crop);
  const int64_t cols = std::min(w, crop);
  for (int64_t y = 0; y < rows; ++y) {
    for (int64_t x = 0; x < cols; ++x) {
      out.labels.at(dst_y + y, dst_x + x) = scene.labels.at(src_y + y, src_x + x);
      for (int64_t c = 0; c < 3; ++c) {
        out.image[(c * crop + dst_y + y) * crop + dst_x + x] = scene.image[(c * h + src_y + y) * w + src_x + x];
      }
    }
  }
  return out;
}

SyntheticScene augment(const SyntheticScene& scene, Rng& rng, const AugmentConfig& cfg) {
  cfg.validate();
  SyntheticScene out = rng.bernoulli(cfg.flip_prob) ? flip_horizontal(scene) : scene;
  const double s = cfg.scales[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<int64_t>(cfg.scales.size()) - 1))];
  const auto sh = std::max<int64_t>(1, std::llround(static_cast<double>(out.labels.height) * s));
  const auto sw = std::max<int64_t>(1, std::llround(static_cast<double>(out.labels.width) * s));
  out = rescale(out, sh, sw);
  if (sh == cfg.crop && sw == cfg.crop) return out;
  return crop_or_pad(out, cfg.crop, rng);
}

template <typename T>
Tensor<T> stack_images(std::span<const SyntheticScene> scenes) {
  if (scenes.empty()) throw ValueError("cannot stack an empty batch");
  const Shape& s = scenes[0].image.shape();
  Tensor<T> out(Shape{static_cast<int64_t>(scenes.size()), s[0], s[1], s[2]});
  const int64_t per = scenes[0].image.numel();
  for (std::size_t b = 0; b < scenes.size(); ++b) {
    if (scenes[b].image.shape() != s) {
      throw DimensionError("batch images differ in shape: " + shape_to_string(s) + " vs " +
                           shape_to_string(scenes[b].image.shape()));
    }
    for (int64_t i = 0; i < per; ++i) out[static_cast<int64_t>(b) * per + i] = static_cast<T>(scenes[b].image[i]);
  }
  return out;
}

template Tensor<float> stack_images<float>(std::span<const SyntheticScene>);
template Tensor<double> stack_images<double>(std::span<const SyntheticScene>);

std::array<uint8_t, 3> palette_color(int32_t cls, int32_t ignore_index) {
  if (cls == ignore_index) return {224, 224, 192};
  std::array<uint8_t, 3> rgb{0, 0, 0};
  int32_t c = cls;
  for (int j = 0; j < 8 && c > 0; ++j) {
    for (int ch = 0; ch < 3; ++ch) rgb[static_cast<std::size_t>(ch)] |= static_cast<uint8_t>(((c >> ch) & 1) << (7 - j));
    c >>= 3;
  }
  return rgb;
}

void write_label_ppm(const std::filesystem::path& path, const LabelMap& labels) {
  std::vector<uint8_t> rgb(static_cast<std::size_t>(labels.size() * 3));
  for (int64_t i = 0; i < labels.size(); ++i) {
    const auto c = palette_color(labels.labels[static_cast<std::size_t>(i)], labels.ignore_index);
    std::copy(c.begin(), c.end(), rgb.begin() + i * 3);
  }
  write_ppm(path, labels.width, labels.height, rgb);
}

void write_image_ppm(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("expected a [3,H,W] image, got " + shape_to_string(image.shape()));
  }
  const int64_t h = image.dim(1);
  const int64_t w = image.dim(2);
  std::vector<uint8_t> rgb(static_cast<std::size_t>(h * w * 3));
  for (int64_t i = 0; i < h * w; ++i) {
    for (int64_t c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(image[c * h * w + i]), 0.0, 1.0);
      rgb[static_cast<std::size_t>(i * 3 + c)] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
  }
  write_ppm(path, w, h, rgb);
}

std::string scene_id(int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06lld", static_cast<long long>(index));
  return buf;
}

void write_dataset(const std::filesystem::path& dir, std::span<const SyntheticScene> scenes,
                   int num_classes) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  std::ostringstream manifest;
  manifest << "cpnet-dataset 1\n"
           << "num_classes " << num_classes << "\n"
           << "count " << scenes.size() << "\n";
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const SyntheticScene& s = scenes[i];
    const std::string id = scene_id(static_cast<int64_t>(i));
    write_cpt(dir / (id + ".img.cpt"), s.image);
    Tensor<int32_t> lbl(Shape{s.labels.height, s.labels.width}, s.labels.labels);
    write_cpt(dir / (id + ".lbl.cpt"), lbl);
    manifest << id << ' ' << s.seed << ' ' << s.labels.ignore_index << '\n';
  }
  write_text_file(dir / "manifest.txt", manifest.str());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::istringstream in(read_text_file(dir / "manifest.txt"));
  std::string magic;
  int version = 0;
  std::string key;
  Dataset ds;
  std::size_t count = 0;
  if (!(in >> magic >> version) || magic != "cpnet-dataset" || version != 1) {
    throw IoError(dir.string() + "/manifest.txt: not a cpnet dataset manifest");
  }
  if (!(in >> key >> ds.num_classes) || key != "num_classes" || !(in >> key >> count) || key != "count") {
    throw IoError(dir.string() + "/manifest.txt: malformed header");
  }
  for (std::size_t i = 0; i < count; ++i) {
    std::string id;
    uint64_t seed = 0;
    int32_t ignore = kDefaultIgnoreIndex;
    if (!(in >> id >> seed >> ignore)) throw IoError(dir.string() + "/manifest.txt: truncated scene list");
    SyntheticScene s;
    s.seed = seed;
    s.image = read_cpt_as<float>(dir / (id + ".img.cpt"));
    const Tensor<int32_t> lbl = read_cpt_as<int32_t>(dir / (id + ".lbl.cpt"));
    if (s.image.rank() != 3 || s.image.dim(0) != 3 || lbl.rank() != 2 || lbl.dim(0) != s.image.dim(1) ||
        lbl.dim(1) != s.image.dim(2)) {
      throw IoError(dir.string() + ": scene " + id + " has mismatched image/label shapes");
    }
    s.labels = LabelMap(lbl.dim(0), lbl.dim(1), 0, ignore);
    s.labels.labels = lbl.storage();
    validate_labels(s.labels, ds.num_classes);
    ds.scenes.push_back(std::move(s));
  }
  return ds;
}

}  // namespace cpnet
