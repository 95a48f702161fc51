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

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cpnet/data.hpp"
#include "cpnet/io.hpp"
#include "cpnet/metrics.hpp"
#include "oracles.hpp"

namespace cpnet {
namespace {

SceneConfig histogram_config() {
  SceneConfig c;
  c.height = 32;
  c.width = 32;
  c.num_classes = 4;
  c.shapes_per_image = 3;
  c.noise_std = 0.03;
  c.shadow_prob = 0.3;
  c.color_jitter = 0.06;
  return c;
}

SceneConfig clean_config(int64_t side) {
  SceneConfig c;
  c.height = c.width = side;
  c.num_classes = 4;
  c.shapes_per_image = 4;
  c.noise_std = 0.0;
  c.shadow_prob = 0.0;
  c.color_jitter = 0.0;
  return c;
}

LabelMap labels_from(int64_t h, int64_t w, std::vector<int32_t> v) {
  LabelMap m(h, w);
  m.labels = std::move(v);
  return m;
}

TEST(Generator, EmptyNoiseFreeSceneIsUniformBackground) {
  SceneConfig c = clean_config(16);
  c.shapes_per_image = 0;
  const SyntheticScene s = gen_synthetic_scene(4, c);
  for (int32_t v : s.labels.labels) EXPECT_EQ(v, 0);
  for (int64_t ch = 0; ch < 3; ++ch)
    for (int64_t p = 0; p < 256; ++p) EXPECT_EQ(s.image[ch * 256 + p], s.image[ch * 256]);
}

TEST(Generator, SameSeedSameBytes) {
  const SceneConfig c = histogram_config();
  const SyntheticScene a = gen_synthetic_scene(99, c);
  const SyntheticScene b = gen_synthetic_scene(99, c);
  EXPECT_EQ(encode_cpt(a.image), encode_cpt(b.image));
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(gen_synthetic_scene(100, c).labels, a.labels);
}

TEST(Generator, ImageRangeAndShape) {
  const SyntheticScene s = gen_synthetic_scene(5, histogram_config());
  EXPECT_EQ(s.image.shape(), (Shape{3, 32, 32}));
  for (float v : s.image.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Generator, InvalidSizesRejected) {
  SceneConfig c = histogram_config();
  c.height = 30;
  EXPECT_THROW(gen_synthetic_scene(1, c), DimensionError);
  c = histogram_config();
  c.num_classes = 1;
  EXPECT_THROW(gen_synthetic_scene(1, c), ValueError);
}

// Frozen counts of every class over scenes 0..999 of the histogram config.
TEST(Generator, ClassHistogramMatchesFixture) {
  std::ifstream in(std::string(CPNET_FIXTURE_DIR) + "/class_histogram.txt");
  ASSERT_TRUE(in) << "missing fixture";
  std::vector<int64_t> want;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int cls = 0;
    int64_t count = 0;
    ls >> cls >> count;
    want.push_back(count);
  }
  std::vector<int64_t> got(4, 0);
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    for (int32_t v : gen_synthetic_scene(seed, histogram_config()).labels.labels) ++got[static_cast<std::size_t>(v)];
  }
  EXPECT_EQ(got, want);
  for (int64_t c : got) EXPECT_GT(c, 0);
  EXPECT_EQ(std::accumulate(got.begin(), got.end(), int64_t{0}), int64_t{1000} * 32 * 32);
}

TEST(Augment, FlipIsAnInvolution) {
  const SyntheticScene s = gen_synthetic_scene(7, histogram_config());
  const SyntheticScene f = flip_horizontal(s);
  EXPECT_NE(f.labels, s.labels);
  const SyntheticScene ff = flip_horizontal(f);
  EXPECT_EQ(ff.image, s.image);
  EXPECT_EQ(ff.labels, s.labels);
}

TEST(Augment, UnitScaleFullCropIsIdentity) {
  const SyntheticScene s = gen_synthetic_scene(8, histogram_config());
  AugmentConfig a;
  a.flip_prob = 0.0;
  a.scales = {1.0};
  a.crop = 32;
  Rng rng(1);
  const SyntheticScene out = augment(s, rng, a);
  EXPECT_EQ(out.image, s.image);
  EXPECT_EQ(out.labels, s.labels);
}

TEST(Augment, PaddingUsesZerosAndIgnore) {
  const SyntheticScene s = gen_synthetic_scene(9, histogram_config());
  Rng rng(2);
  const SyntheticScene p = crop_or_pad(s, 48, rng);
  EXPECT_EQ(p.image.shape(), (Shape{3, 48, 48}));
  int64_t ignored = 0;
  for (int64_t i = 0; i < p.labels.size(); ++i) {
    if (!p.labels.ignored(i)) continue;
    ++ignored;
    for (int64_t ch = 0; ch < 3; ++ch) EXPECT_EQ(p.image[ch * 48 * 48 + i], 0.0f);
  }
  EXPECT_EQ(ignored, 48 * 48 - 32 * 32);
}

TEST(Augment, InvalidCropRejected) {
  const SyntheticScene s = gen_synthetic_scene(9, histogram_config());
  AugmentConfig a;
  a.crop = 30;
  Rng rng(3);
  EXPECT_THROW(augment(s, rng, a), DimensionError);
}

// On noise-free scenes with unique class colors, every pixel whose 5x5 label
// neighbourhood lies inside the crop and is a single class keeps exactly that
// class color, and label
// changes between neighbours come with color changes.
TEST(Augment, LabelsStayAlignedWithColors) {
  AugmentConfig a;
  a.crop = 32;
  Rng rng(4);
  int64_t boundary_pairs = 0;
  int64_t boundary_with_color_change = 0;
  for (uint64_t seed = 0; seed < 60; ++seed) {
    const SyntheticScene s = augment(gen_synthetic_scene(seed, clean_config(48)), rng, a);
    const LabelMap& m = s.labels;
    const int64_t plane = m.height * m.width;
    for (int64_t y = 0; y < m.height; ++y)
      for (int64_t x = 0; x < m.width; ++x) {
        const int32_t l = m.at(y, x);
        if (l == m.ignore_index) continue;
        bool uniform = true;
        for (int64_t dy = -2; dy <= 2 && uniform; ++dy)
          for (int64_t dx = -2; dx <= 2 && uniform; ++dx) {
            const int64_t yy = y + dy;
            const int64_t xx = x + dx;
            // Crop edges hide the resampling neighbours, so they never count as interior.
            uniform = yy >= 0 && xx >= 0 && yy < m.height && xx < m.width && m.at(yy, xx) == l;
          }
        const std::array<float, 3> want = class_color(l);
        if (uniform) {
          for (int64_t ch = 0; ch < 3; ++ch) {
            ASSERT_NEAR(s.image[ch * plane + y * m.width + x], want[static_cast<std::size_t>(ch)], 1e-5)
                << "seed " << seed << " at " << y << "," << x;
          }
        }
        if (x + 1 < m.width && m.at(y, x + 1) != l && m.at(y, x + 1) != m.ignore_index) {
          ++boundary_pairs;
          float diff = 0.0f;
          for (int64_t ch = 0; ch < 3; ++ch) {
            diff += std::abs(s.image[ch * plane + y * m.width + x] - s.image[ch * plane + y * m.width + x + 1]);
          }
          if (diff > 1e-3f) ++boundary_with_color_change;
        }
      }
  }
  ASSERT_GT(boundary_pairs, 0);
  EXPECT_GE(static_cast<double>(boundary_with_color_change) / static_cast<double>(boundary_pairs), 0.99);
}

TEST(Dataset, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "cpnet_dataset_test";
  std::filesystem::remove_all(dir);
  std::vector<SyntheticScene> scenes{gen_synthetic_scene(1, histogram_config()),
                                     gen_synthetic_scene(2, histogram_config())};
  write_dataset(dir, scenes, 4);
  EXPECT_TRUE(std::filesystem::exists(dir / (scene_id(1) + ".img.cpt")));
  const Dataset d = read_dataset(dir);
  EXPECT_EQ(d.num_classes, 4);
  ASSERT_EQ(d.scenes.size(), 2u);
  EXPECT_EQ(d.scenes[1].image, scenes[1].image);
  EXPECT_EQ(d.scenes[1].labels, scenes[1].labels);
  EXPECT_EQ(d.scenes[1].seed, 2u);
  EXPECT_THROW(read_dataset(dir / "missing"), IoError);
}

TEST(Export, PaletteAndPpm) {
  EXPECT_EQ(palette_color(0), (std::array<uint8_t, 3>{0, 0, 0}));
  EXPECT_EQ(palette_color(1), (std::array<uint8_t, 3>{128, 0, 0}));
  EXPECT_EQ(palette_color(2), (std::array<uint8_t, 3>{0, 128, 0}));
  EXPECT_EQ(palette_color(3), (std::array<uint8_t, 3>{128, 128, 0}));
  EXPECT_EQ(palette_color(kDefaultIgnoreIndex), (std::array<uint8_t, 3>{224, 224, 192}));
  const auto path = std::filesystem::temp_directory_path() / "cpnet_labels.ppm";
  write_label_ppm(path, labels_from(1, 2, {1, 2}));
  const Image8 img = read_pnm(path);
  EXPECT_EQ(img.pixels, (std::vector<uint8_t>{128, 0, 0, 0, 128, 0}));
}

TEST(Metrics, PerfectAndInverted) {
  const LabelMap gt = labels_from(2, 3, {0, 1, 1, 0, 255, 1});
  EXPECT_EQ(pix_acc(gt, gt, 2), 1.0);
  EXPECT_EQ(mean_iou(gt, gt, 2), 1.0);
  LabelMap inv = gt;
  for (int32_t& v : inv.labels) v = v == 255 ? 0 : 1 - v;
  EXPECT_EQ(pix_acc(inv, gt, 2), 0.0);
  EXPECT_EQ(mean_iou(inv, gt, 2), 0.0);
}

TEST(Metrics, HandBuiltThreeClassFixture) {
  const LabelMap gt = labels_from(4, 4, {0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 2, 255, 2, 2, 2, 255});
  const LabelMap pred = labels_from(4, 4, {0, 1, 1, 1, 0, 0, 2, 1, 2, 2, 0, 0, 2, 1, 2, 2});
  const ConfusionMatrix cm = confusion_matrix(pred, gt, 3);
  const auto want = oracle::confusion(pred, gt, 3);
  int64_t total = 0;
  int64_t trace = 0;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      EXPECT_EQ(cm.count(r, c), want[r][c]);
      total += want[r][c];
      if (r == c) trace += want[r][c];
    }
  EXPECT_EQ(cm.total(), 14);
  EXPECT_DOUBLE_EQ(cm.pix_acc(), static_cast<double>(trace) / static_cast<double>(total));
  double iou_sum = 0.0;
  for (int k = 0; k < 3; ++k) {
    int64_t fp = 0, fn = 0;
    for (int j = 0; j < 3; ++j) {
      if (j == k) continue;
      fp += want[j][k];
      fn += want[k][j];
    }
    iou_sum += static_cast<double>(want[k][k]) / static_cast<double>(want[k][k] + fp + fn);
  }
  EXPECT_DOUBLE_EQ(cm.mean_iou(), iou_sum / 3.0);
  // Hand count: TP 3/3/4, total 14.
  EXPECT_DOUBLE_EQ(cm.pix_acc(), 10.0 / 14.0);
}

TEST(Metrics, AbsentClassesExcluded) {
  const LabelMap gt = labels_from(1, 4, {0, 0, 2, 2});
  const LabelMap pred = labels_from(1, 4, {0, 0, 2, 0});
  const ConfusionMatrix cm = confusion_matrix(pred, gt, 5);
  const std::vector<double> iou = cm.class_iou();
  EXPECT_LT(iou[1], 0.0);
  EXPECT_LT(iou[3], 0.0);
  EXPECT_DOUBLE_EQ(cm.mean_iou(), (2.0 / 3.0 + 1.0 / 2.0) / 2.0);
}

TEST(Metrics, PermutationCovariantAndRanges) {
  Rng rng(11);
  const std::vector<int32_t> perm{2, 0, 3, 1};
  for (int trial = 0; trial < 50; ++trial) {
    LabelMap gt(5, 5);
    LabelMap pred(5, 5);
    for (int64_t i = 0; i < 25; ++i) {
      gt.labels[static_cast<std::size_t>(i)] =
          rng.bernoulli(0.1) ? 255 : static_cast<int32_t>(rng.uniform_int(0, 3));
      pred.labels[static_cast<std::size_t>(i)] = static_cast<int32_t>(rng.uniform_int(0, 3));
    }
    if (std::all_of(gt.labels.begin(), gt.labels.end(), [](int32_t v) { return v == 255; })) continue;
    LabelMap gp = gt;
    LabelMap pp = pred;
    for (int32_t& v : gp.labels)
      if (v != 255) v = perm[static_cast<std::size_t>(v)];
    for (int32_t& v : pp.labels) v = perm[static_cast<std::size_t>(v)];
    const double acc = pix_acc(pred, gt, 4);
    const double miou = mean_iou(pred, gt, 4);
    EXPECT_DOUBLE_EQ(pix_acc(pp, gp, 4), acc);
    EXPECT_DOUBLE_EQ(mean_iou(pp, gp, 4), miou);
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
    EXPECT_GE(miou, 0.0);
    EXPECT_LE(miou, 1.0);
    bool equal = true;
    for (int64_t i = 0; i < 25; ++i) equal = equal && (gt.ignored(i) || gt.labels[i] == pred.labels[i]);
    EXPECT_EQ(miou == 1.0, equal);
  }
}

TEST(Metrics, MergeAddsCounts) {
  const LabelMap gt = labels_from(1, 3, {0, 1, 1});
  ConfusionMatrix a = confusion_matrix(gt, gt, 2);
  a.merge(confusion_matrix(labels_from(1, 3, {1, 1, 0}), gt, 2));
  EXPECT_EQ(a.total(), 6);
  EXPECT_EQ(a.count(0, 1), 1);
  EXPECT_THROW(a.merge(ConfusionMatrix(3)), DimensionError);
}

TEST(Metrics, Errors) {
  const LabelMap gt(2, 2, 255);
  EXPECT_THROW(pix_acc(gt, gt, 2), NumericError);
  EXPECT_THROW(mean_iou(gt, gt, 2), NumericError);
  EXPECT_THROW(pix_acc(LabelMap(2, 3), LabelMap(2, 2), 2), DimensionError);
}

}  // namespace
}  // namespace cpnet
