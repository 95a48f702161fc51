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
#include <vector>

#include "cpnet/label_map.hpp"

namespace cpnet {

// Ignore-aware confusion counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  // Adds every pixel whose ground truth is not ignored.
  void add(const LabelMap& pred, const LabelMap& gt);
  void merge(const ConfusionMatrix& other);

  int num_classes() const { return classes_; }
  int64_t count(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt * classes_ + pred)]; }
  int64_t total() const;

  // trace / total; NumericError when no pixel was counted.
  double pix_acc() const;
  // Per-class TP / (TP + FP + FN); negative for classes absent from both.
  std::vector<double> class_iou() const;
  // Mean IoU over classes present in gt or prediction.
  double mean_iou() const;

 private:
  int classes_;
  std::vector<int64_t> counts_;
};

ConfusionMatrix confusion_matrix(const LabelMap& pred, const LabelMap& gt, int num_classes);
double pix_acc(const LabelMap& pred, const LabelMap& gt, int num_classes);
double mean_iou(const LabelMap& pred, const LabelMap& gt, int num_classes);

}  // namespace cpnet
