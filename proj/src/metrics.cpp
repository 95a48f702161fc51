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

#include "cpnet/metrics.hpp"

#include <numeric>
#include <string>

namespace cpnet {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : classes_(num_classes), counts_(static_cast<std::size_t>(num_classes * num_classes), 0) {
  if (num_classes < 1) throw ValueError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw DimensionError("prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                         " does not match ground truth " + std::to_string(gt.height) + "x" +
                         std::to_string(gt.width));
  }
  for (int64_t i = 0; i < gt.size(); ++i) {
    if (gt.ignored(i)) continue;
    const int32_t g = gt.labels[static_cast<std::size_t>(i)];
    const int32_t p = pred.labels[static_cast<std::size_t>(i)];
    if (g < 0 || g >= classes_ || p < 0 || p >= classes_) {
      throw ValueError("label out of range at pixel " + std::to_string(i) + " (gt " + std::to_string(g) +
                       ", pred " + std::to_string(p) + ")");
    }
    ++counts_[static_cast<std::size_t>(g * classes_ + p)];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw DimensionError("cannot merge confusion matrices of different size");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

int64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), int64_t{0}); }

double ConfusionMatrix::pix_acc() const {
  const int64_t n = total();
  if (n == 0) throw NumericError("pixel accuracy undefined: no non-ignored pixels");
  int64_t diag = 0;
  for (int c = 0; c < classes_; ++c) diag += count(c, c);
  return static_cast<double>(diag) / static_cast<double>(n);
}

std::vector<double> ConfusionMatrix::class_iou() const {
  std::vector<double> iou(static_cast<std::size_t>(classes_), -1.0);
  for (int c = 0; c < classes_; ++c) {
    int64_t gt_total = 0;
    int64_t pred_total = 0;
    for (int k = 0; k < classes_; ++k) {
      gt_total += count(c, k);
      pred_total += count(k, c);
    }
    const int64_t tp = count(c, c);
    const int64_t uni = gt_total + pred_total - tp;
    if (uni > 0) iou[static_cast<std::size_t>(c)] = static_cast<double>(tp) / static_cast<double>(uni);
  }
  return iou;
}

double ConfusionMatrix::mean_iou() const {
  if (total() == 0) throw NumericError("mean IoU undefined: no non-ignored pixels");
  double acc = 0.0;
  int present = 0;
  for (double v : class_iou()) {
    if (v < 0.0) continue;
    acc += v;
    ++present;
  }
  return acc / present;
}

ConfusionMatrix confusion_matrix(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  ConfusionMatrix cm(num_classes);
  cm.add(pred, gt);
  return cm;
}

double pix_acc(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  return confusion_matrix(pred, gt, num_classes).pix_acc();
}

double mean_iou(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  return confusion_matrix(pred, gt, num_classes).mean_iou();
}

}  // namespace cpnet
