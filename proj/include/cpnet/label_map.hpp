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

#include "cpnet/error.hpp"

namespace cpnet {

inline constexpr int32_t kDefaultIgnoreIndex = 255;

// Per-pixel integer class assignment, row-major, with an ignore sentinel.
struct LabelMap {
  LabelMap() = default;
  LabelMap(int64_t h, int64_t w, int32_t fill = 0, int32_t ignore = kDefaultIgnoreIndex)
      : height(h), width(w), labels(static_cast<std::size_t>(h * w), fill), ignore_index(ignore) {
    if (h <= 0 || w <= 0) throw DimensionError("label map dimensions must be positive");
  }

  int32_t& at(int64_t y, int64_t x) { return labels[static_cast<std::size_t>(y * width + x)]; }
  int32_t at(int64_t y, int64_t x) const { return labels[static_cast<std::size_t>(y * width + x)]; }
  bool ignored(int64_t i) const { return labels[static_cast<std::size_t>(i)] == ignore_index; }
  int64_t size() const { return height * width; }

  bool operator==(const LabelMap&) const = default;

  int64_t height = 0;
  int64_t width = 0;
  std::vector<int32_t> labels;
  int32_t ignore_index = kDefaultIgnoreIndex;
};

// Throws ValueError naming the first pixel whose label is neither the
// sentinel nor in [0, num_classes).
void validate_labels(const LabelMap& map, int num_classes);

}  // namespace cpnet
