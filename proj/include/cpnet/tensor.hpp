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

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpnet/error.hpp"

namespace cpnet {

using Shape = std::vector<int64_t>;

enum class DType : uint8_t { kFloat32 = 0, kFloat64 = 1, kInt32 = 2, kUInt8 = 3 };

template <typename T>
struct DTypeOf;
template <>
struct DTypeOf<float> {
  static constexpr DType value = DType::kFloat32;
};
template <>
struct DTypeOf<double> {
  static constexpr DType value = DType::kFloat64;
};
template <>
struct DTypeOf<int32_t> {
  static constexpr DType value = DType::kInt32;
};
template <>
struct DTypeOf<uint8_t> {
  static constexpr DType value = DType::kUInt8;
};

const char* dtype_name(DType dtype);
std::size_t dtype_size(DType dtype);

std::string shape_to_string(const Shape& shape);
int64_t shape_numel(const Shape& shape);

// Dense row-major tensor. data().size() == product(shape) always holds; every
// constructor validates it.
template <typename T>
class Tensor {
 public:
  static constexpr DType kDType = DTypeOf<T>::value;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(checked_numel(shape_)), fill);
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != checked_numel(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_to_string(shape_));
    }
  }
  Tensor(std::initializer_list<int64_t> shape, std::initializer_list<T> values)
      : Tensor(Shape(shape), std::vector<T>(values)) {}

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // 4-D accessor for [B,C,H,W] tensors.
  T& at(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  const T& at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  T& at(int64_t r, int64_t c) { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }
  const T& at(int64_t r, int64_t c) const {
    return data_[static_cast<std::size_t>(r * shape_[1] + c)];
  }

  // Same buffer viewed under a new shape of equal element count.
  Tensor reshaped(Shape shape) const {
    if (checked_numel(shape) != numel()) {
      throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " +
                           shape_to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  static int64_t checked_numel(const Shape& shape) {
    for (int64_t d : shape) {
      if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_to_string(shape));
    }
    return shape_numel(shape);
  }

  Shape shape_;
  std::vector<T> data_;
};

}  // namespace cpnet
