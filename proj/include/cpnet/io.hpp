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
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cpnet/tensor.hpp"

namespace cpnet {

// CPT1 tensor container:
//   "CPT1" | u8 dtype code (0=f32, 1=f64, 2=i32, 3=u8) | u8 rank r |
//   r x u32 little-endian dims | raw little-endian row-major data
using AnyTensor = std::variant<Tensor<float>, Tensor<double>, Tensor<int32_t>, Tensor<uint8_t>>;

template <typename T>
std::vector<uint8_t> encode_cpt(const Tensor<T>& tensor);
AnyTensor decode_cpt(std::span<const uint8_t> bytes);

template <typename T>
void write_cpt(const std::filesystem::path& path, const Tensor<T>& tensor);
AnyTensor read_cpt(const std::filesystem::path& path);

// Reads a CPT1 file and requires its dtype to be T.
template <typename T>
Tensor<T> read_cpt_as(const std::filesystem::path& path);

// Binary 8-bit greyscale (P5). pixels.size() == width*height.
void write_pgm(const std::filesystem::path& path, int64_t width, int64_t height,
               std::span<const uint8_t> pixels);
// Binary 8-bit RGB (P6). rgb.size() == 3*width*height, interleaved.
void write_ppm(const std::filesystem::path& path, int64_t width, int64_t height,
               std::span<const uint8_t> rgb);

struct Image8 {
  int64_t width = 0;
  int64_t height = 0;
  int channels = 0;  // 1 for P5, 3 for P6
  std::vector<uint8_t> pixels;
};
Image8 read_pnm(const std::filesystem::path& path);

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace cpnet
