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

#include "cpnet/io.hpp"

#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cpnet/error.hpp"

namespace cpnet {
namespace {

static_assert(std::endian::native == std::endian::little,
              "CPT1 encoding assumes a little-endian host");

constexpr char kMagic[4] = {'C', 'P', 'T', '1'};

template <typename T>
void append_raw(std::vector<uint8_t>& out, const T* data, std::size_t count) {
  const auto* p = reinterpret_cast<const uint8_t*>(data);
  out.insert(out.end(), p, p + count * sizeof(T));
}

template <typename T>
Tensor<T> decode_payload(Shape shape, std::span<const uint8_t> payload) {
  const int64_t n = shape_numel(shape);
  if (payload.size() != static_cast<std::size_t>(n) * sizeof(T)) {
    throw IoError("CPT1 payload holds " + std::to_string(payload.size()) + " bytes, expected " +
                  std::to_string(static_cast<std::size_t>(n) * sizeof(T)) + " for shape " +
                  shape_to_string(shape));
  }
  std::vector<T> data(static_cast<std::size_t>(n));
  std::memcpy(data.data(), payload.data(), payload.size());
  return Tensor<T>(std::move(shape), std::move(data));
}

void write_pnm(const std::filesystem::path& path, const char* magic, int64_t width, int64_t height,
               int channels, std::span<const uint8_t> pixels) {
  if (width <= 0 || height <= 0 ||
      pixels.size() != static_cast<std::size_t>(width * height * channels)) {
    throw DimensionError("image buffer does not match " + std::to_string(width) + "x" +
                         std::to_string(height) + " for " + path.string());
  }
  std::ostringstream header;
  header << magic << '\n' << width << ' ' << height << "\n255\n";
  std::vector<uint8_t> bytes;
  const std::string h = header.str();
  bytes.insert(bytes.end(), h.begin(), h.end());
  bytes.insert(bytes.end(), pixels.begin(), pixels.end());
  write_file_bytes(path, bytes);
}

}  // namespace

template <typename T>
std::vector<uint8_t> encode_cpt(const Tensor<T>& tensor) {
  const Shape& shape = tensor.shape();
  if (shape.size() > 255) throw DimensionError("CPT1 supports rank <= 255");
  std::vector<uint8_t> out(kMagic, kMagic + 4);
  out.push_back(static_cast<uint8_t>(Tensor<T>::kDType));
  out.push_back(static_cast<uint8_t>(shape.size()));
  for (int64_t d : shape) {
    if (d > static_cast<int64_t>(UINT32_MAX)) throw DimensionError("CPT1 dimension exceeds u32");
    const auto v = static_cast<uint32_t>(d);
    append_raw(out, &v, 1);
  }
  append_raw(out, tensor.raw(), static_cast<std::size_t>(tensor.numel()));
  return out;
}

AnyTensor decode_cpt(std::span<const uint8_t> bytes) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IoError("not a CPT1 tensor (bad magic)");
  }
  const uint8_t code = bytes[4];
  const std::size_t rank = bytes[5];
  if (bytes.size() < 6 + 4 * rank) throw IoError("CPT1 header truncated");
  Shape shape;
  for (std::size_t i = 0; i < rank; ++i) {
    uint32_t d;
    std::memcpy(&d, bytes.data() + 6 + 4 * i, 4);
    if (d == 0) throw IoError("CPT1 dimension of size zero");
    shape.push_back(d);
  }
  const auto payload = bytes.subspan(6 + 4 * rank);
  switch (code) {
    case 0: return decode_payload<float>(std::move(shape), payload);
    case 1: return decode_payload<double>(std::move(shape), payload);
    case 2: return decode_payload<int32_t>(std::move(shape), payload);
    case 3: return decode_payload<uint8_t>(std::move(shape), payload);
    default: throw IoError("CPT1 unknown dtype code " + std::to_string(code));
  }
}

template <typename T>
void write_cpt(const std::filesystem::path& path, const Tensor<T>& tensor) {
  write_file_bytes(path, encode_cpt(tensor));
}

AnyTensor read_cpt(const std::filesystem::path& path) {
  const std::vector<uint8_t> bytes = read_file_bytes(path);
  try {
    return decode_cpt(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

template <typename T>
Tensor<T> read_cpt_as(const std::filesystem::path& path) {
  AnyTensor any = read_cpt(path);
  if (auto* t = std::get_if<Tensor<T>>(&any)) return std::move(*t);
  throw IoError(path.string() + ": expected dtype " + dtype_name(Tensor<T>::kDType));
}

void write_pgm(const std::filesystem::path& path, int64_t width, int64_t height,
               std::span<const uint8_t> pixels) {
  write_pnm(path, "P5", width, height, 1, pixels);
}

void write_ppm(const std::filesystem::path& path, int64_t width, int64_t height,
               std::span<const uint8_t> rgb) {
  write_pnm(path, "P6", width, height, 3, rgb);
}

Image8 read_pnm(const std::filesystem::path& path) {
  const std::vector<uint8_t> bytes = read_file_bytes(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  Image8 img;
  const std::string magic = token();
  if (magic == "P5") {
    img.channels = 1;
  } else if (magic == "P6") {
    img.channels = 3;
  } else {
    throw IoError(path.string() + ": unsupported PNM magic '" + magic + "'");
  }
  try {
    img.width = std::stoll(token());
    img.height = std::stoll(token());
    if (std::stoi(token()) != 255) throw IoError(path.string() + ": only 8-bit PNM supported");
  } catch (const std::logic_error&) {
    throw IoError(path.string() + ": malformed PNM header");
  }
  ++pos;
  const std::size_t n = static_cast<std::size_t>(img.width * img.height * img.channels);
  if (bytes.size() < pos + n) throw IoError(path.string() + ": truncated PNM data");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

std::string read_text_file(const std::filesystem::path& path) {
  const std::vector<uint8_t> bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

#define CPNET_INSTANTIATE_IO(T)                                                   \
  template std::vector<uint8_t> encode_cpt<T>(const Tensor<T>&);                  \
  template void write_cpt<T>(const std::filesystem::path&, const Tensor<T>&);     \
  template Tensor<T> read_cpt_as<T>(const std::filesystem::path&);

CPNET_INSTANTIATE_IO(float)
CPNET_INSTANTIATE_IO(double)
CPNET_INSTANTIATE_IO(int32_t)
CPNET_INSTANTIATE_IO(uint8_t)

}  // namespace cpnet
