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

#include "cpnet/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>
#include <string_view>
#include <system_error>

#include "cpnet/io.hpp"

namespace cpnet {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename I>
std::string fmt_int(I v) {
  return std::to_string(v);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValueError("config key '" + key + "': '" + s + "' is not a number");
  }
  return v;
}

template <typename I>
I parse_int(const std::string& key, const std::string& s) {
  I v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValueError("config key '" + key + "': '" + s + "' is not an integer in range");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ValueError("config key '" + key + "': '" + s + "' is not a boolean");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

std::vector<double> parse_doubles(const std::string& key, const std::string& s) {
  std::vector<double> out;
  for (const std::string& item : split_list(s)) out.push_back(parse_double(key, item));
  return out;
}

template <typename C>
std::string join(const C& values) {
  std::string out;
  for (const auto& v : values) {
    if (!out.empty()) out += ',';
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) {
      out += fmt_double(v);
    } else {
      out += fmt_int(v);
    }
  }
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

#define CPNET_INT_FIELD(name, type)                                                   \
  Field{#name, [](const TrainConfig& c) { return fmt_int(c.name); },                \
        [](TrainConfig& c, const std::string& v) { c.name = parse_int<type>(#name, v); }}
#define CPNET_DOUBLE_FIELD(key, member)                                               \
  Field{key, [](const TrainConfig& c) { return fmt_double(c.member); },             \
        [](TrainConfig& c, const std::string& v) { c.member = parse_double(key, v); }}
#define CPNET_BOOL_FIELD(name)                                                        \
  Field{#name, [](const TrainConfig& c) { return std::string(c.name ? "true" : "false"); }, \
        [](TrainConfig& c, const std::string& v) { c.name = parse_bool(#name, v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> kFields{
      CPNET_INT_FIELD(scene_height, int64_t),
      CPNET_INT_FIELD(scene_width, int64_t),
      CPNET_INT_FIELD(num_classes, int),
      CPNET_INT_FIELD(shapes_per_image, int),
      CPNET_DOUBLE_FIELD("noise_std", noise_std),
      CPNET_DOUBLE_FIELD("shadow_prob", shadow_prob),
      CPNET_DOUBLE_FIELD("color_jitter", color_jitter),
      CPNET_INT_FIELD(crop, int64_t),
      CPNET_DOUBLE_FIELD("flip_prob", flip_prob),
      Field{"aug_scales", [](const TrainConfig& c) { return join(c.aug_scales); },
            [](TrainConfig& c, const std::string& v) { c.aug_scales = parse_doubles("aug_scales", v); }},
      Field{"widths", [](const TrainConfig& c) { return join(c.widths); },
            [](TrainConfig& c, const std::string& v) {
              const auto items = split_list(v);
              if (items.size() != c.widths.size()) {
                throw ValueError("config key 'widths': expected " + std::to_string(c.widths.size()) +
                                 " comma-separated values, got " + std::to_string(items.size()));
              }
              for (std::size_t i = 0; i < items.size(); ++i) c.widths[i] = parse_int<int64_t>("widths", items[i]);
            }},
      CPNET_INT_FIELD(convs_per_stage, int),
      CPNET_INT_FIELD(c1, int64_t),
      CPNET_INT_FIELD(k, int),
      CPNET_INT_FIELD(aux_width, int64_t),
      CPNET_BOOL_FIELD(use_context_prior),
      CPNET_INT_FIELD(batch_size, int64_t),
      CPNET_INT_FIELD(total_iterations, int64_t),
      CPNET_DOUBLE_FIELD("base_lr", base_lr),
      CPNET_DOUBLE_FIELD("poly_power", poly_power),
      CPNET_DOUBLE_FIELD("momentum", momentum),
      CPNET_DOUBLE_FIELD("weight_decay", weight_decay),
      CPNET_DOUBLE_FIELD("loss_seg", loss.seg),
      CPNET_DOUBLE_FIELD("loss_aux", loss.aux),
      CPNET_DOUBLE_FIELD("loss_prior", loss.prior),
      CPNET_DOUBLE_FIELD("loss_unary", loss.unary),
      CPNET_DOUBLE_FIELD("loss_global", loss.global),
      CPNET_INT_FIELD(init_seed, uint64_t),
      CPNET_INT_FIELD(train_seed, uint64_t),
      CPNET_INT_FIELD(val_seed, uint64_t),
      CPNET_INT_FIELD(val_count, int64_t),
      Field{"eval_scales", [](const TrainConfig& c) { return join(c.eval_scales); },
            [](TrainConfig& c, const std::string& v) { c.eval_scales = parse_doubles("eval_scales", v); }},
      CPNET_BOOL_FIELD(eval_flip),
      CPNET_INT_FIELD(eval_every, int64_t),
      CPNET_INT_FIELD(checkpoint_every, int64_t),
      Field{"out_dir", [](const TrainConfig& c) { return c.out_dir; },
            [](TrainConfig& c, const std::string& v) { c.out_dir = v; }},
  };
  return kFields;
}

#undef CPNET_INT_FIELD
#undef CPNET_DOUBLE_FIELD
#undef CPNET_BOOL_FIELD

const Field& find_field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) return f;
  }
  throw ValueError("unknown config key '" + key + "'");
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ValueError("invalid config: " + what);
}

}  // namespace

void TrainConfig::validate() const {
  scene().validate();
  augmentation().validate();
  network().validate();
  require(batch_size > 0, "batch_size must be positive");
  require(total_iterations >= 0, "total_iterations must be >= 0");
  require(base_lr > 0.0, "base_lr must be positive");
  require(poly_power > 0.0, "poly_power must be positive");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0,1)");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(loss.seg >= 0.0 && loss.aux >= 0.0 && loss.prior >= 0.0 && loss.unary >= 0.0 && loss.global >= 0.0,
          "loss weights must be >= 0");
  require(val_count >= 0, "val_count must be >= 0");
  require(!eval_scales.empty(), "eval_scales must not be empty");
  for (double s : eval_scales) require(s > 0.0, "eval_scales must be positive");
  require(eval_every >= 0 && checkpoint_every >= 0, "eval_every and checkpoint_every must be >= 0");
}

SceneConfig TrainConfig::scene() const {
  SceneConfig s;
  s.height = scene_height;
  s.width = scene_width;
  s.num_classes = num_classes;
  s.shapes_per_image = shapes_per_image;
  s.noise_std = noise_std;
  s.shadow_prob = shadow_prob;
  s.color_jitter = color_jitter;
  return s;
}

AugmentConfig TrainConfig::augmentation() const {
  AugmentConfig a;
  a.flip_prob = flip_prob;
  a.scales = aug_scales;
  a.crop = crop;
  return a;
}

NetworkConfig TrainConfig::network() const {
  NetworkConfig n;
  n.num_classes = num_classes;
  n.widths = widths;
  n.convs_per_stage = convs_per_stage;
  n.c1 = c1;
  n.k = k;
  n.aux_width = aux_width;
  n.input_h = crop;
  n.input_w = crop;
  n.use_context_prior = use_context_prior;
  n.init_seed = init_seed;
  return n;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const Field& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

std::string config_get(const TrainConfig& cfg, const std::string& key) { return find_field(key).get(cfg); }

void config_set(TrainConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).set(cfg, trim(value));
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ValueError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      config_set(cfg, trim(std::string_view(body).substr(0, eq)), body.substr(eq + 1));
    } catch (const ValueError& e) {
      throw ValueError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

std::string serialize_config(const TrainConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

TrainConfig load_config(const std::filesystem::path& path) {
  try {
    return parse_config(read_text_file(path));
  } catch (const ValueError& e) {
    throw ValueError(path.string() + ": " + e.what());
  }
}

void save_config(const std::filesystem::path& path, const TrainConfig& cfg) {
  write_text_file(path, serialize_config(cfg));
}

}  // namespace cpnet
