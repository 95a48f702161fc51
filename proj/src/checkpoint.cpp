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

#include "cpnet/checkpoint.hpp"

#include <map>
#include <sstream>
#include <string>

#include "cpnet/io.hpp"

namespace cpnet {
namespace {

constexpr const char* kMagic = "cpnet-checkpoint";
constexpr int kVersion = 1;

std::string dims_string(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i > 0) out += 'x';
    out += std::to_string(s[i]);
  }
  return out.empty() ? "scalar" : out;
}

struct Entry {
  std::string name;
  Tensor<float>* tensor;
};

std::vector<Entry> entries(CPNet<float>& model) {
  StateRefs<float> refs = model.state();
  std::vector<Entry> out;
  for (Parameter<float>* p : refs.params) out.push_back({p->name, &p->value});
  for (auto& [name, t] : refs.buffers) out.push_back({name, t});
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const TrainConfig& cfg, CPNet<float>& model,
                     int64_t step, const Rng::State& rng_state) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  std::ostringstream manifest;
  manifest << kMagic << ' ' << kVersion << '\n' << "step " << step << '\n' << "rng";
  for (uint64_t w : rng_state) manifest << ' ' << w;
  manifest << '\n';
  for (const Entry& e : entries(model)) {
    const std::string file = e.name + ".cpt";
    write_cpt(dir / file, *e.tensor);
    manifest << "tensor " << e.name << ' ' << dtype_name(DType::kFloat32) << ' ' << dims_string(e.tensor->shape())
             << ' ' << file << '\n';
  }
  save_config(dir / "config.txt", cfg);
  write_text_file(dir / "manifest.txt", manifest.str());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("checkpoint directory not found: " + dir.string());
  Checkpoint ck;
  ck.config = load_config(dir / "config.txt");
  ck.config.validate();
  ck.model = std::make_unique<CPNet<float>>(ck.config.network());

  const std::string where = (dir / "manifest.txt").string();
  std::istringstream in(read_text_file(dir / "manifest.txt"));
  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != kMagic || version != kVersion) {
    throw IoError(where + ": not a checkpoint manifest");
  }
  if (!(in >> word >> ck.step) || word != "step") throw IoError(where + ": missing step");
  if (!(in >> word) || word != "rng") throw IoError(where + ": missing rng state");
  for (uint64_t& w : ck.rng_state) {
    if (!(in >> w)) throw IoError(where + ": truncated rng state");
  }

  std::map<std::string, std::string> files;
  std::string name, dtype, dims, file;
  while (in >> word) {
    if (word != "tensor" || !(in >> name >> dtype >> dims >> file)) throw IoError(where + ": malformed tensor line");
    if (dtype != dtype_name(DType::kFloat32)) throw IoError(where + ": tensor " + name + " has dtype " + dtype);
    files[name] = file;
  }
  for (const Entry& e : entries(*ck.model)) {
    const auto it = files.find(e.name);
    if (it == files.end()) throw IoError(where + ": tensor " + e.name + " missing");
    Tensor<float> t = read_cpt_as<float>(dir / it->second);
    if (t.shape() != e.tensor->shape()) {
      throw DimensionError("checkpoint tensor " + e.name + " has shape " + shape_to_string(t.shape()) +
                           ", model expects " + shape_to_string(e.tensor->shape()));
    }
    *e.tensor = std::move(t);
    files.erase(it);
  }
  if (!files.empty()) throw IoError(where + ": unexpected tensor " + files.begin()->first);
  return ck;
}

}  // namespace cpnet
