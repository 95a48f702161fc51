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

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cpnet/autograd.hpp"
#include "cpnet/ops.hpp"
#include "cpnet/rng.hpp"

namespace cpnet {

// Non-owning view of everything a module persists: trainable parameters and
// named buffers (BN running statistics). Order is construction order and is
// stable, which the checkpoint format relies on.
template <typename T>
struct StateRefs {
  std::vector<Parameter<T>*> params;
  std::vector<std::pair<std::string, Tensor<T>*>> buffers;
};

// Zero-mean uniform init with bound 1/sqrt(fan_in).
template <typename T>
Tensor<T> uniform_init(Shape shape, int64_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
struct Conv2d {
  Conv2d() = default;
  Conv2d(const std::string& name, int64_t c_in, int64_t c_out, int kh, int kw, Conv2dOptions opt,
         bool with_bias, Rng& rng)
      : options(opt) {
    const int64_t fan_in = c_in / opt.groups * kh * kw;
    weight = Parameter<T>(name + ".weight",
                          uniform_init<T>(Shape{c_out, c_in / opt.groups, kh, kw}, fan_in, rng));
    if (with_bias) bias = Parameter<T>(name + ".bias", uniform_init<T>(Shape{c_out}, fan_in, rng));
  }

  Var<T> forward(Graph<T>& g, Var<T> x) {
    std::optional<Var<T>> b;
    if (bias) b = g.parameter(*bias);
    return conv2d(x, g.parameter(weight), b, options);
  }

  void collect(StateRefs<T>& refs) {
    refs.params.push_back(&weight);
    if (bias) refs.params.push_back(&*bias);
  }

  Parameter<T> weight;
  std::optional<Parameter<T>> bias;
  Conv2dOptions options;
};

template <typename T>
struct BatchNorm {
  BatchNorm() = default;
  BatchNorm(const std::string& name, int64_t channels)
      : gamma(name + ".gamma", Tensor<T>(Shape{channels}, T{1}), false),
        beta(name + ".beta", Tensor<T>(Shape{channels}, T{0}), false),
        state(channels),
        prefix(name) {}

  Var<T> forward(Graph<T>& g, Var<T> x, Mode mode) {
    return batch_norm(x, g.parameter(gamma), g.parameter(beta), state, mode);
  }

  void collect(StateRefs<T>& refs) {
    refs.params.push_back(&gamma);
    refs.params.push_back(&beta);
    refs.buffers.emplace_back(prefix + ".running_mean", &state.running_mean);
    refs.buffers.emplace_back(prefix + ".running_var", &state.running_var);
  }

  Parameter<T> gamma;
  Parameter<T> beta;
  BatchNormState<T> state;
  std::string prefix;
};

}  // namespace cpnet
