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
#include <string>

#include "cpnet/layers.hpp"

namespace cpnet {

enum class SeparableAxis {
  kVertical,    // k x 1 kernel
  kHorizontal,  // 1 x k kernel
};

// Depthwise k x 1 (or 1 x k) convolution with same-padding on the separated
// axis, followed by a 1x1 pointwise convolution to c_out channels. No biases:
// every use is followed by BN.
template <typename T>
struct FullySeparableConv {
  FullySeparableConv() = default;
  FullySeparableConv(const std::string& name, SeparableAxis axis, int k, int64_t c_in,
                     int64_t c_out, Rng& rng);

  Var<T> forward(Graph<T>& g, Var<T> x);
  void collect(StateRefs<T>& refs);

  SeparableAxis axis = SeparableAxis::kVertical;
  int k = 0;
  int64_t c_in = 0;
  int64_t c_out = 0;
  Conv2d<T> depthwise;  // [c_in,1,k,1] or [c_in,1,1,k], groups = c_in
  Conv2d<T> pointwise;  // [c_out,c_in,1,1]
};

// Multiply-accumulate counts.
// Standard k x k convolution c_in -> c_out over an h x w map.
int64_t standard_conv_macs(int64_t h, int64_t w, int k, int64_t c_in, int64_t c_out);
// k x 1 followed by 1 x k full convolutions, c_in -> c_out -> c_out.
int64_t spatial_separable_macs(int64_t h, int64_t w, int k, int64_t c_in, int64_t c_out);
// One fully separable convolution: batch*h*w*(k*c_in + c_in*c_out).
int64_t fully_separable_macs(int64_t batch, int64_t h, int64_t w, int k, int64_t c_in, int64_t c_out);

// FSConv(k x 1) -> BN -> ReLU -> FSConv(1 x k) -> BN -> ReLU.
template <typename T>
struct AggregationModule {
  AggregationModule() = default;
  AggregationModule(const std::string& name, int k, int64_t c_in, int64_t c_out, Rng& rng);

  Var<T> forward(Graph<T>& g, Var<T> x, Mode mode);
  void collect(StateRefs<T>& refs);
  // Multiply-accumulates of both separable convolutions for one forward pass.
  int64_t macs(int64_t batch, int64_t h, int64_t w) const;

  int k = 11;
  int64_t c_in = 0;
  int64_t c_out = 0;
  FullySeparableConv<T> vertical;
  BatchNorm<T> bn_vertical;
  FullySeparableConv<T> horizontal;
  BatchNorm<T> bn_horizontal;
};

// 1x1 convolution (c_in -> N, no bias) + BN + sigmoid, reshaped to one N x N
// prior map per image: prior[b][i][j] is the affinity of query pixel i
// (row-major spatial index) with pixel j.
template <typename T>
struct PriorHead {
  PriorHead() = default;
  PriorHead(const std::string& name, int64_t c_in, int64_t feature_h, int64_t feature_w, Rng& rng);

  // x [B,c_in,H,W] with H*W == n; returns [B,N,N].
  Var<T> forward(Graph<T>& g, Var<T> x, Mode mode);
  void collect(StateRefs<T>& refs);

  int64_t n = 0;
  Conv2d<T> conv;
  BatchNorm<T> bn;
};

template <typename T>
struct ContextPriorOutput {
  Var<T> features;    // [B, C0 + 2*C1, H, W]
  Var<T> prior;       // [B, N, N]
  Var<T> aggregated;  // X̃ [B, C1, H, W]
  Var<T> intra;       // Y  [B, C1, H, W]
  Var<T> inter;       // Ȳ  [B, C1, H, W]
};

// Intra context Y = P·X̃ and inter context Ȳ = (1 - P)·X̃ with X̃ viewed as
// [N, C1]; output is concat(x, Y, Ȳ) along channels.
template <typename T>
ContextPriorOutput<T> apply_context_prior(Var<T> x, Var<T> aggregated, Var<T> prior);

template <typename T>
struct ContextPriorLayer {
  ContextPriorLayer() = default;
  ContextPriorLayer(const std::string& name, int k, int64_t c0, int64_t c1, int64_t feature_h,
                    int64_t feature_w, Rng& rng);

  ContextPriorOutput<T> forward(Graph<T>& g, Var<T> x, Mode mode);
  void collect(StateRefs<T>& refs);
  int64_t output_channels() const { return aggregation.c_in + 2 * aggregation.c_out; }

  AggregationModule<T> aggregation;
  PriorHead<T> prior_head;
};

}  // namespace cpnet
