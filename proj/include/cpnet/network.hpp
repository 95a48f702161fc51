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

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cpnet/affinity.hpp"
#include "cpnet/context_prior.hpp"
#include "cpnet/layers.hpp"

namespace cpnet {

inline constexpr int kNumStages = 5;
inline constexpr int kOutputStride = 8;
inline constexpr std::array<int, kNumStages> kStageStrides{2, 2, 2, 1, 1};
inline constexpr std::array<int, kNumStages> kStageDilations{1, 1, 1, 2, 4};

struct NetworkConfig {
  int num_classes = 4;
  std::array<int64_t, kNumStages> widths{16, 32, 64, 64, 64};
  int convs_per_stage = 1;
  // Aggregation output width C1; 0 means 2 * C0.
  int64_t c1 = 0;
  int k = 11;
  int64_t aux_width = 32;
  // Training resolution; fixes N = (input_h/8) * (input_w/8) for the prior head.
  int64_t input_h = 32;
  int64_t input_w = 32;
  bool use_context_prior = true;
  uint64_t init_seed = 0;

  int64_t c0() const { return widths[kNumStages - 1]; }
  int64_t effective_c1() const { return c1 > 0 ? c1 : 2 * c0(); }
  int64_t feature_h() const { return input_h / kOutputStride; }
  int64_t feature_w() const { return input_w / kOutputStride; }
  // Throws DimensionError / ValueError for an unusable configuration.
  void validate() const;
};

// Five stages of [conv3x3 -> BN -> ReLU] x convs_per_stage with strides
// (2,2,2,1,1) and dilations (1,1,1,2,4): output stride 8.
template <typename T>
struct ToyBackbone {
  ToyBackbone() = default;
  ToyBackbone(const NetworkConfig& cfg, Rng& rng);

  // Returns the output of every stage, index 0 = stage 1.
  std::vector<Var<T>> forward(Graph<T>& g, Var<T> image, Mode mode);
  void collect(StateRefs<T>& refs);

  struct Block {
    Conv2d<T> conv;
    BatchNorm<T> bn;
  };
  std::vector<std::vector<Block>> stages;
};

template <typename T>
struct NetworkOutput {
  Var<T> logits;              // [B, classes, H, W]
  Var<T> aux_logits;          // [B, classes, H, W]
  std::optional<Var<T>> prior;  // [B, N, N] when the context prior branch is enabled
  std::vector<Var<T>> stages;
};

// Toy CPNet: backbone -> Context Prior Layer -> 1x1 seg head, plus an
// auxiliary head on stage 4. Both heads are upsampled x8 to input size.
template <typename T>
class CPNet {
 public:
  explicit CPNet(const NetworkConfig& cfg);

  // image [B,3,H,W] with H,W divisible by 8. With the prior branch enabled
  // H,W must equal the configured input size.
  NetworkOutput<T> forward(Graph<T>& g, Var<T> image, Mode mode);

  const NetworkConfig& config() const { return cfg_; }
  StateRefs<T> state();
  std::vector<Parameter<T>*> parameters() { return state().params; }
  void zero_grad();

  ToyBackbone<T> backbone;
  std::optional<ContextPriorLayer<T>> context_prior;
  Conv2d<T> seg_head;
  Conv2d<T> aux_conv;
  BatchNorm<T> aux_bn;
  Conv2d<T> aux_classifier;

 private:
  NetworkConfig cfg_;
};

// Ideal affinity targets for each label map at the model's feature resolution.
std::vector<IdealAffinityMap> affinity_targets(std::span<const LabelMap> labels, int64_t feature_h,
                                               int64_t feature_w, int num_classes);

struct LossWeights {
  double seg = 1.0;
  double aux = 0.4;
  double prior = 1.0;
  double unary = 1.0;
  double global = 1.0;

  bool operator==(const LossWeights&) const = default;
};

struct TotalLossTerms {
  double seg = 0.0;
  double aux = 0.0;
  double prior = 0.0;
  double unary = 0.0;
  double global = 0.0;
  double total = 0.0;
  LossWeights weights;
};

template <typename T>
struct TotalLoss {
  Var<T> total;
  TotalLossTerms terms;
};

// L = λs·CE(logits) + λa·CE(aux) + λp·(λu·L_u + λg·L_g). Without a prior the
// affinity part is absent.
template <typename T>
TotalLoss<T> total_loss(const NetworkOutput<T>& out, std::span<const LabelMap> labels,
                        std::span<const IdealAffinityMap> targets, const LossWeights& weights);

// Full forward + loss on a labelled batch.
template <typename T>
struct ForwardWithLoss {
  NetworkOutput<T> output;
  std::vector<IdealAffinityMap> targets;
  TotalLoss<T> loss;
};

template <typename T>
ForwardWithLoss<T> forward_with_loss(CPNet<T>& model, Graph<T>& g, const Tensor<T>& images,
                                     std::span<const LabelMap> labels, const LossWeights& weights,
                                     Mode mode);

}  // namespace cpnet
