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

#include <optional>
#include <span>
#include <vector>

#include "cpnet/autograd.hpp"
#include "cpnet/label_map.hpp"
#include "cpnet/tensor.hpp"

// Differentiable operations recorded on a Graph. Every op validates its
// inputs, computes the forward value eagerly and registers an exact backward
// rule. Layout is [batch, channel, height, width], row-major.
namespace cpnet {

// ---- shape / data movement -------------------------------------------------

// Rank-2 [m,k]x[k,n] or batched rank-3 [B,m,k]x[B,k,n].
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename T>
Var<T> transpose(Var<T> x);

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis);

// ---- elementwise -------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
// scale * x + shift
template <typename T>
Var<T> affine(Var<T> x, double scale, double shift);
template <typename T>
Var<T> sigmoid(Var<T> x);
template <typename T>
Var<T> relu(Var<T> x);

// ---- reductions ---------------------------------------------------------------

template <typename T>
Var<T> sum(Var<T> x);
template <typename T>
Var<T> mean(Var<T> x);
// sum(w ⊙ x) for a constant weight tensor of x's shape.
template <typename T>
Var<T> weighted_sum(Var<T> x, const Tensor<T>& weights);
// Σ coeffs[i] * xs[i] for scalar inputs.
template <typename T>
Var<T> linear_combination(const std::vector<Var<T>>& xs, const std::vector<double>& coeffs);

// ---- convolution ------------------------------------------------------------------

struct Conv2dOptions {
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 0;
  int pad_w = 0;
  int dilation_h = 1;
  int dilation_w = 1;
  int groups = 1;
};

// floor((in + 2*pad - dilation*(kernel-1) - 1) / stride) + 1; may be <= 0.
int64_t conv_output_size(int64_t in, int64_t kernel, int stride, int pad, int dilation);

// Cross-correlation. x [B,Cin,H,W], w [Cout,Cin/groups,kh,kw], bias [Cout].
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<Var<T>> bias, const Conv2dOptions& opt);

// Forward-only evaluation used by tests and inference helpers.
template <typename T>
Tensor<T> conv2d_value(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                       const Conv2dOptions& opt);

// ---- normalization --------------------------------------------------------------

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

template <typename T>
struct BatchNormState {
  BatchNormState() = default;
  explicit BatchNormState(int64_t channels)
      : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1}) {}
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

enum class Mode { kTrain, kEval };

// Per-channel normalization over (B,H,W). Train mode uses batch statistics
// and updates running = momentum*running + (1-momentum)*batch (variance
// unbiased); eval mode uses the running statistics.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T>& state, Mode mode,
                  double eps = kBatchNormEps, double momentum = kBatchNormMomentum);

// ---- resampling ---------------------------------------------------------------------

// Bilinear resize with half-pixel centers: source coordinate
// (i + 0.5) * in/out - 0.5, clamped to [0, in-1].
template <typename T>
Var<T> resize_bilinear(Var<T> x, int64_t out_h, int64_t out_w);

template <typename T>
Var<T> bilinear_upsample(Var<T> x, int factor);

template <typename T>
Tensor<T> resize_bilinear_value(const Tensor<T>& x, int64_t out_h, int64_t out_w);

// ---- classification -----------------------------------------------------------------

// [H,W,C] one-hot encoding; ignored pixels map to all-zero rows.
template <typename T>
Tensor<T> one_hot(const LabelMap& labels, int num_classes);

// Mean over non-ignored pixels of -log softmax(logits)[label]. logits is
// [B,C,H,W] and labels holds B maps of size HxW.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const LabelMap> labels);

// Channel softmax of [B,C,H,W] logits.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits);

}  // namespace cpnet
