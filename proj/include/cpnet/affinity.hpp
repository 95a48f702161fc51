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
#include <filesystem>
#include <span>
#include <vector>

#include "cpnet/autograd.hpp"
#include "cpnet/label_map.hpp"
#include "cpnet/tensor.hpp"

namespace cpnet {

// Clamp applied to probabilities in the unary term and to every ratio in the
// global term before taking logs.
inline constexpr double kAffinityEps = 1e-7;

// Binary same-class matrix over the N = H*W pixels of a (downsampled) label
// map. values(i,j) == 1 iff both pixels are labelled and share a class;
// rows and columns of ignored pixels are zero and flagged in valid.
struct IdealAffinityMap {
  int64_t n = 0;
  Tensor<uint8_t> values;      // [N,N]
  std::vector<uint8_t> valid;  // length N
  int64_t valid_count() const;
};

// Nearest-neighbour label downsampling anchored top-left:
// out(i,j) = gt(i*sh, j*sw). Strides must be integers.
LabelMap downsample_labels(const LabelMap& gt, int64_t out_h, int64_t out_w);

// A = L̂ L̂ᵀ with L̂ the [N,C] one-hot encoding of gt_small.
IdealAffinityMap ideal_affinity_map(const LabelMap& gt_small, int num_classes);

// Writes A as a binary PGM, 0 -> black, 1 -> white.
void write_affinity_pgm(const std::filesystem::path& path, const IdealAffinityMap& a);

struct AffinityLossTerms {
  double unary = 0.0;
  double global = 0.0;
  double precision_sum = 0.0;
  double recall_sum = 0.0;
  double specificity_sum = 0.0;
  double total = 0.0;
  double lambda_u = 1.0;
  double lambda_g = 1.0;
};

// Graph outputs of the affinity loss plus scalar diagnostics. For a batch the
// scalars are means over the images that have at least one valid pixel.
template <typename T>
struct AffinityLoss {
  Var<T> total;
  Var<T> unary;
  Var<T> global;
  AffinityLossTerms terms;
};

// Mean binary cross-entropy over entries whose row and column pixels are both
// valid, with p clamped to [eps, 1-eps]. prior is [N,N] or [B,N,N] with one
// map per batch element.
template <typename T>
Var<T> unary_affinity_loss(Var<T> prior, std::span<const IdealAffinityMap> targets);

// Row-wise precision / recall / specificity log terms:
//   Tp_j = log(Σ a p / Σ p), Tr_j = log(Σ a p / Σ a), Ts_j = log(Σ (1-a)(1-p) / Σ (1-a))
// summed over valid columns, ratios clamped to [eps, 1], a term with a zero
// denominator skipped; L_g = -(1/N_valid) Σ_j (Tp_j + Tr_j + Ts_j).
// When sums is non-null it receives the batch-mean Σ_j Tp, Σ_j Tr, Σ_j Ts.
template <typename T>
Var<T> global_affinity_loss(Var<T> prior, std::span<const IdealAffinityMap> targets,
                            std::array<double, 3>* sums = nullptr);

// lambda_u * L_u + lambda_g * L_g.
template <typename T>
AffinityLoss<T> affinity_loss(Var<T> prior, std::span<const IdealAffinityMap> targets,
                              double lambda_u = 1.0, double lambda_g = 1.0);

}  // namespace cpnet
