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
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cpnet/config.hpp"
#include "cpnet/metrics.hpp"
#include "cpnet/network.hpp"

namespace cpnet {

// gamma0 * (1 - step/total)^power for 0 <= step <= total (total 0 gives
// gamma0). ValueError outside that range.
double poly_lr(int64_t step, int64_t total, double gamma0, double power = 0.9);

template <typename T>
struct OptimizerState {
  std::vector<Tensor<T>> velocity;  // one per parameter, same shape
  int64_t step = 0;
};

// Classic SGD with momentum, weight decay folded into the gradient:
//   g' = g + wd*theta (only for params with decay), v = m*v + g', theta -= lr*v.
// Velocities are created as zeros on the first call. Arithmetic is done in
// double and rounded once per element.
template <typename T>
void sgd_momentum_step(std::span<Parameter<T>* const> params, OptimizerState<T>& state, double lr,
                       double momentum, double weight_decay);

struct StepLog {
  int64_t step = 0;  // 1-based iteration index
  double lr = 0.0;
  TotalLossTerms terms;
};

// `step,lr,L_s,L_a,L_u,L_g,total` header and rows with %.9g values.
std::string train_csv_header();
std::string train_csv_row(const StepLog& log);

struct EvalLog {
  int64_t step = 0;
  double pix_acc = 0.0;
  double mean_iou = 0.0;
};

struct TrainResult {
  std::vector<StepLog> history;
  std::vector<EvalLog> evals;
  std::unique_ptr<CPNet<float>> model;
  std::filesystem::path checkpoint_dir;
  Rng::State rng_state{};  // data RNG after the last step
};

using StepCallback = std::function<void(const StepLog&)>;

// Seeded loop over cfg.total_iterations. Each step draws batch_size fresh
// scenes (scene seed = train_seed ^ (step*batch_size + b)), augments them with
// a single data RNG stream, runs forward + total loss + backward and one SGD
// step at the poly learning rate. Writes <out>/train_log.csv, optionally
// <out>/eval_log.csv, and the final checkpoint in <out>/checkpoint. A
// non-finite loss raises NumericError naming the batch seeds (also written to
// <out>/nonfinite_batch.txt).
TrainResult train(const TrainConfig& cfg, const std::filesystem::path& out_dir, const StepCallback& on_step = {});

// Held-out scenes: seed val_seed ^ i for i < val_count, no augmentation.
std::vector<SyntheticScene> validation_scenes(const TrainConfig& cfg);

// Class probabilities [C,H,W] for one image [3,H,W], averaged over the
// given scales (and mirrored inputs when flip is set). Every pass is run with
// BN running statistics over crop-sized sliding windows of the zero-padded,
// resized image (the prior head fixes the spatial size); window outputs are
// softmaxed and averaged where they overlap.
Tensor<float> predict_probabilities(CPNet<float>& model, const Tensor<float>& image,
                                    std::span<const double> scales, bool flip);
LabelMap predict_labels(CPNet<float>& model, const Tensor<float>& image, std::span<const double> scales,
                        bool flip);

struct EvalMetrics {
  double pix_acc = 0.0;
  double mean_iou = 0.0;
  ConfusionMatrix confusion{1};
};

EvalMetrics evaluate(CPNet<float>& model, std::span<const SyntheticScene> scenes, std::span<const double> scales,
                     bool flip);

struct PriorAgreement {
  int64_t valid_entries = 0;
  int64_t agreeing = 0;
  double fraction() const {
    return valid_entries > 0 ? static_cast<double>(agreeing) / static_cast<double>(valid_entries) : 0.0;
  }
};

// Counts valid (i,j) entries where (prior > 0.5) matches the ideal map.
PriorAgreement prior_agreement(const Tensor<float>& prior, const IdealAffinityMap& target);

// Prior map and ideal affinity for the model-input-sized centre of a scene
// (smaller scenes are centred on a zero image with ignored labels).
struct PriorSample {
  Tensor<float> prior;  // [N,N]
  IdealAffinityMap target;
  LabelMap prediction;
  SyntheticScene scene;  // the centred window
};
PriorSample sample_prior(CPNet<float>& model, const SyntheticScene& scene);

// Writes prior.pgm (P), prior_inverse.pgm (1-P), affinity.pgm (ideal map),
// input.ppm, labels.ppm and prediction.ppm into out_dir.
PriorAgreement dump_prior(CPNet<float>& model, const SyntheticScene& scene, const std::filesystem::path& out_dir);

}  // namespace cpnet
