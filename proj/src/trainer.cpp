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

#include "cpnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cpnet/checkpoint.hpp"
#include "cpnet/io.hpp"
#include "cpnet/parallel.hpp"

namespace cpnet {

double poly_lr(int64_t step, int64_t total, double gamma0, double power) {
  if (step < 0 || step > total) {
    throw ValueError("poly_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
  }
  if (total == 0) return gamma0;
  return gamma0 * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total), power);
}

template <typename T>
void sgd_momentum_step(std::span<Parameter<T>* const> params, OptimizerState<T>& state, double lr,
                       double momentum, double weight_decay) {
  if (state.velocity.empty()) {
    for (Parameter<T>* p : params) state.velocity.emplace_back(p->value.shape());
  }
  if (state.velocity.size() != params.size()) {
    throw DimensionError("optimizer state holds " + std::to_string(state.velocity.size()) +
                         " velocities for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    Tensor<T>& v = state.velocity[i];
    if (p.grad.shape() != p.value.shape() || v.shape() != p.value.shape()) {
      throw DimensionError("parameter " + p.name + ": value " + shape_to_string(p.value.shape()) + ", grad " +
                           shape_to_string(p.grad.shape()) + ", velocity " + shape_to_string(v.shape()));
    }
    const double wd = p.decay ? weight_decay : 0.0;
    T* theta = p.value.raw();
    const T* grad = p.grad.raw();
    T* vel = v.raw();
    for (int64_t j = 0; j < p.value.numel(); ++j) {
      const double g = static_cast<double>(grad[j]) + wd * static_cast<double>(theta[j]);
      const double nv = momentum * static_cast<double>(vel[j]) + g;
      vel[j] = static_cast<T>(nv);
      theta[j] = static_cast<T>(static_cast<double>(theta[j]) - lr * nv);
    }
  }
  ++state.step;
}

template void sgd_momentum_step<float>(std::span<Parameter<float>* const>, OptimizerState<float>&, double, double,
                                       double);
template void sgd_momentum_step<double>(std::span<Parameter<double>* const>, OptimizerState<double>&, double,
                                        double, double);

std::string train_csv_header() { return "step,lr,L_s,L_a,L_u,L_g,total\n"; }

std::string train_csv_row(const StepLog& log) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(log.step), log.lr,
                log.terms.seg, log.terms.aux, log.terms.unary, log.terms.global, log.terms.total);
  return buf;
}

std::vector<SyntheticScene> validation_scenes(const TrainConfig& cfg) {
  const SceneConfig sc = cfg.scene();
  std::vector<SyntheticScene> scenes(static_cast<std::size_t>(cfg.val_count));
  parallel_for(cfg.val_count, [&](int64_t i) {
    scenes[static_cast<std::size_t>(i)] = gen_synthetic_scene(derive_seed(cfg.val_seed, static_cast<uint64_t>(i)), sc);
  });
  return scenes;
}

namespace {

std::vector<int64_t> window_starts(int64_t extent, int64_t window) {
  std::vector<int64_t> starts{0};
  const int64_t stride = std::max<int64_t>(1, window / 2);
  while (starts.back() + window < extent) starts.push_back(std::min(starts.back() + stride, extent - window));
  return starts;
}

// Softmax probabilities [C,h,w] of one image [3,h,w] at its own size.
Tensor<float> window_probabilities(CPNet<float>& model, const Tensor<float>& image) {
  const NetworkConfig& nc = model.config();
  const int64_t h = image.dim(1);
  const int64_t w = image.dim(2);
  const int64_t wh = nc.input_h;
  const int64_t ww = nc.input_w;
  const int64_t ph = std::max(h, wh);
  const int64_t pw = std::max(w, ww);
  const std::vector<int64_t> ys = window_starts(ph, wh);
  const std::vector<int64_t> xs = window_starts(pw, ww);
  const auto count = static_cast<int64_t>(ys.size() * xs.size());

  Tensor<float> batch(Shape{count, 3, wh, ww});
  int64_t b = 0;
  for (int64_t y0 : ys) {
    for (int64_t x0 : xs) {
      for (int64_t c = 0; c < 3; ++c) {
        for (int64_t y = 0; y < wh; ++y) {
          const int64_t sy = y0 + y;
          if (sy >= h) break;
          for (int64_t x = 0; x < ww && x0 + x < w; ++x) {
            batch[((b * 3 + c) * wh + y) * ww + x] = image[(c * h + sy) * w + x0 + x];
          }
        }
      }
      ++b;
    }
  }

  Graph<float> g;
  const NetworkOutput<float> out = model.forward(g, g.constant(std::move(batch)), Mode::kEval);
  const Tensor<float> probs = softmax_channels(out.logits.value());
  const int64_t classes = probs.dim(1);

  std::vector<double> acc(static_cast<std::size_t>(classes * h * w), 0.0);
  std::vector<int32_t> hits(static_cast<std::size_t>(h * w), 0);
  b = 0;
  for (int64_t y0 : ys) {
    for (int64_t x0 : xs) {
      for (int64_t y = 0; y < wh && y0 + y < h; ++y) {
        for (int64_t x = 0; x < ww && x0 + x < w; ++x) {
          const int64_t pix = (y0 + y) * w + x0 + x;
          ++hits[static_cast<std::size_t>(pix)];
          for (int64_t c = 0; c < classes; ++c) {
            acc[static_cast<std::size_t>(c * h * w + pix)] += probs[((b * classes + c) * wh + y) * ww + x];
          }
        }
      }
      ++b;
    }
  }
  Tensor<float> result(Shape{classes, h, w});
  for (int64_t c = 0; c < classes; ++c) {
    for (int64_t pix = 0; pix < h * w; ++pix) {
      result[c * h * w + pix] =
          static_cast<float>(acc[static_cast<std::size_t>(c * h * w + pix)] / hits[static_cast<std::size_t>(pix)]);
    }
  }
  return result;
}

Tensor<float> mirror(const Tensor<float>& t) {
  const int64_t ch = t.dim(0);
  const int64_t h = t.dim(1);
  const int64_t w = t.dim(2);
  Tensor<float> out(t.shape());
  for (int64_t c = 0; c < ch; ++c) {
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) out[(c * h + y) * w + x] = t[(c * h + y) * w + (w - 1 - x)];
    }
  }
  return out;
}

Tensor<float> resize_chw(const Tensor<float>& t, int64_t out_h, int64_t out_w) {
  if (t.dim(1) == out_h && t.dim(2) == out_w) return t;
  const Shape four{1, t.dim(0), t.dim(1), t.dim(2)};
  return resize_bilinear_value(t.reshaped(four), out_h, out_w).reshaped(Shape{t.dim(0), out_h, out_w});
}

// Centre crop (or centre pad with zeros / ignore) to h x w.
SyntheticScene fit_centered(const SyntheticScene& scene, int64_t h, int64_t w) {
  const int64_t sh = scene.labels.height;
  const int64_t sw = scene.labels.width;
  if (sh == h && sw == w) return scene;
  SyntheticScene out;
  out.seed = scene.seed;
  out.image = Tensor<float>(Shape{3, h, w});
  out.labels = LabelMap(h, w, scene.labels.ignore_index, scene.labels.ignore_index);
  const int64_t dy = (sh - h) / 2;
  const int64_t dx = (sw - w) / 2;
  for (int64_t y = 0; y < h; ++y) {
    const int64_t sy = y + dy;
    if (sy < 0 || sy >= sh) continue;
    for (int64_t x = 0; x < w; ++x) {
      const int64_t sx = x + dx;
      if (sx < 0 || sx >= sw) continue;
      out.labels.at(y, x) = scene.labels.at(sy, sx);
      for (int64_t c = 0; c < 3; ++c) out.image[(c * h + y) * w + x] = scene.image[(c * sh + sy) * sw + sx];
    }
  }
  return out;
}

LabelMap argmax_labels(const Tensor<float>& probs) {
  const int64_t classes = probs.dim(0);
  const int64_t h = probs.dim(1);
  const int64_t w = probs.dim(2);
  LabelMap out(h, w, 0);
  for (int64_t pix = 0; pix < h * w; ++pix) {
    int32_t best = 0;
    for (int64_t c = 1; c < classes; ++c) {
      if (probs[c * h * w + pix] > probs[best * h * w + pix]) best = static_cast<int32_t>(c);
    }
    out.labels[static_cast<std::size_t>(pix)] = best;
  }
  return out;
}

}  // namespace

Tensor<float> predict_probabilities(CPNet<float>& model, const Tensor<float>& image, std::span<const double> scales,
                                    bool flip) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("predict expects a [3,H,W] image, got " + shape_to_string(image.shape()));
  }
  if (scales.empty()) throw ValueError("predict needs at least one scale");
  const int64_t h = image.dim(1);
  const int64_t w = image.dim(2);
  Tensor<float> total;
  int passes = 0;
  for (double s : scales) {
    if (!(s > 0.0)) throw ValueError("inference scales must be positive");
    const auto sh = std::max<int64_t>(1, std::llround(static_cast<double>(h) * s));
    const auto sw = std::max<int64_t>(1, std::llround(static_cast<double>(w) * s));
    const Tensor<float> scaled = resize_chw(image, sh, sw);
    for (int f = 0; f < (flip ? 2 : 1); ++f) {
      Tensor<float> probs = f == 0 ? window_probabilities(model, scaled) : mirror(window_probabilities(model, mirror(scaled)));
      probs = resize_chw(probs, h, w);
      if (total.empty()) {
        total = std::move(probs);
      } else {
        for (int64_t i = 0; i < total.numel(); ++i) total[i] += probs[i];
      }
      ++passes;
    }
  }
  for (float& v : total.data()) v /= static_cast<float>(passes);
  return total;
}

LabelMap predict_labels(CPNet<float>& model, const Tensor<float>& image, std::span<const double> scales, bool flip) {
  return argmax_labels(predict_probabilities(model, image, scales, flip));
}

EvalMetrics evaluate(CPNet<float>& model, std::span<const SyntheticScene> scenes, std::span<const double> scales,
                     bool flip) {
  if (scenes.empty()) throw ValueError("evaluation needs at least one scene");
  EvalMetrics m;
  m.confusion = ConfusionMatrix(model.config().num_classes);
  for (const SyntheticScene& s : scenes) {
    LabelMap pred = predict_labels(model, s.image, scales, flip);
    pred.ignore_index = s.labels.ignore_index;
    m.confusion.add(pred, s.labels);
  }
  m.pix_acc = m.confusion.pix_acc();
  m.mean_iou = m.confusion.mean_iou();
  return m;
}

PriorAgreement prior_agreement(const Tensor<float>& prior, const IdealAffinityMap& target) {
  const int64_t n = target.n;
  if (prior.shape() != Shape{n, n}) {
    throw DimensionError("prior " + shape_to_string(prior.shape()) + " does not match affinity map of size " +
                         std::to_string(n));
  }
  PriorAgreement a;
  for (int64_t i = 0; i < n; ++i) {
    if (!target.valid[static_cast<std::size_t>(i)]) continue;
    for (int64_t j = 0; j < n; ++j) {
      if (!target.valid[static_cast<std::size_t>(j)]) continue;
      ++a.valid_entries;
      const bool same = (prior[i * n + j] > 0.5f);
      if (same == (target.values[i * n + j] != 0)) ++a.agreeing;
    }
  }
  return a;
}

PriorSample sample_prior(CPNet<float>& model, const SyntheticScene& scene) {
  const NetworkConfig& nc = model.config();
  if (!nc.use_context_prior) throw ValueError("model was built without the context prior branch");
  PriorSample s;
  s.scene = fit_centered(scene, nc.input_h, nc.input_w);
  Graph<float> g;
  const Shape four{1, 3, nc.input_h, nc.input_w};
  const NetworkOutput<float> out = model.forward(g, g.constant(s.scene.image.reshaped(four)), Mode::kEval);
  const int64_t n = nc.feature_h() * nc.feature_w();
  s.prior = out.prior->value().reshaped(Shape{n, n});
  const Tensor<float> probs = softmax_channels(out.logits.value());
  s.prediction = argmax_labels(probs.reshaped(Shape{probs.dim(1), probs.dim(2), probs.dim(3)}));
  s.target = ideal_affinity_map(downsample_labels(s.scene.labels, nc.feature_h(), nc.feature_w()), nc.num_classes);
  return s;
}

PriorAgreement dump_prior(CPNet<float>& model, const SyntheticScene& scene, const std::filesystem::path& out_dir) {
  const PriorSample s = sample_prior(model, scene);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  const int64_t n = s.target.n;
  std::vector<uint8_t> p(static_cast<std::size_t>(n * n));
  std::vector<uint8_t> q(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double v = std::clamp(static_cast<double>(s.prior[static_cast<int64_t>(i)]), 0.0, 1.0);
    p[i] = static_cast<uint8_t>(std::lround(255.0 * v));
    q[i] = static_cast<uint8_t>(std::lround(255.0 * (1.0 - v)));
  }
  write_pgm(out_dir / "prior.pgm", n, n, p);
  write_pgm(out_dir / "prior_inverse.pgm", n, n, q);
  write_affinity_pgm(out_dir / "affinity.pgm", s.target);
  write_image_ppm(out_dir / "input.ppm", s.scene.image);
  write_label_ppm(out_dir / "labels.ppm", s.scene.labels);
  write_label_ppm(out_dir / "prediction.ppm", s.prediction);
  return prior_agreement(s.prior, s.target);
}

TrainResult train(const TrainConfig& cfg, const std::filesystem::path& out_dir, const StepCallback& on_step) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  TrainResult result;
  result.model = std::make_unique<CPNet<float>>(cfg.network());
  result.checkpoint_dir = out_dir / "checkpoint";
  CPNet<float>& model = *result.model;
  std::vector<Parameter<float>*> params = model.parameters();
  OptimizerState<float> opt;

  const SceneConfig scene_cfg = cfg.scene();
  const AugmentConfig aug_cfg = cfg.augmentation();
  Rng data_rng(cfg.train_seed ^ 0xD1B54A32D192ED03ULL);

  const std::filesystem::path csv_path = out_dir / "train_log.csv";
  std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  csv << train_csv_header();

  std::vector<SyntheticScene> val;
  std::ofstream eval_csv;
  if (cfg.eval_every > 0) {
    val = validation_scenes(cfg);
    const std::filesystem::path p = out_dir / "eval_log.csv";
    eval_csv.open(p, std::ios::binary | std::ios::trunc);
    if (!eval_csv) throw IoError("cannot write " + p.string());
    eval_csv << "step,pix_acc,mean_iou\n";
  }

  const int64_t batch = cfg.batch_size;
  for (int64_t step = 0; step < cfg.total_iterations; ++step) {
    const double lr = poly_lr(step, cfg.total_iterations, cfg.base_lr, cfg.poly_power);
    const uint64_t first_seed_index = static_cast<uint64_t>(step * batch);
    std::vector<SyntheticScene> scenes(static_cast<std::size_t>(batch));
    parallel_for(batch, [&](int64_t b) {
      scenes[static_cast<std::size_t>(b)] =
          gen_synthetic_scene(derive_seed(cfg.train_seed, first_seed_index + static_cast<uint64_t>(b)), scene_cfg);
    });
    std::vector<LabelMap> labels;
    for (SyntheticScene& s : scenes) {
      s = augment(s, data_rng, aug_cfg);
      labels.push_back(s.labels);
    }
    const Tensor<float> images = stack_images<float>(scenes);

    Graph<float> g;
    ForwardWithLoss<float> fw = forward_with_loss(model, g, images, labels, cfg.loss, Mode::kTrain);
    StepLog log{step + 1, lr, fw.loss.terms};
    if (!std::isfinite(log.terms.total)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << log.step << "; batch scene seeds train_seed ^ [" << first_seed_index
          << ", " << first_seed_index + static_cast<uint64_t>(batch) - 1 << "] =";
      for (int64_t b = 0; b < batch; ++b) {
        msg << ' ' << derive_seed(cfg.train_seed, first_seed_index + static_cast<uint64_t>(b));
      }
      write_text_file(out_dir / "nonfinite_batch.txt", msg.str() + "\n");
      throw NumericError(msg.str());
    }
    model.zero_grad();
    g.backward(fw.loss.total);
    sgd_momentum_step<float>(params, opt, lr, cfg.momentum, cfg.weight_decay);

    csv << train_csv_row(log);
    result.history.push_back(log);
    if (on_step) on_step(log);

    if (cfg.eval_every > 0 && log.step % cfg.eval_every == 0 && !val.empty()) {
      const EvalMetrics m = evaluate(model, val, cfg.eval_scales, cfg.eval_flip);
      result.evals.push_back({log.step, m.pix_acc, m.mean_iou});
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g\n", static_cast<long long>(log.step), m.pix_acc, m.mean_iou);
      eval_csv << buf;
    }
    if (cfg.checkpoint_every > 0 && log.step % cfg.checkpoint_every == 0) {
      save_checkpoint(result.checkpoint_dir, cfg, model, log.step, data_rng.state());
    }
  }
  csv.flush();
  if (!csv) throw IoError("failed writing " + csv_path.string());
  result.rng_state = data_rng.state();
  save_checkpoint(result.checkpoint_dir, cfg, model, cfg.total_iterations, result.rng_state);
  return result;
}

}  // namespace cpnet
