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

#include "cpnet/affinity.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "cpnet/io.hpp"
#include "cpnet/ops.hpp"
#include "gemm.hpp"

namespace cpnet {

int64_t IdealAffinityMap::valid_count() const {
  return std::count(valid.begin(), valid.end(), uint8_t{1});
}

LabelMap downsample_labels(const LabelMap& gt, int64_t out_h, int64_t out_w) {
  if (out_h < 1 || out_w < 1 || gt.height % out_h != 0 || gt.width % out_w != 0) {
    throw DimensionError("downsample_labels: " + std::to_string(gt.height) + "x" +
                         std::to_string(gt.width) + " -> " + std::to_string(out_h) + "x" +
                         std::to_string(out_w) + " is not an integer stride");
  }
  const int64_t sh = gt.height / out_h;
  const int64_t sw = gt.width / out_w;
  LabelMap out(out_h, out_w, 0, gt.ignore_index);
  for (int64_t i = 0; i < out_h; ++i) {
    for (int64_t j = 0; j < out_w; ++j) out.at(i, j) = gt.at(i * sh, j * sw);
  }
  return out;
}

IdealAffinityMap ideal_affinity_map(const LabelMap& gt_small, int num_classes) {
  const Tensor<double> encoded = one_hot<double>(gt_small, num_classes);
  const int64_t n = gt_small.size();
  // [N,C] x [N,C]^T
  std::vector<double> product(static_cast<std::size_t>(n * n));
  detail::gemm_nt<double>(n, n, num_classes, encoded.raw(), num_classes, encoded.raw(), num_classes,
                          product.data(), n, false);
  IdealAffinityMap a;
  a.n = n;
  a.values = Tensor<uint8_t>(Shape{n, n});
  for (int64_t i = 0; i < n * n; ++i) a.values[i] = product[static_cast<std::size_t>(i)] > 0.5 ? 1 : 0;
  a.valid.resize(static_cast<std::size_t>(n));
  for (int64_t i = 0; i < n; ++i) a.valid[static_cast<std::size_t>(i)] = gt_small.ignored(i) ? 0 : 1;
  return a;
}

void write_affinity_pgm(const std::filesystem::path& path, const IdealAffinityMap& a) {
  std::vector<uint8_t> pixels(a.values.storage().size());
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = a.values.storage()[i] ? 255 : 0;
  write_pgm(path, a.n, a.n, pixels);
}

namespace {

struct PriorLayout {
  int64_t batch;
  int64_t n;
};

PriorLayout prior_layout(const Shape& s, std::span<const IdealAffinityMap> targets, const char* op) {
  PriorLayout l{};
  if (s.size() == 2 && s[0] == s[1]) {
    l = {1, s[0]};
  } else if (s.size() == 3 && s[1] == s[2]) {
    l = {s[0], s[1]};
  } else {
    throw DimensionError(std::string(op) + ": prior must be [N,N] or [B,N,N], got " + shape_to_string(s));
  }
  if (static_cast<int64_t>(targets.size()) != l.batch) {
    throw DimensionError(std::string(op) + ": " + std::to_string(targets.size()) +
                         " affinity maps for a batch of " + std::to_string(l.batch));
  }
  for (const IdealAffinityMap& a : targets) {
    if (a.n != l.n) {
      throw DimensionError(std::string(op) + ": affinity map has N=" + std::to_string(a.n) +
                           " but prior has N=" + std::to_string(l.n));
    }
  }
  return l;
}

int64_t images_with_valid_pixels(std::span<const IdealAffinityMap> targets, const char* op) {
  int64_t used = 0;
  for (const IdealAffinityMap& a : targets) used += a.valid_count() > 0 ? 1 : 0;
  if (used == 0) throw NumericError(std::string(op) + ": no valid rows");
  return used;
}

}  // namespace

template <typename T>
Var<T> unary_affinity_loss(Var<T> prior, std::span<const IdealAffinityMap> targets) {
  const PriorLayout l = prior_layout(prior.shape(), targets, "unary_affinity_loss");
  const int64_t used = images_with_valid_pixels(targets, "unary_affinity_loss");
  const double lo = kAffinityEps;
  const double hi = 1.0 - kAffinityEps;
  const Tensor<T>& p = prior.value();
  double total = 0.0;
  for (int64_t b = 0; b < l.batch; ++b) {
    const IdealAffinityMap& a = targets[static_cast<std::size_t>(b)];
    const int64_t nv = a.valid_count();
    if (nv == 0) continue;
    double acc = 0.0;
    for (int64_t i = 0; i < l.n; ++i) {
      if (!a.valid[static_cast<std::size_t>(i)]) continue;
      for (int64_t j = 0; j < l.n; ++j) {
        if (!a.valid[static_cast<std::size_t>(j)]) continue;
        const double pv = std::clamp(static_cast<double>(p[(b * l.n + i) * l.n + j]), lo, hi);
        acc += a.values[i * l.n + j] ? std::log(pv) : std::log(1.0 - pv);
      }
    }
    total += -acc / static_cast<double>(nv * nv);
  }
  std::vector<IdealAffinityMap> kept(targets.begin(), targets.end());
  return prior.graph->record(
      Tensor<T>(Shape{}, static_cast<T>(total / static_cast<double>(used))), {prior},
      [prior, kept, l, used, lo, hi](Graph<T>& gr, const Tensor<T>& d) {
        Tensor<T> dp(prior.shape());
        const Tensor<T>& p = prior.value();
        for (int64_t b = 0; b < l.batch; ++b) {
          const IdealAffinityMap& a = kept[static_cast<std::size_t>(b)];
          const int64_t nv = a.valid_count();
          if (nv == 0) continue;
          const double scale = static_cast<double>(d[0]) / static_cast<double>(used * nv * nv);
          for (int64_t i = 0; i < l.n; ++i) {
            if (!a.valid[static_cast<std::size_t>(i)]) continue;
            for (int64_t j = 0; j < l.n; ++j) {
              if (!a.valid[static_cast<std::size_t>(j)]) continue;
              const int64_t idx = (b * l.n + i) * l.n + j;
              const double pv = static_cast<double>(p[idx]);
              if (pv < lo || pv > hi) continue;
              const double g = a.values[i * l.n + j] ? -1.0 / pv : 1.0 / (1.0 - pv);
              dp[idx] = static_cast<T>(g * scale);
            }
          }
        }
        gr.accumulate(prior, dp);
      });
}

namespace {

// Per-row sums over valid columns for one image.
struct RowSums {
  double ap = 0.0;   // Σ a p
  double p = 0.0;    // Σ p
  double a = 0.0;    // Σ a
  double nn = 0.0;   // Σ (1-a)(1-p)
  double na = 0.0;   // Σ (1-a)
};

template <typename T>
RowSums row_sums(const T* prow, const IdealAffinityMap& a, int64_t row) {
  RowSums s;
  for (int64_t i = 0; i < a.n; ++i) {
    if (!a.valid[static_cast<std::size_t>(i)]) continue;
    const double pv = static_cast<double>(prow[i]);
    const double av = a.values[row * a.n + i] ? 1.0 : 0.0;
    s.ap += av * pv;
    s.p += pv;
    s.a += av;
    s.nn += (1.0 - av) * (1.0 - pv);
    s.na += 1.0 - av;
  }
  return s;
}

// A ratio contributes log(clamp(r, eps, 1)); its gradient vanishes when the
// clamp is active.
struct LogRatio {
  bool active = false;  // denominator non-zero
  bool clamped = false;
  double value = 0.0;
};

LogRatio log_ratio(double num, double den) {
  LogRatio r;
  if (den <= 0.0) return r;
  r.active = true;
  const double ratio = num / den;
  r.clamped = ratio < kAffinityEps || ratio > 1.0;
  r.value = std::log(std::clamp(ratio, kAffinityEps, 1.0));
  return r;
}

}  // namespace

template <typename T>
Var<T> global_affinity_loss(Var<T> prior, std::span<const IdealAffinityMap> targets,
                            std::array<double, 3>* sums) {
  const PriorLayout l = prior_layout(prior.shape(), targets, "global_affinity_loss");
  const int64_t used = images_with_valid_pixels(targets, "global_affinity_loss");
  const Tensor<T>& p = prior.value();
  double total = 0.0;
  std::array<double, 3> acc_sums{0.0, 0.0, 0.0};
  for (int64_t b = 0; b < l.batch; ++b) {
    const IdealAffinityMap& a = targets[static_cast<std::size_t>(b)];
    const int64_t nv = a.valid_count();
    if (nv == 0) continue;
    double tp = 0.0, tr = 0.0, ts = 0.0;
    for (int64_t j = 0; j < l.n; ++j) {
      if (!a.valid[static_cast<std::size_t>(j)]) continue;
      const RowSums s = row_sums(p.raw() + (b * l.n + j) * l.n, a, j);
      tp += log_ratio(s.ap, s.p).value;
      tr += log_ratio(s.ap, s.a).value;
      ts += log_ratio(s.nn, s.na).value;
    }
    acc_sums[0] += tp;
    acc_sums[1] += tr;
    acc_sums[2] += ts;
    total += -(tp + tr + ts) / static_cast<double>(nv);
  }
  if (sums != nullptr) {
    for (double& v : acc_sums) v /= static_cast<double>(used);
    *sums = acc_sums;
  }
  std::vector<IdealAffinityMap> kept(targets.begin(), targets.end());
  return prior.graph->record(
      Tensor<T>(Shape{}, static_cast<T>(total / static_cast<double>(used))), {prior},
      [prior, kept, l, used](Graph<T>& gr, const Tensor<T>& d) {
        Tensor<T> dp(prior.shape());
        const Tensor<T>& p = prior.value();
        for (int64_t b = 0; b < l.batch; ++b) {
          const IdealAffinityMap& a = kept[static_cast<std::size_t>(b)];
          const int64_t nv = a.valid_count();
          if (nv == 0) continue;
          const double scale = -static_cast<double>(d[0]) / static_cast<double>(used * nv);
          for (int64_t j = 0; j < l.n; ++j) {
            if (!a.valid[static_cast<std::size_t>(j)]) continue;
            const T* prow = p.raw() + (b * l.n + j) * l.n;
            const RowSums s = row_sums(prow, a, j);
            const LogRatio rp = log_ratio(s.ap, s.p);
            const LogRatio rr = log_ratio(s.ap, s.a);
            const LogRatio rs = log_ratio(s.nn, s.na);
            const bool use_p = rp.active && !rp.clamped;
            const bool use_r = rr.active && !rr.clamped;
            const bool use_s = rs.active && !rs.clamped;
            T* drow = dp.raw() + (b * l.n + j) * l.n;
            for (int64_t i = 0; i < l.n; ++i) {
              if (!a.valid[static_cast<std::size_t>(i)]) continue;
              const double av = a.values[j * l.n + i] ? 1.0 : 0.0;
              double g = 0.0;
              if (use_p) g += av / s.ap - 1.0 / s.p;
              if (use_r) g += av / s.ap;
              if (use_s) g += -(1.0 - av) / s.nn;
              drow[i] = static_cast<T>(g * scale);
            }
          }
        }
        gr.accumulate(prior, dp);
      });
}

template <typename T>
AffinityLoss<T> affinity_loss(Var<T> prior, std::span<const IdealAffinityMap> targets,
                              double lambda_u, double lambda_g) {
  AffinityLoss<T> out;
  std::array<double, 3> sums{};
  out.unary = unary_affinity_loss(prior, targets);
  out.global = global_affinity_loss(prior, targets, &sums);
  out.total = linear_combination<T>({out.unary, out.global}, {lambda_u, lambda_g});
  out.terms.unary = static_cast<double>(out.unary.value()[0]);
  out.terms.global = static_cast<double>(out.global.value()[0]);
  out.terms.precision_sum = sums[0];
  out.terms.recall_sum = sums[1];
  out.terms.specificity_sum = sums[2];
  out.terms.total = static_cast<double>(out.total.value()[0]);
  out.terms.lambda_u = lambda_u;
  out.terms.lambda_g = lambda_g;
  return out;
}

#define CPNET_INSTANTIATE_AFFINITY(T)                                                                \
  template Var<T> unary_affinity_loss<T>(Var<T>, std::span<const IdealAffinityMap>);                 \
  template Var<T> global_affinity_loss<T>(Var<T>, std::span<const IdealAffinityMap>,                 \
                                          std::array<double, 3>*);                                   \
  template AffinityLoss<T> affinity_loss<T>(Var<T>, std::span<const IdealAffinityMap>, double, double);

CPNET_INSTANTIATE_AFFINITY(float)
CPNET_INSTANTIATE_AFFINITY(double)

}  // namespace cpnet
