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

#include "cpnet/context_prior.hpp"

namespace cpnet {

template <typename T>
FullySeparableConv<T>::FullySeparableConv(const std::string& name, SeparableAxis axis_, int k_,
                                          int64_t c_in_, int64_t c_out_, Rng& rng)
    : axis(axis_), k(k_), c_in(c_in_), c_out(c_out_) {
  if (k < 1 || k % 2 == 0) {
    throw ValueError("fully separable convolution needs an odd kernel size, got " + std::to_string(k));
  }
  Conv2dOptions dw;
  dw.groups = static_cast<int>(c_in);
  const bool vertical = axis == SeparableAxis::kVertical;
  dw.pad_h = vertical ? (k - 1) / 2 : 0;
  dw.pad_w = vertical ? 0 : (k - 1) / 2;
  depthwise = Conv2d<T>(name + ".depthwise", c_in, c_in, vertical ? k : 1, vertical ? 1 : k, dw,
                        false, rng);
  pointwise = Conv2d<T>(name + ".pointwise", c_in, c_out, 1, 1, Conv2dOptions{}, false, rng);
}

template <typename T>
Var<T> FullySeparableConv<T>::forward(Graph<T>& g, Var<T> x) {
  if (x.shape().size() != 4 || x.shape()[1] != c_in) {
    throw DimensionError("fully separable convolution expects [B," + std::to_string(c_in) +
                         ",H,W], got " + shape_to_string(x.shape()));
  }
  return pointwise.forward(g, depthwise.forward(g, x));
}

template <typename T>
void FullySeparableConv<T>::collect(StateRefs<T>& refs) {
  depthwise.collect(refs);
  pointwise.collect(refs);
}

int64_t standard_conv_macs(int64_t h, int64_t w, int k, int64_t c_in, int64_t c_out) {
  return h * w * k * k * c_in * c_out;
}

int64_t spatial_separable_macs(int64_t h, int64_t w, int k, int64_t c_in, int64_t c_out) {
  return h * w * k * c_in * c_out + h * w * k * c_out * c_out;
}

int64_t fully_separable_macs(int64_t batch, int64_t h, int64_t w, int k, int64_t c_in, int64_t c_out) {
  return batch * h * w * (k * c_in + c_in * c_out);
}

template <typename T>
AggregationModule<T>::AggregationModule(const std::string& name, int k_, int64_t c_in_,
                                        int64_t c_out_, Rng& rng)
    : k(k_),
      c_in(c_in_),
      c_out(c_out_),
      vertical(name + ".fsconv_v", SeparableAxis::kVertical, k_, c_in_, c_out_, rng),
      bn_vertical(name + ".bn_v", c_out_),
      horizontal(name + ".fsconv_h", SeparableAxis::kHorizontal, k_, c_out_, c_out_, rng),
      bn_horizontal(name + ".bn_h", c_out_) {}

template <typename T>
Var<T> AggregationModule<T>::forward(Graph<T>& g, Var<T> x, Mode mode) {
  Var<T> h = relu(bn_vertical.forward(g, vertical.forward(g, x), mode));
  return relu(bn_horizontal.forward(g, horizontal.forward(g, h), mode));
}

template <typename T>
void AggregationModule<T>::collect(StateRefs<T>& refs) {
  vertical.collect(refs);
  bn_vertical.collect(refs);
  horizontal.collect(refs);
  bn_horizontal.collect(refs);
}

template <typename T>
int64_t AggregationModule<T>::macs(int64_t batch, int64_t h, int64_t w) const {
  return fully_separable_macs(batch, h, w, k, c_in, c_out) +
         fully_separable_macs(batch, h, w, k, c_out, c_out);
}

template <typename T>
PriorHead<T>::PriorHead(const std::string& name, int64_t c_in, int64_t feature_h, int64_t feature_w,
                        Rng& rng)
    : n(feature_h * feature_w),
      conv(name + ".conv", c_in, feature_h * feature_w, 1, 1, Conv2dOptions{}, false, rng),
      bn(name + ".bn", feature_h * feature_w) {}

template <typename T>
Var<T> PriorHead<T>::forward(Graph<T>& g, Var<T> x, Mode mode) {
  const Shape s = x.shape();
  if (s.size() != 4 || s[2] * s[3] != n) {
    throw DimensionError("prior head configured for N=" + std::to_string(n) +
                         " positions, got feature map " + shape_to_string(s));
  }
  const int64_t batch = s[0];
  Var<T> logits = bn.forward(g, conv.forward(g, x), mode);  // [B,N,H,W]
  Var<T> p = sigmoid(logits);
  // channel j at position i  ->  prior[b][i][j]
  return transpose(reshape(p, Shape{batch, n, n}));
}

template <typename T>
void PriorHead<T>::collect(StateRefs<T>& refs) {
  conv.collect(refs);
  bn.collect(refs);
}

template <typename T>
ContextPriorOutput<T> apply_context_prior(Var<T> x, Var<T> aggregated, Var<T> prior) {
  const Shape s = aggregated.shape();
  if (s.size() != 4) throw DimensionError("context prior expects [B,C1,H,W] features");
  const int64_t batch = s[0];
  const int64_t c1 = s[1];
  const int64_t n = s[2] * s[3];
  if (prior.shape() != Shape{batch, n, n}) {
    throw DimensionError("prior " + shape_to_string(prior.shape()) + " does not match features " +
                         shape_to_string(s));
  }
  if (x.shape().size() != 4 || x.shape()[0] != batch || x.shape()[2] != s[2] || x.shape()[3] != s[3]) {
    throw DimensionError("input features " + shape_to_string(x.shape()) +
                         " do not match aggregated features " + shape_to_string(s));
  }
  Var<T> rows = transpose(reshape(aggregated, Shape{batch, c1, n}));  // [B,N,C1]
  Var<T> intra = matmul(prior, rows);
  Var<T> inter = matmul(affine(prior, -1.0, 1.0), rows);
  auto to_map = [&](Var<T> v) { return reshape(transpose(v), s); };
  ContextPriorOutput<T> out;
  out.prior = prior;
  out.aggregated = aggregated;
  out.intra = to_map(intra);
  out.inter = to_map(inter);
  out.features = concat<T>({x, out.intra, out.inter}, 1);
  return out;
}

template <typename T>
ContextPriorLayer<T>::ContextPriorLayer(const std::string& name, int k, int64_t c0, int64_t c1,
                                        int64_t feature_h, int64_t feature_w, Rng& rng)
    : aggregation(name + ".aggregation", k, c0, c1, rng),
      prior_head(name + ".prior_head", c1, feature_h, feature_w, rng) {}

template <typename T>
ContextPriorOutput<T> ContextPriorLayer<T>::forward(Graph<T>& g, Var<T> x, Mode mode) {
  Var<T> agg = aggregation.forward(g, x, mode);
  Var<T> prior = prior_head.forward(g, agg, mode);
  return apply_context_prior(x, agg, prior);
}

template <typename T>
void ContextPriorLayer<T>::collect(StateRefs<T>& refs) {
  aggregation.collect(refs);
  prior_head.collect(refs);
}

template struct FullySeparableConv<float>;
template struct FullySeparableConv<double>;
template struct AggregationModule<float>;
template struct AggregationModule<double>;
template struct PriorHead<float>;
template struct PriorHead<double>;
template struct ContextPriorLayer<float>;
template struct ContextPriorLayer<double>;
template ContextPriorOutput<float> apply_context_prior<float>(Var<float>, Var<float>, Var<float>);
template ContextPriorOutput<double> apply_context_prior<double>(Var<double>, Var<double>, Var<double>);

}  // namespace cpnet
