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

#include "cpnet/network.hpp"

#include <string>

namespace cpnet {

void NetworkConfig::validate() const {
  if (num_classes < 2) throw ValueError("num_classes must be >= 2");
  for (int64_t w : widths) {
    if (w < 1) throw ValueError("stage widths must be positive");
  }
  if (convs_per_stage < 1) throw ValueError("convs_per_stage must be >= 1");
  if (k < 1 || k % 2 == 0) throw ValueError("aggregation kernel size must be odd, got " + std::to_string(k));
  if (c1 < 0 || aux_width < 1) throw ValueError("channel widths must be positive");
  if (input_h < kOutputStride || input_w < kOutputStride || input_h % kOutputStride != 0 ||
      input_w % kOutputStride != 0) {
    throw DimensionError("input size " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                         " is not divisible by 8");
  }
}

template <typename T>
ToyBackbone<T>::ToyBackbone(const NetworkConfig& cfg, Rng& rng) {
  int64_t c_in = 3;
  for (int s = 0; s < kNumStages; ++s) {
    std::vector<Block> blocks;
    for (int b = 0; b < cfg.convs_per_stage; ++b) {
      const std::string name = "backbone.stage" + std::to_string(s + 1) + "." + std::to_string(b);
      Conv2dOptions opt;
      const int dil = kStageDilations[static_cast<std::size_t>(s)];
      opt.stride_h = opt.stride_w = b == 0 ? kStageStrides[static_cast<std::size_t>(s)] : 1;
      opt.pad_h = opt.pad_w = dil;
      opt.dilation_h = opt.dilation_w = dil;
      const int64_t c_out = cfg.widths[static_cast<std::size_t>(s)];
      blocks.push_back(Block{Conv2d<T>(name + ".conv", c_in, c_out, 3, 3, opt, false, rng),
                             BatchNorm<T>(name + ".bn", c_out)});
      c_in = c_out;
    }
    stages.push_back(std::move(blocks));
  }
}

template <typename T>
std::vector<Var<T>> ToyBackbone<T>::forward(Graph<T>& g, Var<T> image, Mode mode) {
  const Shape s = image.shape();
  if (s.size() != 4 || s[1] != 3) throw DimensionError("backbone expects [B,3,H,W], got " + shape_to_string(s));
  if (s[2] % kOutputStride != 0 || s[3] % kOutputStride != 0) {
    throw DimensionError("backbone input " + shape_to_string(s) + " is not divisible by 8");
  }
  std::vector<Var<T>> outs;
  Var<T> h = image;
  for (auto& blocks : stages) {
    for (Block& blk : blocks) h = relu(blk.bn.forward(g, blk.conv.forward(g, h), mode));
    outs.push_back(h);
  }
  return outs;
}

template <typename T>
void ToyBackbone<T>::collect(StateRefs<T>& refs) {
  for (auto& blocks : stages) {
    for (Block& blk : blocks) {
      blk.conv.collect(refs);
      blk.bn.collect(refs);
    }
  }
}

template <typename T>
CPNet<T>::CPNet(const NetworkConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.init_seed);
  backbone = ToyBackbone<T>(cfg_, rng);
  int64_t head_in = cfg_.c0();
  if (cfg_.use_context_prior) {
    context_prior.emplace("context_prior", cfg_.k, cfg_.c0(), cfg_.effective_c1(), cfg_.feature_h(),
                          cfg_.feature_w(), rng);
    head_in = context_prior->output_channels();
  }
  seg_head = Conv2d<T>("seg_head", head_in, cfg_.num_classes, 1, 1, Conv2dOptions{}, true, rng);
  Conv2dOptions pad1;
  pad1.pad_h = pad1.pad_w = 1;
  aux_conv = Conv2d<T>("aux_head.conv", cfg_.widths[3], cfg_.aux_width, 3, 3, pad1, false, rng);
  aux_bn = BatchNorm<T>("aux_head.bn", cfg_.aux_width);
  aux_classifier = Conv2d<T>("aux_head.classifier", cfg_.aux_width, cfg_.num_classes, 1, 1,
                             Conv2dOptions{}, true, rng);
}

template <typename T>
NetworkOutput<T> CPNet<T>::forward(Graph<T>& g, Var<T> image, Mode mode) {
  NetworkOutput<T> out;
  out.stages = backbone.forward(g, image, mode);
  Var<T> top = out.stages[kNumStages - 1];
  if (context_prior) {
    ContextPriorOutput<T> cp = context_prior->forward(g, top, mode);
    out.prior = cp.prior;
    top = cp.features;
  }
  out.logits = bilinear_upsample(seg_head.forward(g, top), kOutputStride);
  Var<T> aux = relu(aux_bn.forward(g, aux_conv.forward(g, out.stages[3]), mode));
  out.aux_logits = bilinear_upsample(aux_classifier.forward(g, aux), kOutputStride);
  return out;
}

template <typename T>
StateRefs<T> CPNet<T>::state() {
  StateRefs<T> refs;
  backbone.collect(refs);
  if (context_prior) context_prior->collect(refs);
  seg_head.collect(refs);
  aux_conv.collect(refs);
  aux_bn.collect(refs);
  aux_classifier.collect(refs);
  return refs;
}

template <typename T>
void CPNet<T>::zero_grad() {
  for (Parameter<T>* p : parameters()) p->zero_grad();
}

std::vector<IdealAffinityMap> affinity_targets(std::span<const LabelMap> labels, int64_t feature_h,
                                               int64_t feature_w, int num_classes) {
  std::vector<IdealAffinityMap> out;
  out.reserve(labels.size());
  for (const LabelMap& lm : labels) {
    out.push_back(ideal_affinity_map(downsample_labels(lm, feature_h, feature_w), num_classes));
  }
  return out;
}

template <typename T>
TotalLoss<T> total_loss(const NetworkOutput<T>& out, std::span<const LabelMap> labels,
                        std::span<const IdealAffinityMap> targets, const LossWeights& weights) {
  TotalLoss<T> loss;
  loss.terms.weights = weights;
  Var<T> seg = softmax_cross_entropy(out.logits, labels);
  Var<T> aux = softmax_cross_entropy(out.aux_logits, labels);
  std::vector<Var<T>> parts{seg, aux};
  std::vector<double> coeffs{weights.seg, weights.aux};
  loss.terms.seg = static_cast<double>(seg.value()[0]);
  loss.terms.aux = static_cast<double>(aux.value()[0]);
  if (out.prior) {
    AffinityLoss<T> al = affinity_loss(*out.prior, targets, weights.unary, weights.global);
    parts.push_back(al.total);
    coeffs.push_back(weights.prior);
    loss.terms.prior = al.terms.total;
    loss.terms.unary = al.terms.unary;
    loss.terms.global = al.terms.global;
  }
  loss.total = linear_combination(parts, coeffs);
  loss.terms.total = static_cast<double>(loss.total.value()[0]);
  return loss;
}

template <typename T>
ForwardWithLoss<T> forward_with_loss(CPNet<T>& model, Graph<T>& g, const Tensor<T>& images,
                                     std::span<const LabelMap> labels, const LossWeights& weights,
                                     Mode mode) {
  const Shape& s = images.shape();
  if (s.size() != 4 || static_cast<int64_t>(labels.size()) != s[0]) {
    throw DimensionError("batch of " + std::to_string(labels.size()) + " label maps for images " +
                         shape_to_string(s));
  }
  for (const LabelMap& lm : labels) {
    if (lm.height != s[2] || lm.width != s[3]) {
      throw DimensionError("label map " + std::to_string(lm.height) + "x" + std::to_string(lm.width) +
                           " does not match image " + shape_to_string(s));
    }
  }
  ForwardWithLoss<T> r;
  r.output = model.forward(g, g.constant(images), mode);
  if (model.context_prior) {
    r.targets = affinity_targets(labels, s[2] / kOutputStride, s[3] / kOutputStride,
                                 model.config().num_classes);
  }
  r.loss = total_loss(r.output, labels, r.targets, weights);
  return r;
}

template struct ToyBackbone<float>;
template struct ToyBackbone<double>;
template class CPNet<float>;
template class CPNet<double>;
template TotalLoss<float> total_loss<float>(const NetworkOutput<float>&, std::span<const LabelMap>,
                                            std::span<const IdealAffinityMap>, const LossWeights&);
template TotalLoss<double> total_loss<double>(const NetworkOutput<double>&, std::span<const LabelMap>,
                                              std::span<const IdealAffinityMap>, const LossWeights&);
template ForwardWithLoss<float> forward_with_loss<float>(CPNet<float>&, Graph<float>&, const Tensor<float>&,
                                                         std::span<const LabelMap>, const LossWeights&, Mode);
template ForwardWithLoss<double> forward_with_loss<double>(CPNet<double>&, Graph<double>&,
                                                           const Tensor<double>&, std::span<const LabelMap>,
                                                           const LossWeights&, Mode);

}  // namespace cpnet
