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

#include <gtest/gtest.h>

#include <set>

#include "cpnet/network.hpp"
#include "cpnet/trainer.hpp"

namespace cpnet {
namespace {

NetworkConfig small_config(int64_t side = 16, bool prior = true) {
  NetworkConfig c;
  c.num_classes = 3;
  c.widths = {4, 8, 8, 8, 4};
  c.c1 = 8;
  c.k = 3;
  c.aux_width = 4;
  c.input_h = c.input_w = side;
  c.use_context_prior = prior;
  c.init_seed = 5;
  return c;
}

Tensor<float> random_images(int64_t b, int64_t h, int64_t w, Rng& rng) {
  Tensor<float> t(Shape{b, 3, h, w});
  for (float& v : t.data()) v = static_cast<float>(rng.uniform());
  return t;
}

std::vector<LabelMap> random_labels(int64_t b, int64_t h, int64_t w, int classes, Rng& rng) {
  std::vector<LabelMap> out;
  for (int64_t i = 0; i < b; ++i) {
    LabelMap m(h, w);
    // Blocky labels so every 8x8 cell is constant.
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) m.at(y, x) = static_cast<int32_t>((y / 8 + x / 8 + i) % classes);
    m.labels[0] = static_cast<int32_t>(rng.uniform_int(0, classes - 1));
    out.push_back(std::move(m));
  }
  return out;
}

TEST(Backbone, StrideEightAndDilatedStagesKeepSize) {
  for (int64_t side : {32, 64}) {
    NetworkConfig c = small_config(side);
    Rng rng(1);
    ToyBackbone<float> bb(c, rng);
    Graph<float> g;
    const auto stages = bb.forward(g, g.constant(random_images(1, side, side, rng)), Mode::kTrain);
    ASSERT_EQ(stages.size(), 5u);
    EXPECT_EQ(stages[4].shape(), (Shape{1, 4, side / 8, side / 8}));
    EXPECT_EQ(stages[2].shape()[2], stages[4].shape()[2]);
    EXPECT_EQ(stages[3].shape()[3], stages[4].shape()[3]);
  }
}

TEST(Backbone, IndivisibleInputRejected) {
  NetworkConfig c = small_config();
  Rng rng(1);
  ToyBackbone<float> bb(c, rng);
  Graph<float> g;
  EXPECT_THROW(bb.forward(g, g.constant(random_images(1, 12, 16, rng)), Mode::kTrain), DimensionError);
}

TEST(Network, OutputShapes) {
  CPNet<float> net(small_config());
  Rng rng(2);
  Graph<float> g;
  const NetworkOutput<float> out = net.forward(g, g.constant(random_images(2, 16, 16, rng)), Mode::kTrain);
  EXPECT_EQ(out.logits.shape(), (Shape{2, 3, 16, 16}));
  EXPECT_EQ(out.aux_logits.shape(), (Shape{2, 3, 16, 16}));
  ASSERT_TRUE(out.prior.has_value());
  EXPECT_EQ(out.prior->shape(), (Shape{2, 4, 4}));
  EXPECT_EQ(net.seg_head.weight.value.shape(), (Shape{3, 4 + 2 * 8, 1, 1}));
}

TEST(Network, AblationOnlyChangesSegHeadInput) {
  CPNet<float> with(small_config(16, true));
  CPNet<float> without(small_config(16, false));
  EXPECT_FALSE(without.context_prior.has_value());
  EXPECT_EQ(without.seg_head.weight.value.shape(), (Shape{3, 4, 1, 1}));
  EXPECT_EQ(with.aux_conv.weight.value.shape(), without.aux_conv.weight.value.shape());
  Rng rng(3);
  Graph<float> g;
  const NetworkOutput<float> out = without.forward(g, g.constant(random_images(2, 24, 16, rng)), Mode::kTrain);
  EXPECT_EQ(out.logits.shape(), (Shape{2, 3, 24, 16}));
  EXPECT_FALSE(out.prior.has_value());
}

TEST(Network, PriorBranchNeedsConfiguredSize) {
  CPNet<float> net(small_config());
  Rng rng(4);
  Graph<float> g;
  EXPECT_THROW(net.forward(g, g.constant(random_images(1, 24, 24, rng)), Mode::kTrain), DimensionError);
}

TEST(Network, DefaultC1IsTwiceC0) {
  NetworkConfig c;
  EXPECT_EQ(c.effective_c1(), 2 * c.c0());
  c.c1 = 5;
  EXPECT_EQ(c.effective_c1(), 5);
}

TEST(Network, ConstantLabelTargetsAreAllOnes) {
  std::vector<LabelMap> labels{LabelMap(16, 16, 2)};
  labels[0].labels[0] = kDefaultIgnoreIndex;
  const auto targets = affinity_targets(labels, 2, 2, 3);
  const IdealAffinityMap& a = targets[0];
  for (int64_t i = 0; i < a.n; ++i)
    for (int64_t j = 0; j < a.n; ++j) EXPECT_EQ(a.values[i * a.n + j], (a.valid[i] && a.valid[j]) ? 1 : 0);
  EXPECT_EQ(a.valid[0], 0);
}

TEST(TotalLoss, WeightDegeneracyAndLinearity) {
  CPNet<double> net(small_config());
  Rng rng(5);
  const Tensor<double> images = random_images(2, 16, 16, rng).cast<double>();
  const auto labels = random_labels(2, 16, 16, 3, rng);
  LossWeights w;
  w.aux = 0.0;
  w.prior = 0.0;
  Graph<double> g;
  ForwardWithLoss<double> r = forward_with_loss(net, g, images, labels, w, Mode::kEval);
  EXPECT_NEAR(r.loss.terms.total, r.loss.terms.seg, 1e-12);
  for (int trial = 0; trial < 5; ++trial) {
    LossWeights v;
    v.seg = rng.uniform(0.0, 2.0);
    v.aux = rng.uniform(0.0, 2.0);
    v.prior = rng.uniform(0.0, 2.0);
    v.unary = rng.uniform(0.0, 2.0);
    v.global = rng.uniform(0.0, 2.0);
    Graph<double> gv;
    const TotalLossTerms t = forward_with_loss(net, gv, images, labels, v, Mode::kEval).loss.terms;
    EXPECT_NEAR(t.prior, v.unary * t.unary + v.global * t.global, 1e-10);
    EXPECT_NEAR(t.total, v.seg * t.seg + v.aux * t.aux + v.prior * t.prior, 1e-10);
  }
}

TEST(TotalLoss, ZeroAtPerfectPredictions) {
  std::vector<LabelMap> labels{LabelMap(2, 2)};
  labels[0].labels = {0, 1, 1, 2};
  Tensor<double> logits(Shape{1, 3, 2, 2});
  for (int64_t p = 0; p < 4; ++p) logits[labels[0].labels[static_cast<std::size_t>(p)] * 4 + p] = 50.0;
  const std::vector<IdealAffinityMap> targets{ideal_affinity_map(labels[0], 3)};
  Tensor<double> prior(Shape{1, 4, 4});
  for (int64_t i = 0; i < 16; ++i) prior[i] = targets[0].values[i] ? 1.0 - kAffinityEps : kAffinityEps;
  Graph<double> g;
  NetworkOutput<double> out;
  out.logits = g.constant(logits);
  out.aux_logits = g.constant(logits);
  out.prior = g.constant(prior);
  EXPECT_LE(total_loss(out, labels, targets, LossWeights{}).terms.total, 1e-5);
}

TEST(TotalLoss, AllIgnoredRejected) {
  CPNet<float> net(small_config());
  Rng rng(6);
  std::vector<LabelMap> labels{LabelMap(16, 16, kDefaultIgnoreIndex)};
  Graph<float> g;
  EXPECT_THROW(forward_with_loss(net, g, random_images(1, 16, 16, rng), labels, LossWeights{}, Mode::kTrain),
               NumericError);
}

TEST(TotalLoss, BackwardReachesEveryParameter) {
  CPNet<float> net(small_config());
  Rng rng(7);
  const auto labels = random_labels(2, 16, 16, 3, rng);
  Graph<float> g;
  ForwardWithLoss<float> r = forward_with_loss(net, g, random_images(2, 16, 16, rng), labels, LossWeights{}, Mode::kTrain);
  net.zero_grad();
  g.backward(r.loss.total);
  for (Parameter<float>* p : net.parameters()) {
    double mag = 0.0;
    for (float v : p->grad.data()) mag += std::abs(v);
    EXPECT_GT(mag, 0.0) << p->name;
  }
}

TEST(TotalLoss, SmallStepDecreasesLoss) {
  int decreased = 0;
  for (int trial = 0; trial < 100; ++trial) {
    NetworkConfig c = small_config();
    c.init_seed = static_cast<uint64_t>(trial);
    CPNet<double> net(c);
    Rng rng(1000 + static_cast<uint64_t>(trial));
    const Tensor<double> images = random_images(2, 16, 16, rng).cast<double>();
    const auto labels = random_labels(2, 16, 16, 3, rng);
    // Eval-mode BN keeps the objective a fixed function of the parameters.
    Graph<double> g;
    ForwardWithLoss<double> before = forward_with_loss(net, g, images, labels, LossWeights{}, Mode::kEval);
    net.zero_grad();
    g.backward(before.loss.total);
    OptimizerState<double> st;
    const auto params = net.parameters();
    sgd_momentum_step<double>(params, st, 1e-3, 0.9, 0.0);
    Graph<double> g2;
    const double after = forward_with_loss(net, g2, images, labels, LossWeights{}, Mode::kEval).loss.terms.total;
    if (after < before.loss.terms.total) ++decreased;
  }
  EXPECT_GE(decreased, 95);
}

TEST(Network, StateNamesAreUniqueAndStable) {
  CPNet<float> a(small_config());
  CPNet<float> b(small_config());
  const StateRefs<float> sa = a.state();
  const StateRefs<float> sb = b.state();
  std::set<std::string> names;
  for (std::size_t i = 0; i < sa.params.size(); ++i) {
    EXPECT_TRUE(names.insert(sa.params[i]->name).second) << sa.params[i]->name;
    EXPECT_EQ(sa.params[i]->value, sb.params[i]->value);
  }
  for (const auto& [name, t] : sa.buffers) EXPECT_TRUE(names.insert(name).second) << name;
}

}  // namespace
}  // namespace cpnet
