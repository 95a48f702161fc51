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

#include "cpnet/affinity.hpp"
#include "cpnet/context_prior.hpp"
#include "oracles.hpp"

namespace cpnet {
namespace {

Tensor<float> random_tensor(Shape s, Rng& rng) {
  Tensor<float> t(std::move(s));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

void fill_positive(AggregationModule<float>& m, Rng& rng) {
  for (Parameter<float>* p : {&m.vertical.depthwise.weight, &m.vertical.pointwise.weight,
                              &m.horizontal.depthwise.weight, &m.horizontal.pointwise.weight}) {
    for (float& v : p->value.data()) v = static_cast<float>(rng.uniform(0.1, 1.0));
  }
}

TEST(FullySeparable, DeltaAndIdentityReproduceInput) {
  Rng rng(1);
  for (SeparableAxis axis : {SeparableAxis::kVertical, SeparableAxis::kHorizontal}) {
    FullySeparableConv<float> fs("fs", axis, 5, 3, 3, rng);
    fs.depthwise.weight.value.fill(0.0f);
    for (int64_t c = 0; c < 3; ++c) fs.depthwise.weight.value[c * 5 + 2] = 1.0f;
    fs.pointwise.weight.value.fill(0.0f);
    for (int64_t c = 0; c < 3; ++c) fs.pointwise.weight.value[c * 3 + c] = 1.0f;
    const Tensor<float> x = random_tensor(Shape{2, 3, 6, 7}, rng);
    Graph<float> g;
    EXPECT_EQ(fs.forward(g, g.constant(x)).value(), x);
  }
}

TEST(FullySeparable, ImpulseSupportIsOneDimensional) {
  Rng rng(2);
  for (SeparableAxis axis : {SeparableAxis::kVertical, SeparableAxis::kHorizontal}) {
    FullySeparableConv<float> fs("fs", axis, 5, 2, 3, rng);
    for (Parameter<float>* p : {&fs.depthwise.weight, &fs.pointwise.weight}) {
      for (float& v : p->value.data()) v = static_cast<float>(rng.uniform(0.1, 1.0));
    }
    Tensor<float> x(Shape{1, 2, 9, 9});
    x.at(0, 0, 4, 4) = 1.0f;
    Graph<float> g;
    const Tensor<float> y = fs.forward(g, g.constant(x)).value();
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < 9; ++i)
        for (int64_t j = 0; j < 9; ++j) {
          const int64_t along = axis == SeparableAxis::kVertical ? i : j;
          const int64_t across = axis == SeparableAxis::kVertical ? j : i;
          const bool inside = across == 4 && std::abs(along - 4) <= 2;
          EXPECT_EQ(y.at(0, c, i, j) != 0.0f, inside) << c << " " << i << " " << j;
        }
  }
}

TEST(FullySeparable, EvenKernelRejected) {
  Rng rng(3);
  EXPECT_THROW(FullySeparableConv<float>("fs", SeparableAxis::kVertical, 4, 2, 2, rng), ValueError);
}

TEST(FullySeparable, ChannelMismatchRejected) {
  Rng rng(3);
  FullySeparableConv<float> fs("fs", SeparableAxis::kVertical, 3, 2, 2, rng);
  Graph<float> g;
  EXPECT_THROW(fs.forward(g, g.constant(Tensor<float>(Shape{1, 3, 4, 4}))), DimensionError);
}

TEST(MacCounts, StandardOverSpatialSeparableIsHalfK) {
  for (int k : {3, 5, 7, 9, 11, 15})
    for (int64_t c : {1, 2, 8, 64, 512}) {
      const int64_t standard = standard_conv_macs(16, 12, k, c, c);
      const int64_t separable = spatial_separable_macs(16, 12, k, c, c);
      EXPECT_EQ(standard, int64_t{16} * 12 * k * k * c * c);
      EXPECT_EQ(separable, int64_t{2} * 16 * 12 * k * c * c);
      EXPECT_DOUBLE_EQ(static_cast<double>(standard) / static_cast<double>(separable), k / 2.0);
      EXPECT_GT(standard, fully_separable_macs(1, 16, 12, k, c, c));
    }
}

TEST(MacCounts, FullySeparableFormula) {
  EXPECT_EQ(fully_separable_macs(2, 3, 4, 5, 6, 7), 2 * 3 * 4 * (5 * 6 + 6 * 7));
  Rng rng(4);
  AggregationModule<float> m("agg", 7, 8, 16, rng);
  EXPECT_EQ(m.macs(1, 4, 4), fully_separable_macs(1, 4, 4, 7, 8, 16) + fully_separable_macs(1, 4, 4, 7, 16, 16));
}

TEST(Aggregation, ShapeContract) {
  Rng rng(5);
  for (auto [h, w] : {std::pair<int64_t, int64_t>{1, 1}, {3, 8}, {5, 2}}) {
    AggregationModule<float> m("agg", 11, 4, 6, rng);
    Graph<float> g;
    EXPECT_EQ(m.forward(g, g.constant(random_tensor(Shape{2, 4, h, w}, rng)), Mode::kTrain).shape(),
              (Shape{2, 6, h, w}));
  }
}

TEST(Aggregation, ImpulseResponseIsExactlyKByK) {
  Rng rng(6);
  for (int k : {3, 5, 7, 11}) {
    AggregationModule<float> m("agg", k, 2, 3, rng);
    fill_positive(m, rng);
    const int64_t size = 2 * k + 1;
    const int64_t centre = k;
    Tensor<float> x(Shape{1, 2, size, size});
    x.at(0, 1, centre, centre) = 1.0f;
    Graph<float> g;
    const Tensor<float> y = m.forward(g, g.constant(x), Mode::kEval).value();
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < size; ++i)
        for (int64_t j = 0; j < size; ++j) {
          const bool inside = std::abs(i - centre) <= k / 2 && std::abs(j - centre) <= k / 2;
          EXPECT_EQ(y.at(0, c, i, j) > 0.0f, inside) << "k=" << k;
        }
  }
}

TEST(PriorHeadTest, ZeroWeightsGiveHalf) {
  Rng rng(7);
  PriorHead<float> head("prior", 4, 3, 3, rng);
  head.conv.weight.value.fill(0.0f);
  Graph<float> g;
  const Tensor<float> p = head.forward(g, g.constant(random_tensor(Shape{2, 4, 3, 3}, rng)), Mode::kTrain).value();
  EXPECT_EQ(p.shape(), (Shape{2, 9, 9}));
  for (float v : p.data()) EXPECT_EQ(v, 0.5f);
}

TEST(PriorHeadTest, RangeShapeAndMismatch) {
  Rng rng(8);
  PriorHead<float> head("prior", 4, 8, 8, rng);
  Graph<float> g;
  const Tensor<float> p = head.forward(g, g.constant(random_tensor(Shape{2, 4, 8, 8}, rng)), Mode::kTrain).value();
  EXPECT_EQ(p.shape(), (Shape{2, 64, 64}));
  for (float v : p.data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  EXPECT_THROW(head.forward(g, g.constant(random_tensor(Shape{2, 4, 4, 8}, rng)), Mode::kTrain), DimensionError);
}

TEST(ContextPrior, ZeroPriorGivesColumnSums) {
  Rng rng(9);
  const Tensor<float> agg = random_tensor(Shape{1, 3, 2, 3}, rng);
  Graph<float> g;
  const ContextPriorOutput<float> out = apply_context_prior(
      g.constant(random_tensor(Shape{1, 2, 2, 3}, rng)), g.constant(agg), g.constant(Tensor<float>(Shape{1, 6, 6})));
  for (int64_t c = 0; c < 3; ++c) {
    float total = 0.0f;
    for (int64_t p = 0; p < 6; ++p) total += agg[c * 6 + p];
    for (int64_t p = 0; p < 6; ++p) {
      EXPECT_EQ(out.intra.value()[c * 6 + p], 0.0f);
      EXPECT_NEAR(out.inter.value()[c * 6 + p], total, 1e-6);
    }
  }
}

TEST(ContextPrior, IdealPriorCountsClassMembers) {
  LabelMap m(2, 2);
  m.labels = {0, 1, 1, 1};
  const IdealAffinityMap a = ideal_affinity_map(m, 2);
  Tensor<double> prior(Shape{1, 4, 4});
  for (int64_t i = 0; i < 16; ++i) prior[i] = a.values[i];
  // X̃ channel c at pixel i is the indicator of class c.
  Tensor<double> agg(Shape{1, 2, 2, 2});
  for (int64_t i = 0; i < 4; ++i) agg[m.labels[static_cast<std::size_t>(i)] * 4 + i] = 1.0;
  Graph<double> g;
  const ContextPriorOutput<double> out =
      apply_context_prior(g.constant(Tensor<double>(Shape{1, 1, 2, 2})), g.constant(agg), g.constant(prior));
  // Brute force: Y_i[c] = sum_j a_ij * agg_j[c].
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t c = 0; c < 2; ++c) {
      double want = 0.0;
      for (int64_t j = 0; j < 4; ++j) want += a.values[i * 4 + j] * agg[c * 4 + j];
      EXPECT_EQ(out.intra.value()[c * 4 + i], want);
    }
  EXPECT_EQ(out.intra.value().storage(), (std::vector<double>{1, 0, 0, 0, 0, 3, 3, 3}));
}

TEST(ContextPrior, IntraPlusInterIsTotalAggregation) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t h = rng.uniform_int(1, 4);
    const int64_t w = rng.uniform_int(1, 4);
    const int64_t n = h * w;
    const int64_t c1 = rng.uniform_int(1, 5);
    const Tensor<float> agg = random_tensor(Shape{2, c1, h, w}, rng);
    Tensor<float> prior(Shape{2, n, n});
    for (float& v : prior.data()) v = static_cast<float>(rng.uniform());
    Graph<float> g;
    const ContextPriorOutput<float> out =
        apply_context_prior(g.constant(random_tensor(Shape{2, 3, h, w}, rng)), g.constant(agg), g.constant(prior));
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t c = 0; c < c1; ++c) {
        double total = 0.0;
        for (int64_t p = 0; p < n; ++p) total += agg[(b * c1 + c) * n + p];
        for (int64_t p = 0; p < n; ++p) {
          const int64_t idx = (b * c1 + c) * n + p;
          EXPECT_NEAR(out.intra.value()[idx] + out.inter.value()[idx], total, 1e-5);
        }
      }
  }
}

TEST(ContextPrior, LayerOutputChannels) {
  Rng rng(11);
  ContextPriorLayer<float> layer("cp", 3, 8, 16, 2, 2, rng);
  EXPECT_EQ(layer.output_channels(), 40);
  Graph<float> g;
  const ContextPriorOutput<float> out = layer.forward(g, g.constant(random_tensor(Shape{2, 8, 2, 2}, rng)), Mode::kTrain);
  EXPECT_EQ(out.features.shape(), (Shape{2, 40, 2, 2}));
  EXPECT_EQ(out.prior.shape(), (Shape{2, 4, 4}));
}

TEST(ContextPrior, EndToEndGradient) {
  Rng rng(12);
  ContextPriorLayer<double> layer("cp", 3, 2, 3, 2, 2, rng);
  Parameter<double> x("x", Tensor<double>(Shape{2, 2, 2, 2}));
  for (double& v : x.value.data()) v = rng.uniform(-1.0, 1.0);
  std::vector<LabelMap> labels{LabelMap(2, 2), LabelMap(2, 2)};
  labels[0].labels = {0, 1, 1, 0};
  labels[1].labels = {2, 2, 255, 1};
  std::vector<IdealAffinityMap> targets;
  for (const LabelMap& m : labels) targets.push_back(ideal_affinity_map(m, 3));
  StateRefs<double> refs;
  layer.collect(refs);
  Tensor<double> head_w(Shape{3, 8, 1, 1});
  for (double& v : head_w.data()) v = rng.uniform(-0.5, 0.5);
  auto loss = [&](Graph<double>& g) {
    const ContextPriorOutput<double> out = layer.forward(g, g.parameter(x), Mode::kTrain);
    Var<double> logits = conv2d<double>(out.features, g.constant(head_w), std::nullopt, Conv2dOptions{});
    Var<double> ce = softmax_cross_entropy<double>(logits, labels);
    return add(ce, affinity_loss<double>(out.prior, targets).total);
  };
  std::vector<Parameter<double>*> leaves = refs.params;
  leaves.push_back(&x);
  for (Parameter<double>* p : leaves) p->zero_grad();
  {
    Graph<double> g;
    g.backward(loss(g));
  }
  for (Parameter<double>* p : leaves) {
    const std::vector<double> numeric = oracle::numeric_gradient(p->value.storage(), [&] {
      Graph<double> g;
      return loss(g).value()[0];
    });
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      EXPECT_LT(oracle::rel_error(p->grad[static_cast<int64_t>(i)], numeric[i]), 1e-4) << p->name << " " << i;
    }
  }
}

}  // namespace
}  // namespace cpnet
