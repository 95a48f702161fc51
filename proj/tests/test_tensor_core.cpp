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

#include <cmath>
#include <filesystem>
#include <limits>

#include "cpnet/autograd.hpp"
#include "cpnet/io.hpp"
#include "cpnet/ops.hpp"
#include "cpnet/parallel.hpp"
#include "cpnet/rng.hpp"
#include "oracles.hpp"

namespace cpnet {
namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(s));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("cpnet_tensor_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

TEST(Tensor, ShapeAndStorageContract) {
  Tensor<float> t(Shape{2, 3}, 1.5f);
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.rank(), 2);
  Tensor<float> s(Shape{});
  EXPECT_EQ(s.numel(), 1);
  EXPECT_THROW(Tensor<float>(Shape{2, 0}), DimensionError);
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  EXPECT_THROW(t.reshaped(Shape{4, 2}), DimensionError);
}

TEST(Tensor, ReshapeRoundTripKeepsBuffer) {
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  Graph<double> g;
  Var<double> x = g.input(t);
  Var<double> back = reshape(reshape(x, Shape{3, 2}), Shape{2, 3});
  EXPECT_EQ(back.value(), t);
}

TEST(Ops, MatmulExamples) {
  Graph<double> g;
  Var<double> id = g.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  Var<double> m = g.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(matmul(id, m).value(), m.value());
  Var<double> sel = g.constant(Tensor<double>({2, 2}, {1, 0, 0, 0}));
  Var<double> r = g.constant(Tensor<double>({2, 2}, {5, 6, 7, 8}));
  EXPECT_EQ(matmul(sel, r).value(), Tensor<double>({2, 2}, {5, 6, 0, 0}));
}

TEST(Ops, MatmulShapeMismatchNamesShapes) {
  Graph<double> g;
  Var<double> a = g.constant(Tensor<double>(Shape{2, 3}));
  Var<double> b = g.constant(Tensor<double>(Shape{2, 3}));
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos) << e.what();
  }
}

TEST(Ops, MatmulMatchesTripleLoop) {
  Rng rng(3);
  const Tensor<double> a = random_tensor(Shape{2, 5, 7}, rng);
  const Tensor<double> b = random_tensor(Shape{2, 7, 4}, rng);
  Graph<double> g;
  const Tensor<double> c = matmul(g.constant(a), g.constant(b)).value();
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t i = 0; i < 5; ++i)
      for (int64_t j = 0; j < 4; ++j) {
        double s = 0.0;
        for (int64_t k = 0; k < 7; ++k) s += a[(n * 5 + i) * 7 + k] * b[(n * 7 + k) * 4 + j];
        EXPECT_NEAR(c[(n * 5 + i) * 4 + j], s, 1e-13);
      }
}

TEST(Ops, ConcatShapeAndGradient) {
  Graph<double> g;
  Var<double> a = g.input(Tensor<double>(Shape{2, 4, 3, 3}, 1.0));
  Var<double> b = g.input(Tensor<double>(Shape{2, 16, 3, 3}, 2.0));
  Var<double> c = g.input(Tensor<double>(Shape{2, 16, 3, 3}, 3.0));
  Var<double> out = concat<double>({a, b, c}, 1);
  EXPECT_EQ(out.shape(), (Shape{2, 36, 3, 3}));
  g.backward(sum(out));
  {
    const Tensor<double> d = g.grad(a);
    for (double v : d.data()) EXPECT_EQ(v, 1.0);
  }
  {
    const Tensor<double> d = g.grad(b);
    for (double v : d.data()) EXPECT_EQ(v, 1.0);
  }
  Var<double> bad = g.input(Tensor<double>(Shape{2, 4, 2, 3}));
  EXPECT_THROW(concat<double>({a, bad}, 1), DimensionError);
}

TEST(Ops, ConvImpulseKernelIsIdentity) {
  Rng rng(1);
  const Tensor<float> x = random_tensor(Shape{1, 1, 3, 3}, rng).cast<float>();
  Tensor<float> w(Shape{1, 1, 3, 3});
  w[4] = 1.0f;
  Conv2dOptions o;
  o.pad_h = o.pad_w = 1;
  o.groups = 1;
  EXPECT_EQ(conv2d_value<float>(x, w, nullptr, o), x);
}

TEST(Ops, ConvBoxFilterOnImpulse) {
  const Tensor<double> x({1, 1, 1, 5}, {0, 0, 1, 0, 0});
  const Tensor<double> w({1, 1, 1, 3}, {1, 1, 1});
  Conv2dOptions o;
  o.pad_w = 1;
  EXPECT_EQ(conv2d_value<double>(x, w, nullptr, o), Tensor<double>({1, 1, 1, 5}, {0, 1, 1, 1, 0}));
}

TEST(Ops, ConvMatchesDirectLoopsAcrossSweep) {
  Rng rng(5);
  struct Case {
    Shape x;
    Shape w;
    int stride, pad_h, pad_w, dilation, groups;
  };
  const std::vector<Case> cases{
      {{2, 3, 7, 6}, {4, 3, 3, 3}, 1, 1, 1, 1, 1}, {{2, 4, 6, 6}, {4, 2, 3, 3}, 1, 2, 2, 2, 2},
      {{1, 3, 9, 8}, {3, 1, 5, 1}, 1, 2, 0, 1, 3},  {{1, 3, 8, 9}, {3, 1, 1, 5}, 1, 0, 2, 1, 3},
      {{2, 5, 4, 4}, {6, 5, 1, 1}, 1, 0, 0, 1, 1},  {{1, 2, 9, 9}, {3, 2, 3, 3}, 2, 1, 1, 1, 1},
      {{1, 2, 10, 7}, {2, 2, 3, 3}, 2, 2, 2, 2, 1},
  };
  for (const Case& c : cases) {
    const Tensor<double> x = random_tensor(c.x, rng);
    const Tensor<double> w = random_tensor(c.w, rng);
    const Tensor<double> b = random_tensor(Shape{c.w[0]}, rng);
    Conv2dOptions o;
    o.stride_h = o.stride_w = c.stride;
    o.pad_h = c.pad_h;
    o.pad_w = c.pad_w;
    o.dilation_h = o.dilation_w = c.dilation;
    o.groups = c.groups;
    const Tensor<double> got = conv2d_value(x, w, &b, o);
    const Tensor<double> want = oracle::conv2d(x, w, &b, o);
    ASSERT_EQ(got.shape(), want.shape());
    for (int64_t i = 0; i < got.numel(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Ops, ConvOutputSizeFormulaSweep) {
  Rng rng(9);
  for (int stride = 1; stride <= 3; ++stride)
    for (int pad = 0; pad <= 2; ++pad)
      for (int dil = 1; dil <= 3; ++dil)
        for (int k = 1; k <= 3; k += 2) {
          const int64_t in = 9;
          const int64_t expect = (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
          EXPECT_EQ(conv_output_size(in, k, stride, pad, dil), expect);
          Conv2dOptions o;
          o.stride_h = o.stride_w = stride;
          o.pad_h = o.pad_w = pad;
          o.dilation_h = o.dilation_w = dil;
          const Tensor<double> y =
              conv2d_value<double>(random_tensor(Shape{1, 1, in, in}, rng), random_tensor(Shape{1, 1, k, k}, rng), nullptr, o);
          EXPECT_EQ(y.dim(2), expect);
        }
}

TEST(Ops, ConvRejectsBadGroupsAndEmptyOutput) {
  Graph<double> g;
  Var<double> x = g.constant(Tensor<double>(Shape{1, 3, 4, 4}));
  Conv2dOptions o;
  o.groups = 2;
  EXPECT_THROW(conv2d<double>(x, g.constant(Tensor<double>(Shape{2, 1, 3, 3})), std::nullopt, o), DimensionError);
  Conv2dOptions o2;
  EXPECT_THROW(conv2d<double>(x, g.constant(Tensor<double>(Shape{2, 3, 5, 5})), std::nullopt, o2), DimensionError);
}

TEST(Ops, ConvIsThreadCountIndependent) {
  Rng rng(13);
  const Tensor<float> x = random_tensor(Shape{4, 8, 12, 12}, rng).cast<float>();
  const Tensor<float> w = random_tensor(Shape{16, 8, 3, 3}, rng).cast<float>();
  Conv2dOptions o;
  o.pad_h = o.pad_w = 1;
  auto run = [&](int threads) {
    set_max_threads(threads);
    Graph<float> g;
    Parameter<float> wp("w", w);
    Var<float> y = conv2d<float>(g.constant(x), g.parameter(wp), std::nullopt, o);
    g.backward(sum(y));
    return std::make_pair(y.value(), wp.grad);
  };
  const auto one = run(1);
  const auto four = run(4);
  set_max_threads(0);
  EXPECT_EQ(one.first, four.first);
  EXPECT_EQ(one.second, four.second);
}

TEST(Ops, BatchNormTrainNormalizes) {
  Rng rng(2);
  const Tensor<double> x = random_tensor(Shape{3, 2, 4, 4}, rng, -2.0, 5.0);
  BatchNormState<double> st(2);
  Graph<double> g;
  Var<double> y = batch_norm(g.constant(x), g.constant(Tensor<double>(Shape{2}, 1.0)),
                             g.constant(Tensor<double>(Shape{2}, 0.0)), st, Mode::kTrain);
  for (int64_t c = 0; c < 2; ++c) {
    double m = 0.0, v = 0.0;
    for (int64_t b = 0; b < 3; ++b)
      for (int64_t i = 0; i < 16; ++i) m += y.value()[(b * 2 + c) * 16 + i];
    m /= 48.0;
    for (int64_t b = 0; b < 3; ++b)
      for (int64_t i = 0; i < 16; ++i) v += std::pow(y.value()[(b * 2 + c) * 16 + i] - m, 2);
    v /= 48.0;
    EXPECT_NEAR(m, 0.0, 1e-4);
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
}

TEST(Ops, BatchNormConstantInputGivesBeta) {
  BatchNormState<double> st(2);
  Tensor<double> x(Shape{2, 2, 3, 3});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = (i / 9) % 2 == 0 ? 4.0 : -1.0;
  Graph<double> g;
  Var<double> y = batch_norm(g.constant(x), g.constant(Tensor<double>({2}, {2.0, 3.0})),
                             g.constant(Tensor<double>({2}, {0.25, -0.5})), st, Mode::kTrain);
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y.value()[i], (i / 9) % 2 == 0 ? 0.25 : -0.5, 1e-12);
}

TEST(Ops, BatchNormRunningStatisticsAndEval) {
  const Tensor<double> x({2, 1, 1, 2}, {1.0, 3.0, 5.0, 7.0});
  BatchNormState<double> st(1);
  Graph<double> g;
  Var<double> gamma = g.constant(Tensor<double>(Shape{1}, 1.0));
  Var<double> beta = g.constant(Tensor<double>(Shape{1}, 0.0));
  batch_norm(g.constant(x), gamma, beta, st, Mode::kTrain);
  // batch mean 4, unbiased variance 20/3
  EXPECT_NEAR(st.running_mean[0], 0.9 * 0.0 + 0.1 * 4.0, 1e-12);
  EXPECT_NEAR(st.running_var[0], 0.9 * 1.0 + 0.1 * (20.0 / 3.0), 1e-12);
  Var<double> y = batch_norm(g.constant(x), gamma, beta, st, Mode::kEval);
  const double denom = std::sqrt(st.running_var[0] + 1e-5);
  EXPECT_NEAR(y.value()[0], (1.0 - st.running_mean[0]) / denom, 1e-12);
  EXPECT_NEAR(st.running_mean[0], 0.4, 1e-12);  // eval leaves the state alone
  EXPECT_THROW(batch_norm(g.constant(x), g.constant(Tensor<double>(Shape{2}, 1.0)), beta, st, Mode::kTrain),
               DimensionError);
}

TEST(Ops, Activations) {
  Graph<double> g;
  Var<double> x = g.constant(Tensor<double>({5}, {0.0, -3.5, 2.0, 40.0, -40.0}));
  const Tensor<double> s = sigmoid(x).value();
  EXPECT_EQ(s[0], 0.5);
  EXPECT_GT(s[3], 0.0);
  EXPECT_LT(s[3], 1.0);
  EXPECT_GT(s[4], 0.0);
  EXPECT_LT(s[4], 1.0);
  const Tensor<double> r = relu(x).value();
  EXPECT_EQ(r[1], 0.0);
  EXPECT_EQ(r[2], 2.0);
  Graph<float> gf;
  const Tensor<float> sf = sigmoid(gf.constant(Tensor<float>({2}, {100.0f, -100.0f}))).value();
  EXPECT_LT(sf[0], 1.0f);
  EXPECT_GT(sf[1], 0.0f);
}

TEST(Ops, BilinearUpsampleExamples) {
  Graph<double> g;
  Var<double> x = g.constant(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(bilinear_upsample(x, 1).value(), x.value());
  const Tensor<double> up = bilinear_upsample(x, 2).value();
  const Tensor<double> want = oracle::bilinear(x.value(), 4, 4);
  for (int64_t i = 0; i < 16; ++i) EXPECT_NEAR(up[i], want[i], 1e-15);
  // First row by hand: sample positions -0.25, 0.25, 0.75, 1.25 clamped to [0,1].
  EXPECT_NEAR(up[0], 1.0, 1e-15);
  EXPECT_NEAR(up[1], 1.25, 1e-15);
  EXPECT_NEAR(up[2], 1.75, 1e-15);
  EXPECT_NEAR(up[3], 2.0, 1e-15);
  Var<double> c = g.constant(Tensor<double>(Shape{1, 2, 3, 2}, 0.7));
  for (double v : bilinear_upsample(c, 8).value().data()) EXPECT_NEAR(v, 0.7, 1e-15);
  EXPECT_THROW(bilinear_upsample(x, 0), ValueError);
}

TEST(Ops, ResizeMatchesOracle) {
  Rng rng(8);
  const Tensor<double> x = random_tensor(Shape{2, 3, 5, 4}, rng);
  for (auto [oh, ow] : {std::pair<int64_t, int64_t>{7, 9}, {3, 2}, {5, 4}, {16, 13}}) {
    const Tensor<double> got = resize_bilinear_value(x, oh, ow);
    const Tensor<double> want = oracle::bilinear(x, oh, ow);
    for (int64_t i = 0; i < got.numel(); ++i) EXPECT_NEAR(got[i], want[i], 1e-14);
  }
}

TEST(Ops, OneHotContract) {
  LabelMap m(1, 2, 0);
  m.labels = {0, 1};
  EXPECT_EQ(one_hot<double>(m, 2), Tensor<double>({1, 2, 2}, {1, 0, 0, 1}));
  LabelMap r(3, 3, 0);
  r.labels = {0, 1, 2, 255, 2, 1, 0, 0, 255};
  const Tensor<double> oh = one_hot<double>(r, 3);
  for (int64_t p = 0; p < 9; ++p) {
    double s = 0.0;
    int64_t best = 0;
    for (int64_t c = 0; c < 3; ++c) {
      s += oh[p * 3 + c];
      if (oh[p * 3 + c] > oh[p * 3 + best]) best = c;
    }
    EXPECT_EQ(s, r.ignored(p) ? 0.0 : 1.0);
    if (!r.ignored(p)) EXPECT_EQ(best, r.labels[static_cast<std::size_t>(p)]);
  }
  r.labels[4] = 3;
  try {
    one_hot<double>(r, 3);
    FAIL() << "expected ValueError";
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("(1,1)"), std::string::npos) << e.what();
  }
}

TEST(Ops, SoftmaxCrossEntropyExamples) {
  std::vector<LabelMap> labels{LabelMap(2, 2, 1)};
  labels[0].labels = {0, 1, 2, 255};
  Graph<double> g;
  Var<double> uniform = g.constant(Tensor<double>(Shape{1, 3, 2, 2}, 0.3));
  EXPECT_NEAR(softmax_cross_entropy<double>(uniform, labels).value()[0], std::log(3.0), 1e-12);
  Tensor<double> sharp(Shape{1, 3, 2, 2});
  for (int64_t p = 0; p < 3; ++p) sharp[labels[0].labels[static_cast<std::size_t>(p)] * 4 + p] = 50.0;
  EXPECT_LT(softmax_cross_entropy<double>(g.constant(sharp), labels).value()[0], 1e-6);
  std::vector<LabelMap> ignored{LabelMap(2, 2, 255)};
  EXPECT_THROW(softmax_cross_entropy<double>(uniform, ignored), NumericError);
}

TEST(Autograd, BasicRulesAndAccumulation) {
  Parameter<double> x("x", Tensor<double>({3}, {1.0, -2.0, 0.5}));
  for (int pass = 1; pass <= 2; ++pass) {
    Graph<double> g;
    Var<double> v = g.parameter(x);
    g.backward(sum(mul(v, v)));
    for (int64_t i = 0; i < 3; ++i) EXPECT_EQ(x.grad[i], 2.0 * pass * x.value[i]);
  }
  Graph<double> g;
  Var<double> leaf = g.input(Tensor<double>(Shape{2, 2}, 3.0));
  g.backward(sum(leaf));
  {
    const Tensor<double> d = g.grad(leaf);
    for (double v : d.data()) EXPECT_EQ(v, 1.0);
  }
  EXPECT_THROW(g.backward(leaf), DimensionError);
  Graph<double> other;
  EXPECT_THROW(add(leaf, other.input(Tensor<double>(Shape{2, 2}))), ValueError);
}

TEST(Autograd, TopologicalTapeOrder) {
  Graph<double> g;
  Var<double> a = g.input(Tensor<double>(Shape{2}, 1.0));
  Var<double> b = affine(a, 2.0, 0.0);
  Var<double> c = add(a, b);
  EXPECT_LT(a.id, b.id);
  EXPECT_LT(b.id, c.id);
}

TEST(Rng, SplitMixAndDeterminism) {
  uint64_t state = 0;
  EXPECT_EQ(splitmix64(state), 0xE220A8397B1DCDAFULL);
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 100; ++i) {
    const double u = a.uniform();
    EXPECT_EQ(u, b.uniform());
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
  EXPECT_EQ(derive_seed(10, 3), 10ULL ^ 3ULL);
}

TEST(Io, CptRoundTripAllDtypes) {
  const auto dir = temp_dir("cpt");
  const Tensor<float> f({2, 2}, {1.5f, -2.0f, 0.0f, 3.25f});
  const Tensor<double> d({3}, {1e-300, -0.5, 7.0});
  const Tensor<int32_t> i({1, 3}, {-7, 0, 255});
  const Tensor<uint8_t> u({2}, {0, 255});
  write_cpt(dir / "f.cpt", f);
  write_cpt(dir / "d.cpt", d);
  write_cpt(dir / "i.cpt", i);
  write_cpt(dir / "u.cpt", u);
  EXPECT_EQ(read_cpt_as<float>(dir / "f.cpt"), f);
  EXPECT_EQ(read_cpt_as<double>(dir / "d.cpt"), d);
  EXPECT_EQ(read_cpt_as<int32_t>(dir / "i.cpt"), i);
  EXPECT_EQ(read_cpt_as<uint8_t>(dir / "u.cpt"), u);
  EXPECT_THROW(read_cpt_as<double>(dir / "f.cpt"), IoError);
}

TEST(Io, CptLayoutIsExact) {
  const std::vector<uint8_t> bytes = encode_cpt(Tensor<float>({1, 2}, {1.0f, -2.0f}));
  const std::vector<uint8_t> want{'C', 'P', 'T', '1', 0, 2, 1, 0, 0, 0, 2, 0, 0, 0,
                                  0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
  EXPECT_EQ(bytes, want);
  std::vector<uint8_t> bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_cpt(bad), IoError);
  bad = bytes;
  bad.pop_back();
  EXPECT_THROW(decode_cpt(bad), IoError);
}

TEST(Io, PnmRoundTrip) {
  const auto dir = temp_dir("pnm");
  const std::vector<uint8_t> grey{0, 128, 255, 7, 8, 9};
  write_pgm(dir / "a.pgm", 3, 2, grey);
  const Image8 a = read_pnm(dir / "a.pgm");
  EXPECT_EQ(a.channels, 1);
  EXPECT_EQ(a.width, 3);
  EXPECT_EQ(a.pixels, grey);
  const std::vector<uint8_t> rgb{1, 2, 3, 4, 5, 6};
  write_ppm(dir / "b.ppm", 2, 1, rgb);
  const Image8 b = read_pnm(dir / "b.ppm");
  EXPECT_EQ(b.channels, 3);
  EXPECT_EQ(b.pixels, rgb);
  EXPECT_THROW(read_pnm(dir / "missing.pgm"), IoError);
}

}  // namespace
}  // namespace cpnet
