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

#include "cpnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>

#include "cpnet/affinity.hpp"
#include "cpnet/context_prior.hpp"
#include "cpnet/network.hpp"
#include "cpnet/ops.hpp"

namespace cpnet {
namespace {

using D = double;

struct Fixture {
  explicit Fixture(uint64_t seed) : rng(seed) {}

  Parameter<D>* leaf(const std::string& name, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor<D> t(std::move(shape));
    for (D& v : t.data()) v = rng.uniform(lo, hi);
    leaves.emplace_back(name, std::move(t));
    return &leaves.back();
  }

  // Values bounded away from zero, so ReLU kinks are never crossed.
  Parameter<D>* leaf_off_zero(const std::string& name, Shape shape) {
    Parameter<D>* p = leaf(name, std::move(shape), 0.1, 1.0);
    for (D& v : p->value.data()) {
      if (rng.bernoulli(0.5)) v = -v;
    }
    return p;
  }

  LabelMap labels(int64_t h, int64_t w, int classes, int ignored) {
    LabelMap m(h, w, 0);
    for (int32_t& v : m.labels) v = static_cast<int32_t>(rng.uniform_int(0, classes - 1));
    for (int i = 0; i < ignored; ++i) m.labels[static_cast<std::size_t>(rng.uniform_int(0, h * w - 1))] = m.ignore_index;
    return m;
  }

  // Non-scalar outputs are folded to a scalar with weights fixed on first use.
  Var<D> reduce(Var<D> out) {
    if (out.value().numel() == 1) return reshape(out, Shape{});
    auto it = weights.find(out.shape());
    if (it == weights.end()) {
      Tensor<D> w(out.shape());
      for (D& v : w.data()) v = rng.uniform(-1.0, 1.0);
      it = weights.emplace(out.shape(), std::move(w)).first;
    }
    return weighted_sum(out, it->second);
  }

  Rng rng;
  std::deque<Parameter<D>> leaves;
  std::map<Shape, Tensor<D>> weights;
  std::vector<LabelMap> label_maps;
  std::vector<IdealAffinityMap> targets;
  std::shared_ptr<void> module;
};

GradCheckCase finish(const std::string& name, const std::shared_ptr<Fixture>& f,
                     std::vector<Parameter<D>*> leaves, std::function<Var<D>(Graph<D>&)> build) {
  GradCheckCase c;
  c.name = name;
  c.leaves = std::move(leaves);
  c.build = std::move(build);
  c.storage = f;
  return c;
}

template <typename M>
std::vector<Parameter<D>*> module_params(M& m) {
  StateRefs<D> refs;
  m.collect(refs);
  return refs.params;
}

// Train-mode BN outputs over m samples lie within sqrt(m - 1) of the shift, so
// a shift of +/-6 keeps the following ReLU off its kink for these fixtures
// (m <= 18). Channels alternate between the active and the clipped side.
void shift_off_kink(BatchNorm<D>& bn) {
  for (int64_t c = 0; c < bn.beta.value.numel(); ++c) bn.beta.value[c] = c % 2 == 0 ? 6.0 : -6.0;
}

void shift_off_kink(AggregationModule<D>& m) {
  shift_off_kink(m.bn_vertical);
  shift_off_kink(m.bn_horizontal);
}

// Affinity targets for a [B,N,N] prior over hxw label maps.
void make_targets(Fixture& f, int64_t batch, int64_t h, int64_t w, int classes) {
  for (int64_t b = 0; b < batch; ++b) {
    f.label_maps.push_back(f.labels(h, w, classes, 1));
    f.targets.push_back(ideal_affinity_map(f.label_maps.back(), classes));
  }
}

using Builder = std::function<GradCheckCase(const std::shared_ptr<Fixture>&)>;

Conv2dOptions conv_opts(int stride, int pad_h, int pad_w, int dilation, int groups) {
  Conv2dOptions o;
  o.stride_h = o.stride_w = stride;
  o.pad_h = pad_h;
  o.pad_w = pad_w;
  o.dilation_h = o.dilation_w = dilation;
  o.groups = groups;
  return o;
}

GradCheckCase conv_case(const std::string& name, const std::shared_ptr<Fixture>& f, Shape x_shape, Shape w_shape,
                        bool bias, Conv2dOptions opt) {
  Parameter<D>* x = f->leaf("x", std::move(x_shape));
  const int64_t cout = w_shape[0];
  Parameter<D>* w = f->leaf("weight", std::move(w_shape));
  Parameter<D>* b = bias ? f->leaf("bias", Shape{cout}) : nullptr;
  std::vector<Parameter<D>*> leaves{x, w};
  if (b) leaves.push_back(b);
  return finish(name, f, leaves, [f, x, w, b, opt](Graph<D>& g) {
    std::optional<Var<D>> bv;
    if (b) bv = g.parameter(*b);
    return f->reduce(conv2d(g.parameter(*x), g.parameter(*w), bv, opt));
  });
}

const std::vector<std::pair<std::string, Builder>>& registry() {
  static const std::vector<std::pair<std::string, Builder>> kCases{
      {"matmul",
       [](const std::shared_ptr<Fixture>& f) {
         auto* a = f->leaf("a", Shape{3, 4});
         auto* b = f->leaf("b", Shape{4, 5});
         return finish("matmul", f, {a, b},
                       [f, a, b](Graph<D>& g) { return f->reduce(matmul(g.parameter(*a), g.parameter(*b))); });
       }},
      {"batched_matmul",
       [](const std::shared_ptr<Fixture>& f) {
         auto* a = f->leaf("a", Shape{2, 3, 4});
         auto* b = f->leaf("b", Shape{2, 4, 5});
         return finish("batched_matmul", f, {a, b},
                       [f, a, b](Graph<D>& g) { return f->reduce(matmul(g.parameter(*a), g.parameter(*b))); });
       }},
      {"transpose",
       [](const std::shared_ptr<Fixture>& f) {
         auto* x = f->leaf("x", Shape{2, 3, 4});
         return finish("transpose", f, {x}, [f, x](Graph<D>& g) { return f->reduce(transpose(g.parameter(*x))); });
       }},
      {"reshape",
       [](const std::shared_ptr<Fixture>& f) {
         auto* x = f->leaf("x", Shape{2, 3, 4});
         return finish("reshape", f, {x},
                       [f, x](Graph<D>& g) { return f->reduce(reshape(g.parameter(*x), Shape{6, 4})); });
       }},
      {"concat",
       [](const std::shared_ptr<Fixture>& f) {
         auto* a = f->leaf("a", Shape{2, 3, 2, 2});
         auto* b = f->leaf("b", Shape{2, 1, 2, 2});
         return finish("concat", f, {a, b}, [f, a, b](Graph<D>& g) {
           return f->reduce(concat<D>({g.parameter(*a), g.parameter(*b), g.parameter(*a)}, 1));
         });
       }},
      {"add",
       [](const std::shared_ptr<Fixture>& f) {
         auto* a = f->leaf("a", Shape{2, 3, 4});
         auto* b = f->leaf("b", Shape{2, 3, 4});
         return finish("add", f, {a, b},
                       [f, a, b](Graph<D>& g) { return f->reduce(add(g.parameter(*a), g.parameter(*b))); });
       }},
      {"sub",
       [](const std::shared_ptr<Fixture>& f) {
         auto* a = f->leaf("a", Shape{2, 3, 4});
         auto* b = f->leaf("b", Shape{2, 3, 4});
         return finish("sub", f, {a, b},
                       [f, a, b](Graph<D>& g) { return f->reduce(sub(g.parameter(*a), g.parameter(*b))); });
       }},
      {"mul",
       [](const std::shared_ptr<Fixture>& f) {
         auto* a = f->leaf("a", Shape{2, 3, 4});
         auto* b = f->leaf("b", Shape{2, 3, 4});
         return finish("mul", f, {a, b},
                       [f, a, b](Graph<D>& g) { return f->reduce(mul(g.parameter(*a), g.parameter(*b))); });
       }},
      {"affine",
       [](const std::shared_ptr<Fixture>& f) {
         auto* x = f->leaf("x", Shape{2, 3, 4});
         return finish("affine", f, {x},
                       [f, x](Graph<D>& g) { return f->reduce(affine(g.parameter(*x), -1.7, 0.3)); });
       }},
      {"sigmoid",
       [](const std::shared_ptr<Fixture>& f) {
         auto* x = f->leaf("x", Shape{2, 3, 4}, -4.0, 4.0);
         return finish("sigmoid", f, {x}, [f, x](Graph<D>& g) { return f->reduce(sigmoid(g.parameter(*x))); });
       }},
      {"relu",
       [](const std::shared_ptr<Fixture>& f) {
         auto* x = f->leaf_off_zero("x", Shape{2, 3, 4});
         return finish("relu", f, {x}, [f, x](Graph<D>& g) { return f->reduce(relu(g.parameter(*x))); });
       }},
      {"sum",
       [](const std::shared_ptr<Fixture>& f) {
         auto* x = f->leaf("x", Shape{2, 3, 4});
         return finish("sum", f, {x}, [x](Graph<D>& g) {
           Var<D> p = g.parameter(*x);
           return sum(mul(p, p));
         });
       }},
      {"mean",
       [](const std::shared_ptr<Fixture>& f) {
         auto* x = f->leaf("x", Shape{2, 3, 4});
         return finish("mean", f, {x}, [x](Graph<D>& g) {
           Var<D> p = g.parameter(*x);
           return mean(mul(p, p));
         });
       }},
      {"weighted_sum",
       [](const std::shared_ptr<Fixture>& f) {
         auto* x = f->leaf("x", Shape{2, 3, 4});
         return finish("weighted_sum", f, {x}, [f, x](Graph<D>& g) { return f->reduce(g.parameter(*x)); });
       }},
      {"linear_combination",
       [](const std::shared_ptr<Fixture>& f) {
         auto* a = f->leaf("a", Shape{});
         auto* b = f->leaf("b", Shape{});
         return finish("linear_combination", f, {a, b}, [a, b](Graph<D>& g) {
           Var<D> pa = g.parameter(*a);
           Var<D> pb = g.parameter(*b);
           return linear_combination<D>({mul(pa, pb), pa, pb}, {0.7, -1.3, 2.1});
         });
       }},
      {"conv2d",
       [](const std::shared_ptr<Fixture>& f) {
         return conv_case("conv2d", f, Shape{2, 3, 5, 6}, Shape{4, 3, 3, 3}, true, conv_opts(1, 1, 1, 1, 1));
       }},
      {"conv2d_strided_dilated",
       [](const std::shared_ptr<Fixture>& f) {
         return conv_case("conv2d_strided_dilated", f, Shape{2, 2, 9, 8}, Shape{3, 2, 3, 3}, true,
                          conv_opts(2, 2, 2, 2, 1));
       }},
      {"conv2d_depthwise",
       [](const std::shared_ptr<Fixture>& f) {
         return conv_case("conv2d_depthwise", f, Shape{2, 3, 6, 5}, Shape{3, 1, 5, 1}, false,
                          conv_opts(1, 2, 0, 1, 3));
       }},
      {"conv2d_pointwise",
       [](const std::shared_ptr<Fixture>& f) {
         return conv_case("conv2d_pointwise", f, Shape{2, 4, 3, 3}, Shape{5, 4, 1, 1}, true,
                          conv_opts(1, 0, 0, 1, 1));
       }},
      {"batch_norm",
       [](const std::shared_ptr<Fixture>& f) {
         auto* x = f->leaf("x", Shape{3, 2, 3, 3});
         auto* gamma = f->leaf("gamma", Shape{2}, 0.5, 1.5);
         auto* beta = f->leaf("beta", Shape{2});
         auto state = std::make_shared<BatchNormState<D>>(2);
         f->module = state;
         return finish("batch_norm", f, {x, gamma, beta}, [f, x, gamma, beta, state](Graph<D>& g) {
           return f->reduce(batch_norm(g.parameter(*x), g.parameter(*gamma), g.parameter(*beta), *state, Mode::kTrain));
         });
       }},
      {"batch_norm_eval",
       [](const std::shared_ptr<Fixture>& f) {
         auto* x = f->leaf("x", Shape{2, 2, 3, 3});
         auto* gamma = f->leaf("gamma", Shape{2}, 0.5, 1.5);
         auto* beta = f->leaf("beta", Shape{2});
         auto state = std::make_shared<BatchNormState<D>>(2);
         state->running_mean = Tensor<D>(Shape{2}, {0.3, -0.2});
         state->running_var = Tensor<D>(Shape{2}, {0.8, 1.7});
         f->module = state;
         return finish("batch_norm_eval", f, {x, gamma, beta}, [f, x, gamma, beta, state](Graph<D>& g) {
           return f->reduce(batch_norm(g.parameter(*x), g.parameter(*gamma), g.parameter(*beta), *state, Mode::kEval));
         });
       }},
      {"resize_bilinear",
       [](const std::shared_ptr<Fixture>& f) {
         auto* x = f->leaf("x", Shape{1, 2, 3, 4});
         return finish("resize_bilinear", f, {x},
                       [f, x](Graph<D>& g) { return f->reduce(resize_bilinear(g.parameter(*x), 5, 7)); });
       }},
      {"bilinear_upsample",
       [](const std::shared_ptr<Fixture>& f) {
         auto* x = f->leaf("x", Shape{1, 2, 2, 3});
         return finish("bilinear_upsample", f, {x},
                       [f, x](Graph<D>& g) { return f->reduce(bilinear_upsample(g.parameter(*x), 8)); });
       }},
      {"softmax_cross_entropy",
       [](const std::shared_ptr<Fixture>& f) {
         auto* x = f->leaf("logits", Shape{2, 3, 4, 4}, -3.0, 3.0);
         f->label_maps = {f->labels(4, 4, 3, 2), f->labels(4, 4, 3, 2)};
         return finish("softmax_cross_entropy", f, {x}, [f, x](Graph<D>& g) {
           return softmax_cross_entropy<D>(g.parameter(*x), f->label_maps);
         });
       }},
      {"unary_affinity_loss",
       [](const std::shared_ptr<Fixture>& f) {
         auto* p = f->leaf("prior", Shape{2, 9, 9}, 0.05, 0.95);
         make_targets(*f, 2, 3, 3, 3);
         return finish("unary_affinity_loss", f, {p}, [f, p](Graph<D>& g) {
           return unary_affinity_loss<D>(g.parameter(*p), f->targets);
         });
       }},
      {"global_affinity_loss",
       [](const std::shared_ptr<Fixture>& f) {
         auto* p = f->leaf("prior", Shape{2, 9, 9}, 0.05, 0.95);
         make_targets(*f, 2, 3, 3, 3);
         return finish("global_affinity_loss", f, {p}, [f, p](Graph<D>& g) {
           return global_affinity_loss<D>(g.parameter(*p), f->targets);
         });
       }},
      {"affinity_loss",
       [](const std::shared_ptr<Fixture>& f) {
         auto* p = f->leaf("prior", Shape{2, 9, 9}, 0.05, 0.95);
         make_targets(*f, 2, 3, 3, 3);
         return finish("affinity_loss", f, {p}, [f, p](Graph<D>& g) {
           return affinity_loss<D>(g.parameter(*p), f->targets, 0.8, 1.3).total;
         });
       }},
      {"fully_separable_conv",
       [](const std::shared_ptr<Fixture>& f) {
         auto m = std::make_shared<FullySeparableConv<D>>("fsconv", SeparableAxis::kVertical, 5, 3, 4, f->rng);
         f->module = m;
         auto* x = f->leaf("x", Shape{2, 3, 4, 3});
         auto leaves = module_params(*m);
         leaves.insert(leaves.begin(), x);
         return finish("fully_separable_conv", f, leaves,
                       [f, m, x](Graph<D>& g) { return f->reduce(m->forward(g, g.parameter(*x))); });
       }},
      {"aggregation_module",
       [](const std::shared_ptr<Fixture>& f) {
         auto m = std::make_shared<AggregationModule<D>>("aggregation", 3, 3, 4, f->rng);
         shift_off_kink(*m);
         f->module = m;
         auto* x = f->leaf("x", Shape{2, 3, 3, 3});
         auto leaves = module_params(*m);
         leaves.insert(leaves.begin(), x);
         return finish("aggregation_module", f, leaves, [f, m, x](Graph<D>& g) {
           return f->reduce(m->forward(g, g.parameter(*x), Mode::kTrain));
         });
       }},
      {"prior_head",
       [](const std::shared_ptr<Fixture>& f) {
         auto m = std::make_shared<PriorHead<D>>("prior", 3, 2, 2, f->rng);
         f->module = m;
         auto* x = f->leaf("x", Shape{2, 3, 2, 2});
         auto leaves = module_params(*m);
         leaves.insert(leaves.begin(), x);
         return finish("prior_head", f, leaves, [f, m, x](Graph<D>& g) {
           return f->reduce(m->forward(g, g.parameter(*x), Mode::kTrain));
         });
       }},
      {"context_prior",
       [](const std::shared_ptr<Fixture>& f) {
         auto* x = f->leaf("x", Shape{2, 2, 2, 3});
         auto* agg = f->leaf("aggregated", Shape{2, 3, 2, 3});
         auto* p = f->leaf("prior", Shape{2, 6, 6}, 0.0, 1.0);
         return finish("context_prior", f, {x, agg, p}, [f, x, agg, p](Graph<D>& g) {
           return f->reduce(apply_context_prior(g.parameter(*x), g.parameter(*agg), g.parameter(*p)).features);
         });
       }},
      {"context_prior_layer",
       [](const std::shared_ptr<Fixture>& f) {
         auto m = std::make_shared<ContextPriorLayer<D>>("context_prior", 3, 2, 3, 3, 3, f->rng);
         shift_off_kink(m->aggregation);
         f->module = m;
         auto* x = f->leaf("x", Shape{2, 2, 3, 3});
         auto leaves = module_params(*m);
         leaves.insert(leaves.begin(), x);
         return finish("context_prior_layer", f, leaves, [f, m, x](Graph<D>& g) {
           return f->reduce(m->forward(g, g.parameter(*x), Mode::kTrain).features);
         });
       }},
      {"total_loss",
       [](const std::shared_ptr<Fixture>& f) {
         auto* logits = f->leaf("logits", Shape{2, 3, 2, 2}, -2.0, 2.0);
         auto* aux = f->leaf("aux_logits", Shape{2, 3, 2, 2}, -2.0, 2.0);
         auto* p = f->leaf("prior", Shape{2, 4, 4}, 0.05, 0.95);
         make_targets(*f, 2, 2, 2, 3);
         return finish("total_loss", f, {logits, aux, p}, [f, logits, aux, p](Graph<D>& g) {
           NetworkOutput<D> out;
           out.logits = g.parameter(*logits);
           out.aux_logits = g.parameter(*aux);
           out.prior = g.parameter(*p);
           LossWeights w;
           return total_loss<D>(out, f->label_maps, f->targets, w).total;
         });
       }},
  };
  return kCases;
}

}  // namespace

std::vector<std::string> grad_check_op_names() {
  std::vector<std::string> names;
  for (const auto& [name, _] : registry()) names.push_back(name);
  return names;
}

GradCheckCase make_grad_check_case(const std::string& name, uint64_t seed) {
  for (const auto& [n, build] : registry()) {
    if (n == name) return build(std::make_shared<Fixture>(seed));
  }
  throw ValueError("unknown gradient-check op '" + name + "'");
}

GradCheckCase make_full_model_case(uint64_t seed) {
  auto f = std::make_shared<Fixture>(seed);
  NetworkConfig cfg;
  cfg.num_classes = 3;
  cfg.widths = {4, 8, 8, 8, 4};
  cfg.c1 = 8;
  cfg.k = 3;
  cfg.aux_width = 4;
  cfg.input_h = 16;
  cfg.input_w = 16;
  cfg.init_seed = seed;
  auto model = std::make_shared<CPNet<D>>(cfg);
  f->module = model;
  Parameter<D>* image = f->leaf("image", Shape{2, 3, 16, 16}, 0.0, 1.0);
  f->label_maps = {f->labels(16, 16, 3, 4), f->labels(16, 16, 3, 4)};
  std::vector<Parameter<D>*> leaves = model->parameters();
  leaves.insert(leaves.begin(), image);
  return finish("full_model", f, leaves, [f, model, image](Graph<D>& g) {
    NetworkOutput<D> out = model->forward(g, g.parameter(*image), Mode::kTrain);
    const std::vector<IdealAffinityMap> targets = affinity_targets(f->label_maps, 2, 2, 3);
    return total_loss<D>(out, f->label_maps, targets, LossWeights{}).total;
  });
}

double grad_rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport run_grad_check(GradCheckCase& c, const GradCheckOptions& opts) {
  GradCheckReport rep;
  rep.name = c.name;
  for (Parameter<D>* p : c.leaves) p->zero_grad();
  {
    Graph<D> g;
    Var<D> loss = c.build(g);
    g.backward(loss);
  }
  auto eval = [&c] {
    Graph<D> g;
    return c.build(g).value()[0];
  };
  Rng pick(opts.seed);
  for (Parameter<D>* p : c.leaves) {
    const int64_t n = p->value.numel();
    std::vector<int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    if (opts.max_entries_per_leaf > 0 && n > opts.max_entries_per_leaf) {
      for (int64_t i = 0; i < opts.max_entries_per_leaf; ++i) {
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick.uniform_int(i, n - 1))]);
      }
      idx.resize(static_cast<std::size_t>(opts.max_entries_per_leaf));
      std::sort(idx.begin(), idx.end());
    }
    for (int64_t i : idx) {
      D& v = p->value[i];
      const D orig = v;
      v = orig + opts.step;
      const double fp = eval();
      v = orig - opts.step;
      const double fm = eval();
      v = orig;
      const double numeric = (fp - fm) / (2.0 * opts.step);
      const double err = grad_rel_error(p->grad[i], numeric);
      ++rep.entries;
      if (err > rep.max_rel_error || rep.worst_index < 0) {
        rep.max_rel_error = std::max(err, rep.max_rel_error);
        if (err >= rep.max_rel_error) {
          rep.worst_leaf = p->name;
          rep.worst_index = i;
        }
      }
    }
  }
  rep.passed = rep.max_rel_error < opts.tolerance;
  return rep;
}

}  // namespace cpnet
