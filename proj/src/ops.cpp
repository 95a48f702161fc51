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

#include "cpnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "cpnet/parallel.hpp"
#include "gemm.hpp"

namespace cpnet {
namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a) + " vs " +
                         shape_to_string(b));
  }
}

void require_rank(const Shape& s, int rank, const char* op) {
  if (static_cast<int>(s.size()) != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_to_string(s));
  }
}

}  // namespace

// ---- matmul / transpose / reshape / concat ------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  const bool batched = sa.size() == 3;
  if (!((sa.size() == 2 && sb.size() == 2) || (sa.size() == 3 && sb.size() == 3)) ||
      (batched && sa[0] != sb[0]) || sa[sa.size() - 1] != sb[sb.size() - 2]) {
    throw DimensionError("matmul: incompatible shapes " + shape_to_string(sa) + " and " +
                         shape_to_string(sb));
  }
  const int64_t batch = batched ? sa[0] : 1;
  const int64_t m = sa[sa.size() - 2];
  const int64_t k = sa[sa.size() - 1];
  const int64_t n = sb[sb.size() - 1];
  Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
  Tensor<T> out(out_shape);
  const T* pa = a.value().raw();
  const T* pb = b.value().raw();
  for (int64_t i = 0; i < batch; ++i) {
    detail::gemm_nn(m, n, k, pa + i * m * k, k, pb + i * k * n, n, out.raw() + i * m * n, n, false);
  }
  Graph<T>& g = *a.graph;
  return g.record(std::move(out), {a, b}, [a, b, batch, m, k, n](Graph<T>& gr, const Tensor<T>& dc) {
    const T* pa = a.value().raw();
    const T* pb = b.value().raw();
    if (gr.requires_grad(a)) {
      Tensor<T> da(a.shape());
      for (int64_t i = 0; i < batch; ++i) {
        detail::gemm_nt(m, k, n, dc.raw() + i * m * n, n, pb + i * k * n, n, da.raw() + i * m * k, k,
                        false);
      }
      gr.accumulate(a, da);
    }
    if (gr.requires_grad(b)) {
      Tensor<T> db(b.shape());
      for (int64_t i = 0; i < batch; ++i) {
        detail::gemm_tn(k, n, m, pa + i * m * k, k, dc.raw() + i * m * n, n, db.raw() + i * k * n, n,
                        false);
      }
      gr.accumulate(b, db);
    }
  });
}

namespace {

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  const Shape s = x.shape();
  const int64_t batch = s.size() == 3 ? s[0] : 1;
  const int64_t r = s[s.size() - 2];
  const int64_t c = s[s.size() - 1];
  Shape os = s;
  std::swap(os[os.size() - 1], os[os.size() - 2]);
  Tensor<T> out(os);
  for (int64_t b = 0; b < batch; ++b) {
    const T* src = x.raw() + b * r * c;
    T* dst = out.raw() + b * r * c;
    for (int64_t i = 0; i < r; ++i) {
      for (int64_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
    }
  }
  return out;
}

}  // namespace

template <typename T>
Var<T> transpose(Var<T> x) {
  if (x.shape().size() != 2 && x.shape().size() != 3) {
    throw DimensionError("transpose: expected rank 2 or 3, got " + shape_to_string(x.shape()));
  }
  return x.graph->record(transpose_last2(x.value()), {x}, [x](Graph<T>& gr, const Tensor<T>& d) {
    gr.accumulate(x, transpose_last2(d));
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return x.graph->record(std::move(out), {x}, [x](Graph<T>& gr, const Tensor<T>& d) {
    gr.accumulate(x, d.reshaped(x.shape()));
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
  if (xs.empty()) throw ValueError("concat: no inputs");
  const Shape s0 = xs[0].shape();
  const int rank = static_cast<int>(s0.size());
  if (axis < 0 || axis >= rank) throw DimensionError("concat: axis out of range");
  int64_t total = 0;
  for (const Var<T>& v : xs) {
    const Shape s = v.shape();
    if (static_cast<int>(s.size()) != rank) {
      throw DimensionError("concat: rank mismatch " + shape_to_string(s0) + " vs " +
                           shape_to_string(s));
    }
    for (int d = 0; d < rank; ++d) {
      if (d != axis && s[d] != s0[d]) {
        throw DimensionError("concat: non-axis dimension mismatch " + shape_to_string(s0) +
                             " vs " + shape_to_string(s));
      }
    }
    total += s[axis];
  }
  int64_t outer = 1;
  int64_t inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[d];
  for (int d = axis + 1; d < rank; ++d) inner *= s0[d];
  Shape os = s0;
  os[axis] = total;
  Tensor<T> out(os);
  std::vector<int64_t> offsets;
  int64_t off = 0;
  for (const Var<T>& v : xs) {
    offsets.push_back(off);
    const int64_t chunk = v.shape()[axis] * inner;
    const T* src = v.value().raw();
    for (int64_t o = 0; o < outer; ++o) {
      std::copy(src + o * chunk, src + (o + 1) * chunk, out.raw() + o * total * inner + off * inner);
    }
    off += v.shape()[axis];
  }
  return xs[0].graph->record(
      std::move(out), xs, [xs, offsets, outer, inner, total, axis](Graph<T>& gr, const Tensor<T>& d) {
        for (std::size_t i = 0; i < xs.size(); ++i) {
          if (!gr.requires_grad(xs[i])) continue;
          const int64_t chunk = xs[i].shape()[axis] * inner;
          Tensor<T> dx(xs[i].shape());
          for (int64_t o = 0; o < outer; ++o) {
            const T* src = d.raw() + o * total * inner + offsets[i] * inner;
            std::copy(src, src + chunk, dx.raw() + o * chunk);
          }
          gr.accumulate(xs[i], dx);
        }
      });
}

// ---- elementwise ---------------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>& d) {
    gr.accumulate(a, d);
    gr.accumulate(b, d);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>& d) {
    gr.accumulate(a, d);
    if (gr.requires_grad(b)) {
      Tensor<T> nd = d;
      for (int64_t i = 0; i < nd.numel(); ++i) nd[i] = -nd[i];
      gr.accumulate(b, nd);
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>& d) {
    if (gr.requires_grad(a)) {
      Tensor<T> da = d;
      for (int64_t i = 0; i < da.numel(); ++i) da[i] *= b.value()[i];
      gr.accumulate(a, da);
    }
    if (gr.requires_grad(b)) {
      Tensor<T> db = d;
      for (int64_t i = 0; i < db.numel(); ++i) db[i] *= a.value()[i];
      gr.accumulate(b, db);
    }
  });
}

template <typename T>
Var<T> affine(Var<T> x, double scale, double shift) {
  Tensor<T> out = x.value();
  const T s = static_cast<T>(scale);
  const T t = static_cast<T>(shift);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = s * out[i] + t;
  return x.graph->record(std::move(out), {x}, [x, s](Graph<T>& gr, const Tensor<T>& d) {
    Tensor<T> dx = d;
    for (int64_t i = 0; i < dx.numel(); ++i) dx[i] *= s;
    gr.accumulate(x, dx);
  });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  // Clamped so saturated inputs still land strictly inside (0, 1).
  const T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T{1}, T{0});
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    const T v = x.value()[i];
    T s;
    if (v >= T{0}) {
      s = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      s = e / (T{1} + e);
    }
    out[i] = std::clamp(s, lo, hi);
  }
  auto saved = std::make_shared<Tensor<T>>(out);
  return x.graph->record(std::move(out), {x}, [x, saved](Graph<T>& gr, const Tensor<T>& d) {
    Tensor<T> dx = d;
    const Tensor<T>& s = *saved;
    for (int64_t i = 0; i < dx.numel(); ++i) dx[i] *= s[i] * (T{1} - s[i]);
    gr.accumulate(x, dx);
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > T{0} ? out[i] : T{0};
  return x.graph->record(std::move(out), {x}, [x](Graph<T>& gr, const Tensor<T>& d) {
    Tensor<T> dx = d;
    for (int64_t i = 0; i < dx.numel(); ++i) {
      if (!(x.value()[i] > T{0})) dx[i] = T{0};
    }
    gr.accumulate(x, dx);
  });
}

// ---- reductions -------------------------------------------------------------------------

template <typename T>
Var<T> sum(Var<T> x) {
  double acc = 0.0;
  for (T v : x.value().data()) acc += static_cast<double>(v);
  return x.graph->record(Tensor<T>(Shape{}, static_cast<T>(acc)), {x},
                         [x](Graph<T>& gr, const Tensor<T>& d) {
                           gr.accumulate(x, Tensor<T>(x.shape(), d[0]));
                         });
}

template <typename T>
Var<T> mean(Var<T> x) {
  return affine(sum(x), 1.0 / static_cast<double>(x.value().numel()), 0.0);
}

template <typename T>
Var<T> weighted_sum(Var<T> x, const Tensor<T>& weights) {
  require_same_shape(x.shape(), weights.shape(), "weighted_sum");
  double acc = 0.0;
  for (int64_t i = 0; i < weights.numel(); ++i) {
    acc += static_cast<double>(x.value()[i]) * static_cast<double>(weights[i]);
  }
  return x.graph->record(Tensor<T>(Shape{}, static_cast<T>(acc)), {x},
                         [x, weights](Graph<T>& gr, const Tensor<T>& d) {
                           Tensor<T> dx = weights;
                           for (int64_t i = 0; i < dx.numel(); ++i) dx[i] *= d[0];
                           gr.accumulate(x, dx);
                         });
}

template <typename T>
Var<T> linear_combination(const std::vector<Var<T>>& xs, const std::vector<double>& coeffs) {
  if (xs.empty() || xs.size() != coeffs.size()) {
    throw ValueError("linear_combination: need one coefficient per input");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].value().numel() != 1) throw DimensionError("linear_combination: inputs must be scalars");
    acc += coeffs[i] * static_cast<double>(xs[i].value()[0]);
  }
  return xs[0].graph->record(Tensor<T>(Shape{}, static_cast<T>(acc)), xs,
                             [xs, coeffs](Graph<T>& gr, const Tensor<T>& d) {
                               for (std::size_t i = 0; i < xs.size(); ++i) {
                                 gr.accumulate(xs[i], Tensor<T>(Shape{}, static_cast<T>(coeffs[i] * d[0])));
                               }
                             });
}

// ---- convolution ---------------------------------------------------------------------------

int64_t conv_output_size(int64_t in, int64_t kernel, int stride, int pad, int dilation) {
  const int64_t span = in + 2 * static_cast<int64_t>(pad) - static_cast<int64_t>(dilation) * (kernel - 1) - 1;
  if (span < 0) return 0;
  return span / stride + 1;
}

namespace {

struct ConvGeometry {
  int64_t batch, cin, h, w, cout, kh, kw, oh, ow, groups, cin_g, cout_g, kdim, pixels;
  bool pointwise;  // 1x1, stride 1, no padding: the input plane is already the column matrix
};

ConvGeometry conv_geometry(const Shape& xs, const Shape& ws, const Conv2dOptions& o) {
  require_rank(xs, 4, "conv2d input");
  require_rank(ws, 4, "conv2d weight");
  if (o.groups < 1 || o.stride_h < 1 || o.stride_w < 1 || o.dilation_h < 1 || o.dilation_w < 1 ||
      o.pad_h < 0 || o.pad_w < 0) {
    throw ValueError("conv2d: stride, dilation and groups must be >= 1 and padding >= 0");
  }
  ConvGeometry g{};
  g.batch = xs[0];
  g.cin = xs[1];
  g.h = xs[2];
  g.w = xs[3];
  g.cout = ws[0];
  g.kh = ws[2];
  g.kw = ws[3];
  g.groups = o.groups;
  if (g.cin % g.groups != 0 || g.cout % g.groups != 0) {
    throw DimensionError("conv2d: channels " + std::to_string(g.cin) + "->" + std::to_string(g.cout) +
                         " not divisible by groups " + std::to_string(g.groups));
  }
  g.cin_g = g.cin / g.groups;
  g.cout_g = g.cout / g.groups;
  if (ws[1] != g.cin_g) {
    throw DimensionError("conv2d: weight " + shape_to_string(ws) + " does not match input " +
                         shape_to_string(xs) + " with groups " + std::to_string(g.groups));
  }
  g.oh = conv_output_size(g.h, g.kh, o.stride_h, o.pad_h, o.dilation_h);
  g.ow = conv_output_size(g.w, g.kw, o.stride_w, o.pad_w, o.dilation_w);
  if (g.oh < 1 || g.ow < 1) {
    throw DimensionError("conv2d: non-positive output size for input " + shape_to_string(xs) +
                         " and kernel " + shape_to_string(ws));
  }
  g.kdim = g.cin_g * g.kh * g.kw;
  g.pixels = g.oh * g.ow;
  g.pointwise = g.kh == 1 && g.kw == 1 && o.stride_h == 1 && o.stride_w == 1 && o.pad_h == 0 &&
                o.pad_w == 0;
  return g;
}

// Column matrix [kdim, pixels] for one (image, group).
template <typename T>
void im2col(const T* x, const ConvGeometry& g, const Conv2dOptions& o, T* col) {
  for (int64_t c = 0; c < g.cin_g; ++c) {
    const T* plane = x + c * g.h * g.w;
    for (int64_t i = 0; i < g.kh; ++i) {
      for (int64_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * g.pixels;
        for (int64_t oy = 0; oy < g.oh; ++oy) {
          const int64_t iy = oy * o.stride_h - o.pad_h + i * o.dilation_h;
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.ow, T{0});
            continue;
          }
          const T* src = plane + iy * g.w;
          for (int64_t ox = 0; ox < g.ow; ++ox) {
            const int64_t ix = ox * o.stride_w - o.pad_w + j * o.dilation_w;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, const Conv2dOptions& o, T* dx) {
  for (int64_t c = 0; c < g.cin_g; ++c) {
    T* plane = dx + c * g.h * g.w;
    for (int64_t i = 0; i < g.kh; ++i) {
      for (int64_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * g.pixels;
        for (int64_t oy = 0; oy < g.oh; ++oy) {
          const int64_t iy = oy * o.stride_h - o.pad_h + i * o.dilation_h;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = plane + iy * g.w;
          const T* src = row + oy * g.ow;
          for (int64_t ox = 0; ox < g.ow; ++ox) {
            const int64_t ix = ox * o.stride_w - o.pad_w + j * o.dilation_w;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void check_bias(const Tensor<T>* bias, int64_t cout) {
  if (bias != nullptr && (bias->rank() != 1 || bias->dim(0) != cout)) {
    throw DimensionError("conv2d: bias shape " + shape_to_string(bias->shape()) +
                         " does not match " + std::to_string(cout) + " output channels");
  }
}

// Forward pass; when cols is non-null the column matrices are kept for backward.
template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                       const Conv2dOptions& o, const ConvGeometry& g,
                       std::vector<std::vector<T>>* cols) {
  Tensor<T> out(Shape{g.batch, g.cout, g.oh, g.ow});
  if (cols != nullptr && !g.pointwise) {
    cols->assign(static_cast<std::size_t>(g.batch * g.groups), {});
  }
  parallel_for(g.batch, [&](int64_t b) {
    std::vector<T> scratch;
    for (int64_t grp = 0; grp < g.groups; ++grp) {
      const T* xin = x.raw() + (b * g.cin + grp * g.cin_g) * g.h * g.w;
      const T* col = xin;
      if (!g.pointwise) {
        std::vector<T>& buf = cols != nullptr ? (*cols)[static_cast<std::size_t>(b * g.groups + grp)] : scratch;
        buf.resize(static_cast<std::size_t>(g.kdim * g.pixels));
        im2col(xin, g, o, buf.data());
        col = buf.data();
      }
      T* dst = out.raw() + (b * g.cout + grp * g.cout_g) * g.pixels;
      detail::gemm_nn(g.cout_g, g.pixels, g.kdim, w.raw() + grp * g.cout_g * g.kdim, g.kdim, col,
                      g.pixels, dst, g.pixels, false);
      if (bias != nullptr) {
        for (int64_t c = 0; c < g.cout_g; ++c) {
          const T bv = (*bias)[grp * g.cout_g + c];
          for (int64_t p = 0; p < g.pixels; ++p) dst[c * g.pixels + p] += bv;
        }
      }
    }
  });
  return out;
}

}  // namespace

template <typename T>
Tensor<T> conv2d_value(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                       const Conv2dOptions& opt) {
  const ConvGeometry g = conv_geometry(x.shape(), w.shape(), opt);
  check_bias(bias, g.cout);
  return conv_forward<T>(x, w, bias, opt, g, nullptr);
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<Var<T>> bias, const Conv2dOptions& opt) {
  const ConvGeometry g = conv_geometry(x.shape(), w.shape(), opt);
  const Tensor<T>* bias_value = bias ? &bias->value() : nullptr;
  check_bias(bias_value, g.cout);
  auto cols = std::make_shared<std::vector<std::vector<T>>>();
  Tensor<T> out = conv_forward<T>(x.value(), w.value(), bias_value, opt, g, cols.get());
  std::vector<Var<T>> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return x.graph->record(std::move(out), inputs, [x, w, bias, opt, g, cols](Graph<T>& gr, const Tensor<T>& dy) {
    const bool need_dx = gr.requires_grad(x);
    const bool need_dw = gr.requires_grad(w);
    const int64_t wsize = w.value().numel();
    Tensor<T> dx;
    if (need_dx) dx = Tensor<T>(x.shape());
    // Per-image weight-gradient partials, summed in image order afterwards.
    std::vector<std::vector<T>> dw_parts(need_dw ? static_cast<std::size_t>(g.batch) : 0);
    parallel_for(g.batch, [&](int64_t b) {
      std::vector<T> dcol;
      if (need_dw) dw_parts[static_cast<std::size_t>(b)].assign(static_cast<std::size_t>(wsize), T{0});
      for (int64_t grp = 0; grp < g.groups; ++grp) {
        const T* dyg = dy.raw() + (b * g.cout + grp * g.cout_g) * g.pixels;
        const T* wg = w.value().raw() + grp * g.cout_g * g.kdim;
        if (need_dw) {
          const T* col = g.pointwise ? x.value().raw() + (b * g.cin + grp * g.cin_g) * g.h * g.w
                                     : (*cols)[static_cast<std::size_t>(b * g.groups + grp)].data();
          detail::gemm_nt(g.cout_g, g.kdim, g.pixels, dyg, g.pixels, col, g.pixels,
                          dw_parts[static_cast<std::size_t>(b)].data() + grp * g.cout_g * g.kdim,
                          g.kdim, false);
        }
        if (need_dx) {
          T* dxg = dx.raw() + (b * g.cin + grp * g.cin_g) * g.h * g.w;
          if (g.pointwise) {
            detail::gemm_tn(g.kdim, g.pixels, g.cout_g, wg, g.kdim, dyg, g.pixels, dxg, g.pixels, false);
          } else {
            dcol.resize(static_cast<std::size_t>(g.kdim * g.pixels));
            detail::gemm_tn(g.kdim, g.pixels, g.cout_g, wg, g.kdim, dyg, g.pixels, dcol.data(),
                            g.pixels, false);
            col2im(dcol.data(), g, opt, dxg);
          }
        }
      }
    });
    if (need_dx) gr.accumulate(x, dx);
    if (need_dw) {
      Tensor<T> dw(w.shape());
      for (const auto& part : dw_parts) {
        for (int64_t i = 0; i < wsize; ++i) dw[i] += part[static_cast<std::size_t>(i)];
      }
      gr.accumulate(w, dw);
    }
    if (bias && gr.requires_grad(*bias)) {
      Tensor<T> db(bias->shape());
      for (int64_t b = 0; b < g.batch; ++b) {
        for (int64_t c = 0; c < g.cout; ++c) {
          const T* row = dy.raw() + (b * g.cout + c) * g.pixels;
          T acc{0};
          for (int64_t p = 0; p < g.pixels; ++p) acc += row[p];
          db[c] += acc;
        }
      }
      gr.accumulate(*bias, db);
    }
  });
}

// ---- batch norm ----------------------------------------------------------------------------

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T>& state, Mode mode,
                  double eps, double momentum) {
  const Shape s = x.shape();
  if (s.size() < 2) throw DimensionError("batch_norm: expected [B,C,...], got " + shape_to_string(s));
  const int64_t batch = s[0];
  const int64_t channels = s[1];
  const int64_t spatial = x.value().numel() / (batch * channels);
  const Shape cshape{channels};
  if (gamma.shape() != cshape || beta.shape() != cshape || state.running_mean.shape() != cshape ||
      state.running_var.shape() != cshape) {
    throw DimensionError("batch_norm: channel mismatch between input " + shape_to_string(s) +
                         ", gamma " + shape_to_string(gamma.shape()) + ", beta " +
                         shape_to_string(beta.shape()) + " and running statistics " +
                         shape_to_string(state.running_mean.shape()));
  }
  const int64_t count = batch * spatial;
  const Tensor<T>& xv = x.value();
  auto xhat = std::make_shared<Tensor<T>>(s);
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(channels));
  Tensor<T> out(s);
  for (int64_t c = 0; c < channels; ++c) {
    double mu;
    double var;
    if (mode == Mode::kTrain) {
      double acc = 0.0;
      for (int64_t b = 0; b < batch; ++b) {
        const T* p = xv.raw() + (b * channels + c) * spatial;
        for (int64_t i = 0; i < spatial; ++i) acc += static_cast<double>(p[i]);
      }
      mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (int64_t b = 0; b < batch; ++b) {
        const T* p = xv.raw() + (b * channels + c) * spatial;
        for (int64_t i = 0; i < spatial; ++i) {
          const double d = static_cast<double>(p[i]) - mu;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(count);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      state.running_mean[c] = static_cast<T>(momentum * static_cast<double>(state.running_mean[c]) +
                                             (1.0 - momentum) * mu);
      state.running_var[c] = static_cast<T>(momentum * static_cast<double>(state.running_var[c]) +
                                            (1.0 - momentum) * unbiased);
    } else {
      mu = static_cast<double>(state.running_mean[c]);
      var = static_cast<double>(state.running_var[c]);
    }
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(c)] = is;
    const double gm = static_cast<double>(gamma.value()[c]);
    const double bt = static_cast<double>(beta.value()[c]);
    for (int64_t b = 0; b < batch; ++b) {
      const int64_t base = (b * channels + c) * spatial;
      for (int64_t i = 0; i < spatial; ++i) {
        const double xh = (static_cast<double>(xv[base + i]) - mu) * is;
        (*xhat)[base + i] = static_cast<T>(xh);
        out[base + i] = static_cast<T>(gm * xh + bt);
      }
    }
  }
  const bool train = mode == Mode::kTrain;
  return x.graph->record(std::move(out), {x, gamma, beta},
                         [x, gamma, beta, xhat, inv_std, batch, channels, spatial, count, train](
                             Graph<T>& gr, const Tensor<T>& dy) {
    Tensor<T> dgamma(Shape{channels});
    Tensor<T> dbeta(Shape{channels});
    const bool need_dx = gr.requires_grad(x);
    Tensor<T> dx;
    if (need_dx) dx = Tensor<T>(x.shape());
    for (int64_t c = 0; c < channels; ++c) {
      double sum_dy = 0.0;
      double sum_dy_xhat = 0.0;
      for (int64_t b = 0; b < batch; ++b) {
        const int64_t base = (b * channels + c) * spatial;
        for (int64_t i = 0; i < spatial; ++i) {
          sum_dy += static_cast<double>(dy[base + i]);
          sum_dy_xhat += static_cast<double>(dy[base + i]) * static_cast<double>((*xhat)[base + i]);
        }
      }
      dgamma[c] = static_cast<T>(sum_dy_xhat);
      dbeta[c] = static_cast<T>(sum_dy);
      if (!need_dx) continue;
      const double gm = static_cast<double>(gamma.value()[c]);
      const double is = (*inv_std)[static_cast<std::size_t>(c)];
      const double n = static_cast<double>(count);
      for (int64_t b = 0; b < batch; ++b) {
        const int64_t base = (b * channels + c) * spatial;
        for (int64_t i = 0; i < spatial; ++i) {
          const double g = static_cast<double>(dy[base + i]);
          double v;
          if (train) {
            v = gm * is / n * (n * g - sum_dy - static_cast<double>((*xhat)[base + i]) * sum_dy_xhat);
          } else {
            v = gm * is * g;
          }
          dx[base + i] = static_cast<T>(v);
        }
      }
    }
    if (need_dx) gr.accumulate(x, dx);
    gr.accumulate(gamma, dgamma);
    gr.accumulate(beta, dbeta);
  });
}

// ---- bilinear resampling -----------------------------------------------------------------------

namespace {

struct AxisTaps {
  std::vector<int64_t> lo, hi;
  std::vector<double> frac;
};

AxisTaps axis_taps(int64_t in, int64_t out) {
  AxisTaps t;
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<int64_t>(std::floor(src));
    const int64_t hi = std::min(lo + 1, in - 1);
    t.lo.push_back(lo);
    t.hi.push_back(hi);
    t.frac.push_back(src - static_cast<double>(lo));
  }
  return t;
}

}  // namespace

template <typename T>
Tensor<T> resize_bilinear_value(const Tensor<T>& x, int64_t out_h, int64_t out_w) {
  require_rank(x.shape(), 4, "resize_bilinear");
  if (out_h < 1 || out_w < 1) throw DimensionError("resize_bilinear: output size must be positive");
  const int64_t planes = x.dim(0) * x.dim(1);
  const int64_t h = x.dim(2);
  const int64_t w = x.dim(3);
  const AxisTaps ty = axis_taps(h, out_h);
  const AxisTaps tx = axis_taps(w, out_w);
  Tensor<T> out(Shape{x.dim(0), x.dim(1), out_h, out_w});
  for (int64_t p = 0; p < planes; ++p) {
    const T* src = x.raw() + p * h * w;
    T* dst = out.raw() + p * out_h * out_w;
    for (int64_t i = 0; i < out_h; ++i) {
      const double fy = ty.frac[static_cast<std::size_t>(i)];
      const T* r0 = src + ty.lo[static_cast<std::size_t>(i)] * w;
      const T* r1 = src + ty.hi[static_cast<std::size_t>(i)] * w;
      for (int64_t j = 0; j < out_w; ++j) {
        const double fx = tx.frac[static_cast<std::size_t>(j)];
        const int64_t x0 = tx.lo[static_cast<std::size_t>(j)];
        const int64_t x1 = tx.hi[static_cast<std::size_t>(j)];
        const double top = (1.0 - fx) * static_cast<double>(r0[x0]) + fx * static_cast<double>(r0[x1]);
        const double bot = (1.0 - fx) * static_cast<double>(r1[x0]) + fx * static_cast<double>(r1[x1]);
        dst[i * out_w + j] = static_cast<T>((1.0 - fy) * top + fy * bot);
      }
    }
  }
  return out;
}

template <typename T>
Var<T> resize_bilinear(Var<T> x, int64_t out_h, int64_t out_w) {
  Tensor<T> out = resize_bilinear_value(x.value(), out_h, out_w);
  return x.graph->record(std::move(out), {x}, [x, out_h, out_w](Graph<T>& gr, const Tensor<T>& d) {
    const int64_t planes = x.shape()[0] * x.shape()[1];
    const int64_t h = x.shape()[2];
    const int64_t w = x.shape()[3];
    const AxisTaps ty = axis_taps(h, out_h);
    const AxisTaps tx = axis_taps(w, out_w);
    Tensor<T> dx(x.shape());
    for (int64_t p = 0; p < planes; ++p) {
      const T* src = d.raw() + p * out_h * out_w;
      T* dst = dx.raw() + p * h * w;
      for (int64_t i = 0; i < out_h; ++i) {
        const double fy = ty.frac[static_cast<std::size_t>(i)];
        T* r0 = dst + ty.lo[static_cast<std::size_t>(i)] * w;
        T* r1 = dst + ty.hi[static_cast<std::size_t>(i)] * w;
        for (int64_t j = 0; j < out_w; ++j) {
          const double fx = tx.frac[static_cast<std::size_t>(j)];
          const int64_t x0 = tx.lo[static_cast<std::size_t>(j)];
          const int64_t x1 = tx.hi[static_cast<std::size_t>(j)];
          const double g = static_cast<double>(src[i * out_w + j]);
          r0[x0] += static_cast<T>((1.0 - fy) * (1.0 - fx) * g);
          r0[x1] += static_cast<T>((1.0 - fy) * fx * g);
          r1[x0] += static_cast<T>(fy * (1.0 - fx) * g);
          r1[x1] += static_cast<T>(fy * fx * g);
        }
      }
    }
    gr.accumulate(x, dx);
  });
}

template <typename T>
Var<T> bilinear_upsample(Var<T> x, int factor) {
  if (factor < 1) throw ValueError("bilinear_upsample: factor must be >= 1, got " + std::to_string(factor));
  if (factor == 1) return reshape(x, x.shape());
  require_rank(x.shape(), 4, "bilinear_upsample");
  return resize_bilinear(x, x.shape()[2] * factor, x.shape()[3] * factor);
}

// ---- classification ---------------------------------------------------------------------------------

void validate_labels(const LabelMap& map, int num_classes) {
  for (int64_t y = 0; y < map.height; ++y) {
    for (int64_t x = 0; x < map.width; ++x) {
      const int32_t v = map.at(y, x);
      if (v != map.ignore_index && (v < 0 || v >= num_classes)) {
        throw ValueError("label " + std::to_string(v) + " at pixel (" + std::to_string(y) + "," +
                         std::to_string(x) + ") outside [0," + std::to_string(num_classes) + ")");
      }
    }
  }
}

template <typename T>
Tensor<T> one_hot(const LabelMap& labels, int num_classes) {
  if (num_classes < 1) throw ValueError("one_hot: num_classes must be positive");
  validate_labels(labels, num_classes);
  Tensor<T> out(Shape{labels.height, labels.width, num_classes});
  for (int64_t i = 0; i < labels.size(); ++i) {
    if (!labels.ignored(i)) out[i * num_classes + labels.labels[static_cast<std::size_t>(i)]] = T{1};
  }
  return out;
}

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  require_rank(logits.shape(), 4, "softmax");
  const int64_t batch = logits.dim(0);
  const int64_t classes = logits.dim(1);
  const int64_t pixels = logits.dim(2) * logits.dim(3);
  Tensor<T> out(logits.shape());
  for (int64_t b = 0; b < batch; ++b) {
    const T* src = logits.raw() + b * classes * pixels;
    T* dst = out.raw() + b * classes * pixels;
    for (int64_t p = 0; p < pixels; ++p) {
      double m = -std::numeric_limits<double>::infinity();
      for (int64_t c = 0; c < classes; ++c) m = std::max(m, static_cast<double>(src[c * pixels + p]));
      double z = 0.0;
      for (int64_t c = 0; c < classes; ++c) z += std::exp(static_cast<double>(src[c * pixels + p]) - m);
      for (int64_t c = 0; c < classes; ++c) {
        dst[c * pixels + p] = static_cast<T>(std::exp(static_cast<double>(src[c * pixels + p]) - m) / z);
      }
    }
  }
  return out;
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const LabelMap> labels) {
  const Shape s = logits.shape();
  require_rank(s, 4, "softmax_cross_entropy");
  const int64_t batch = s[0];
  const int64_t classes = s[1];
  const int64_t h = s[2];
  const int64_t w = s[3];
  if (static_cast<int64_t>(labels.size()) != batch) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " label maps for batch of " + std::to_string(batch));
  }
  for (const LabelMap& lm : labels) {
    if (lm.height != h || lm.width != w) {
      throw DimensionError("softmax_cross_entropy: label map " + std::to_string(lm.height) + "x" +
                           std::to_string(lm.width) + " does not match logits " + shape_to_string(s));
    }
    validate_labels(lm, static_cast<int>(classes));
  }
  const int64_t pixels = h * w;
  const Tensor<T> prob = softmax_channels(logits.value());
  double total = 0.0;
  int64_t count = 0;
  for (int64_t b = 0; b < batch; ++b) {
    const T* src = logits.value().raw() + b * classes * pixels;
    const LabelMap& lm = labels[static_cast<std::size_t>(b)];
    for (int64_t p = 0; p < pixels; ++p) {
      if (lm.ignored(p)) continue;
      double m = -std::numeric_limits<double>::infinity();
      for (int64_t c = 0; c < classes; ++c) m = std::max(m, static_cast<double>(src[c * pixels + p]));
      double z = 0.0;
      for (int64_t c = 0; c < classes; ++c) z += std::exp(static_cast<double>(src[c * pixels + p]) - m);
      const int32_t y = lm.labels[static_cast<std::size_t>(p)];
      total += m + std::log(z) - static_cast<double>(src[y * pixels + p]);
      ++count;
    }
  }
  if (count == 0) throw NumericError("softmax_cross_entropy: every pixel is ignored");
  std::vector<LabelMap> kept(labels.begin(), labels.end());
  return logits.graph->record(
      Tensor<T>(Shape{}, static_cast<T>(total / static_cast<double>(count))), {logits},
      [logits, prob, kept, batch, classes, pixels, count](Graph<T>& gr, const Tensor<T>& d) {
        Tensor<T> dl(logits.shape());
        const double scale = static_cast<double>(d[0]) / static_cast<double>(count);
        for (int64_t b = 0; b < batch; ++b) {
          const LabelMap& lm = kept[static_cast<std::size_t>(b)];
          for (int64_t p = 0; p < pixels; ++p) {
            if (lm.ignored(p)) continue;
            const int32_t y = lm.labels[static_cast<std::size_t>(p)];
            for (int64_t c = 0; c < classes; ++c) {
              const int64_t idx = (b * classes + c) * pixels + p;
              const double target = c == y ? 1.0 : 0.0;
              dl[idx] = static_cast<T>((static_cast<double>(prob[idx]) - target) * scale);
            }
          }
        }
        gr.accumulate(logits, dl);
      });
}

#define CPNET_INSTANTIATE_OPS(T)                                                                    \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                                      \
  template Var<T> transpose<T>(Var<T>);                                                           \
  template Var<T> reshape<T>(Var<T>, Shape);                                                      \
  template Var<T> concat<T>(const std::vector<Var<T>>&, int);                                     \
  template Var<T> add<T>(Var<T>, Var<T>);                                                         \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                         \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                         \
  template Var<T> affine<T>(Var<T>, double, double);                                              \
  template Var<T> sigmoid<T>(Var<T>);                                                             \
  template Var<T> relu<T>(Var<T>);                                                                \
  template Var<T> sum<T>(Var<T>);                                                                 \
  template Var<T> mean<T>(Var<T>);                                                                \
  template Var<T> weighted_sum<T>(Var<T>, const Tensor<T>&);                                      \
  template Var<T> linear_combination<T>(const std::vector<Var<T>>&, const std::vector<double>&);  \
  template Var<T> conv2d<T>(Var<T>, Var<T>, std::optional<Var<T>>, const Conv2dOptions&);         \
  template Tensor<T> conv2d_value<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,        \
                                     const Conv2dOptions&);                                       \
  template Var<T> batch_norm<T>(Var<T>, Var<T>, Var<T>, BatchNormState<T>&, Mode, double, double); \
  template Var<T> resize_bilinear<T>(Var<T>, int64_t, int64_t);                                   \
  template Var<T> bilinear_upsample<T>(Var<T>, int);                                              \
  template Tensor<T> resize_bilinear_value<T>(const Tensor<T>&, int64_t, int64_t);                \
  template Tensor<T> one_hot<T>(const LabelMap&, int);                                            \
  template Var<T> softmax_cross_entropy<T>(Var<T>, std::span<const LabelMap>);                    \
  template Tensor<T> softmax_channels<T>(const Tensor<T>&);

CPNET_INSTANTIATE_OPS(float)
CPNET_INSTANTIATE_OPS(double)

}  // namespace cpnet
