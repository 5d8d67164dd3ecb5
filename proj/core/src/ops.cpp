// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#include "tinyvid/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tinyvid/error.hpp"
#include "tinyvid/kernels.hpp"

namespace tinyvid {

using detail::make_result;
using detail::Node;

namespace {

std::int64_t normalize_axis(std::int64_t axis, std::int64_t rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return axis;
}

std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (std::int64_t i = static_cast<std::int64_t>(s.size()) - 2; i >= 0; --i) {
    st[i] = st[i + 1] * s[i + 1];
  }
  return st;
}

// ---------------------------------------------------------------------------
// Broadcasting

struct Broadcast {
  Shape out;
  std::vector<std::int64_t> sa, sb;
};

Broadcast make_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Broadcast bc;
  bc.out.assign(r, 1);
  bc.sa.assign(r, 0);
  bc.sb.assign(r, 0);
  const auto sta = strides_of(a);
  const auto stb = strides_of(b);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t ia = static_cast<std::int64_t>(i) - static_cast<std::int64_t>(r - a.size());
    const std::int64_t ib = static_cast<std::int64_t>(i) - static_cast<std::int64_t>(r - b.size());
    const std::int64_t da = ia >= 0 ? a[ia] : 1;
    const std::int64_t db = ib >= 0 ? b[ib] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b) + " on axis " + std::to_string(i));
    }
    bc.out[i] = std::max(da, db);
    bc.sa[i] = (ia >= 0 && da != 1) ? sta[ia] : 0;
    bc.sb[i] = (ib >= 0 && db != 1) ? stb[ib] : 0;
  }
  return bc;
}

template <class F>
void for_each_pair(const Broadcast& bc, F&& f) {
  const std::size_t r = bc.out.size();
  if (r == 0) {
    f(std::int64_t{0}, std::int64_t{0}, std::int64_t{0});
    return;
  }
  const std::int64_t inner = bc.out[r - 1];
  const std::int64_t sa_in = bc.sa[r - 1];
  const std::int64_t sb_in = bc.sb[r - 1];
  const std::int64_t outer = shape_numel(bc.out) / inner;
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t o = 0; o < outer; ++o) {
    const std::int64_t base = o * inner;
    for (std::int64_t j = 0; j < inner; ++j) f(base + j, oa + j * sa_in, ob + j * sb_in);
    for (std::int64_t d = static_cast<std::int64_t>(r) - 2; d >= 0; --d) {
      ++idx[d];
      oa += bc.sa[d];
      ob += bc.sb[d];
      if (idx[d] < bc.out[d]) break;
      oa -= bc.sa[d] * bc.out[d];
      ob -= bc.sb[d] * bc.out[d];
      idx[d] = 0;
    }
  }
}

template <class Fwd, class Back>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Back back) {
  Broadcast bc = make_broadcast(a.shape(), b.shape(), name);
  std::vector<double> out(static_cast<std::size_t>(shape_numel(bc.out)));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for_each_pair(bc, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
    out[o] = fwd(pa[ia], pb[ib]);
  });
  Shape shape = bc.out;
  return make_result(std::move(shape), std::move(out), name, {a, b},
                     [bc = std::move(bc), back](Node& self) {
                       Node& A = *self.inputs[0];
                       Node& B = *self.inputs[1];
                       const double* g = self.grad.data();
                       const double* xa = A.data.data();
                       const double* xb = B.data.data();
                       double* ga = A.requires_grad ? A.grad_buffer().data() : nullptr;
                       double* gb = B.requires_grad ? B.grad_buffer().data() : nullptr;
                       for_each_pair(bc, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                         back(g[o], xa[ia], xb[ib], ga ? ga + ia : nullptr,
                              gb ? gb + ib : nullptr);
                       });
                     });
}

template <class F, class D>
Tensor unary(const Tensor& x, const char* name, F f, D dfdx) {
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  return make_result(x.shape(), std::move(out), name, {x}, [dfdx](Node& self) {
    Node& X = *self.inputs[0];
    auto gx = X.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += self.grad[i] * dfdx(X.data[i], self.data[i]);
    }
  });
}

// Odometer walk over `shape` yielding (flat output index, source offset)
// where the source offset advances by `src_strides`.
template <class F>
void walk(const Shape& shape, const std::vector<std::int64_t>& src_strides, std::int64_t src_base,
          F&& f) {
  const std::size_t r = shape.size();
  if (r == 0) {
    f(std::int64_t{0}, src_base);
    return;
  }
  const std::int64_t inner = shape[r - 1];
  const std::int64_t s_in = src_strides[r - 1];
  const std::int64_t outer = shape_numel(shape) / inner;
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t off = src_base;
  for (std::int64_t o = 0; o < outer; ++o) {
    const std::int64_t base = o * inner;
    for (std::int64_t j = 0; j < inner; ++j) f(base + j, off + j * s_in);
    for (std::int64_t d = static_cast<std::int64_t>(r) - 2; d >= 0; --d) {
      ++idx[d];
      off += src_strides[d];
      if (idx[d] < shape[d]) break;
      off -= src_strides[d] * shape[d];
      idx[d] = 0;
    }
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double, double* ga, double* gb) {
        if (ga) *ga += g;
        if (gb) *gb += g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double, double* ga, double* gb) {
        if (ga) *ga += g;
        if (gb) *gb -= g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double x, double y, double* ga, double* gb) {
        if (ga) *ga += g * y;
        if (gb) *gb += g * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double g, double x, double y, double* ga, double* gb) {
        if (ga) *ga += g / y;
        if (gb) *gb -= g * x / (y * y);
      });
}

Tensor scale(const Tensor& x, double s) {
  return unary(
      x, "scale", [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary(
      x, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, "abs", [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(
      x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      x, "sqrt", [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, "silu", [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor gelu(const Tensor& x) {
  return unary(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v))); },
      [](double v, double) {
        const double u = kGeluC * (v + 0.044715 * v * v * v);
        const double th = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
        return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
      });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x, "softplus",
      [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
      [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result(Shape{}, {s}, "sum", {x}, [](Node& self) {
    Node& X = *self.inputs[0];
    const double g = self.grad[0];
    for (auto& v : X.grad_buffer()) v += g;
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result(Shape{}, {s / n}, "mean", {x}, [n](Node& self) {
    Node& X = *self.inputs[0];
    const double g = self.grad[0] / n;
    for (auto& v : X.grad_buffer()) v += g;
  });
}

Tensor mean_axis(const Tensor& x, std::int64_t axis) {
  const Shape& s = x.shape();
  axis = normalize_axis(axis, x.rank());
  const std::int64_t outer = std::accumulate(s.begin(), s.begin() + axis, std::int64_t{1},
                                             std::multiplies<>());
  const std::int64_t n = s[axis];
  const std::int64_t inner = std::accumulate(s.begin() + axis + 1, s.end(), std::int64_t{1},
                                             std::multiplies<>());
  std::vector<double> out(static_cast<std::size_t>(outer * inner), 0.0);
  const double* px = x.data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t a = 0; a < n; ++a) {
      const double* src = px + (o * n + a) * inner;
      double* dst = out.data() + o * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  for (auto& v : out) v /= static_cast<double>(n);
  Shape os = s;
  os[axis] = 1;
  return make_result(std::move(os), std::move(out), "mean_axis", {x},
                     [outer, n, inner](Node& self) {
                       Node& X = *self.inputs[0];
                       auto gx = X.grad_buffer();
                       const double inv = 1.0 / static_cast<double>(n);
                       for (std::int64_t o = 0; o < outer; ++o) {
                         for (std::int64_t a = 0; a < n; ++a) {
                           double* dst = gx.data() + (o * n + a) * inner;
                           const double* g = self.grad.data() + o * inner;
                           for (std::int64_t i = 0; i < inner; ++i) dst[i] += g[i] * inv;
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), "reshape", {x}, [](Node& self) {
    Node& X = *self.inputs[0];
    auto gx = X.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::int64_t>& order) {
  const Shape& s = x.shape();
  if (order.size() != s.size()) {
    throw ShapeError("permute order has " + std::to_string(order.size()) + " axes, tensor has " +
                     std::to_string(s.size()));
  }
  std::vector<bool> seen(s.size(), false);
  for (auto o : order) {
    if (o < 0 || o >= static_cast<std::int64_t>(s.size()) || seen[o]) {
      throw ShapeError("permute order is not a permutation");
    }
    seen[o] = true;
  }
  const auto st = strides_of(s);
  Shape os(s.size());
  std::vector<std::int64_t> src(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    os[i] = s[order[i]];
    src[i] = st[order[i]];
  }
  std::vector<double> out(static_cast<std::size_t>(x.numel()));
  const double* px = x.data().data();
  walk(os, src, 0, [&](std::int64_t o, std::int64_t i) { out[o] = px[i]; });
  Shape shape_copy = os;
  return make_result(std::move(os), std::move(out), "permute", {x},
                     [shape_copy, src](Node& self) {
                       Node& X = *self.inputs[0];
                       double* gx = X.grad_buffer().data();
                       const double* g = self.grad.data();
                       walk(shape_copy, src, 0,
                            [&](std::int64_t o, std::int64_t i) { gx[i] += g[o]; });
                     });
}

Tensor crop(const Tensor& x, const std::vector<std::int64_t>& offsets, const Shape& extents) {
  const Shape& s = x.shape();
  if (offsets.size() != s.size() || extents.size() != s.size()) {
    throw ShapeError("crop rank mismatch for tensor " + shape_str(s));
  }
  const auto st = strides_of(s);
  std::int64_t base = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (offsets[i] < 0 || extents[i] <= 0 || offsets[i] + extents[i] > s[i]) {
      throw ShapeError("crop window [" + std::to_string(offsets[i]) + ", " +
                       std::to_string(offsets[i] + extents[i]) + ") exceeds axis " +
                       std::to_string(i) + " of extent " + std::to_string(s[i]));
    }
    base += offsets[i] * st[i];
  }
  std::vector<double> out(static_cast<std::size_t>(shape_numel(extents)));
  const double* px = x.data().data();
  walk(extents, st, base, [&](std::int64_t o, std::int64_t i) { out[o] = px[i]; });
  return make_result(extents, std::move(out), "crop", {x}, [extents, st, base](Node& self) {
    Node& X = *self.inputs[0];
    double* gx = X.grad_buffer().data();
    const double* g = self.grad.data();
    walk(extents, st, base, [&](std::int64_t o, std::int64_t i) { gx[i] += g[o]; });
  });
}

Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t length) {
  axis = normalize_axis(axis, x.rank());
  std::vector<std::int64_t> off(x.shape().size(), 0);
  Shape ext = x.shape();
  off[axis] = start;
  ext[axis] = length;
  return crop(x, off, ext);
}

Tensor place(const Tensor& x, const Shape& full, const std::vector<std::int64_t>& offsets) {
  const Shape& s = x.shape();
  if (offsets.size() != s.size() || full.size() != s.size()) {
    throw ShapeError("place rank mismatch for tensor " + shape_str(s));
  }
  const auto st = strides_of(full);
  std::int64_t base = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (offsets[i] < 0 || offsets[i] + s[i] > full[i]) {
      throw ShapeError("place window exceeds axis " + std::to_string(i) + " of extent " +
                       std::to_string(full[i]));
    }
    base += offsets[i] * st[i];
  }
  std::vector<double> out(static_cast<std::size_t>(shape_numel(full)), 0.0);
  const double* px = x.data().data();
  walk(s, st, base, [&](std::int64_t o, std::int64_t i) { out[i] = px[o]; });
  Shape xs = s;
  return make_result(full, std::move(out), "place", {x}, [xs, st, base](Node& self) {
    Node& X = *self.inputs[0];
    double* gx = X.grad_buffer().data();
    const double* g = self.grad.data();
    walk(xs, st, base, [&](std::int64_t o, std::int64_t i) { gx[o] += g[i]; });
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  axis = normalize_axis(axis, static_cast<std::int64_t>(s0.size()));
  std::int64_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<std::int64_t>(i) != axis && s[i] != s0[i]) {
        throw ShapeError("concat extent mismatch on axis " + std::to_string(i) + ": " +
                         shape_str(s) + " vs " + shape_str(s0));
      }
    }
    total += s[axis];
  }
  const std::int64_t outer = std::accumulate(s0.begin(), s0.begin() + axis, std::int64_t{1},
                                             std::multiplies<>());
  const std::int64_t inner = std::accumulate(s0.begin() + axis + 1, s0.end(), std::int64_t{1},
                                             std::multiplies<>());
  Shape os = s0;
  os[axis] = total;
  std::vector<double> out(static_cast<std::size_t>(shape_numel(os)));
  std::vector<std::int64_t> widths;
  std::int64_t at = 0;
  for (const auto& p : parts) {
    const std::int64_t w = p.shape()[axis] * inner;
    const double* src = p.data().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy(src + o * w, src + (o + 1) * w, out.data() + o * total * inner + at);
    }
    widths.push_back(w);
    at += w;
  }
  return make_result(std::move(os), std::move(out), "concat", parts,
                     [outer, inner, total, widths](Node& self) {
                       std::int64_t at = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         Node& P = *self.inputs[k];
                         const std::int64_t w = widths[k];
                         if (P.requires_grad) {
                           double* gp = P.grad_buffer().data();
                           for (std::int64_t o = 0; o < outer; ++o) {
                             const double* g = self.grad.data() + o * total * inner + at;
                             for (std::int64_t i = 0; i < w; ++i) gp[o * w + i] += g[i];
                           }
                         }
                         at += w;
                       }
                     });
}

Tensor index_select(const Tensor& x, std::int64_t axis, const std::vector<std::int64_t>& indices) {
  const Shape& s = x.shape();
  axis = normalize_axis(axis, x.rank());
  for (auto i : indices) {
    if (i < 0 || i >= s[axis]) {
      throw ShapeError("index " + std::to_string(i) + " out of range on axis " +
                       std::to_string(axis));
    }
  }
  if (indices.empty()) throw ShapeError("index_select with no indices");
  const std::int64_t outer = std::accumulate(s.begin(), s.begin() + axis, std::int64_t{1},
                                             std::multiplies<>());
  const std::int64_t inner = std::accumulate(s.begin() + axis + 1, s.end(), std::int64_t{1},
                                             std::multiplies<>());
  const std::int64_t n_in = s[axis];
  const std::int64_t n_out = static_cast<std::int64_t>(indices.size());
  Shape os = s;
  os[axis] = n_out;
  std::vector<double> out(static_cast<std::size_t>(shape_numel(os)));
  const double* px = x.data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t j = 0; j < n_out; ++j) {
      const double* src = px + (o * n_in + indices[j]) * inner;
      std::copy(src, src + inner, out.data() + (o * n_out + j) * inner);
    }
  }
  return make_result(std::move(os), std::move(out), "index_select", {x},
                     [outer, inner, n_in, n_out, indices](Node& self) {
                       Node& X = *self.inputs[0];
                       double* gx = X.grad_buffer().data();
                       for (std::int64_t o = 0; o < outer; ++o) {
                         for (std::int64_t j = 0; j < n_out; ++j) {
                           double* dst = gx + (o * n_in + indices[j]) * inner;
                           const double* g = self.grad.data() + (o * n_out + j) * inner;
                           for (std::int64_t i = 0; i < inner; ++i) dst[i] += g[i];
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2) throw ShapeError("matmul: left operand needs rank >= 2");
  if (sb.size() == 2) {
    const std::int64_t k = sa.back();
    if (sb[0] != k) {
      throw ShapeError("matmul: inner extents differ (" + std::to_string(k) + " vs " +
                       std::to_string(sb[0]) + ") on axis -1 of " + shape_str(sa));
    }
    const std::int64_t n = sb[1];
    const std::int64_t rows = a.numel() / k;
    Shape os = sa;
    os.back() = n;
    std::vector<double> out(static_cast<std::size_t>(rows * n));
    kernels::gemm(rows, n, k, a.data().data(), b.data().data(), out.data(), false);
    return make_result(std::move(os), std::move(out), "matmul", {a, b},
                       [rows, n, k](Node& self) {
                         Node& A = *self.inputs[0];
                         Node& B = *self.inputs[1];
                         const double* g = self.grad.data();
                         if (A.requires_grad) {
                           std::vector<double> bt(static_cast<std::size_t>(k * n));
                           kernels::transpose(k, n, B.data.data(), bt.data());
                           kernels::gemm(rows, k, n, g, bt.data(), A.grad_buffer().data(), true);
                         }
                         if (B.requires_grad) {
                           std::vector<double> at(static_cast<std::size_t>(rows * k));
                           kernels::transpose(rows, k, A.data.data(), at.data());
                           kernels::gemm(k, n, rows, at.data(), g, B.grad_buffer().data(), true);
                         }
                       });
  }
  if (sb.size() == 3 && sa.size() == 3) {
    const std::int64_t batch = sa[0], m = sa[1], k = sa[2], n = sb[2];
    if (sb[0] != batch) throw ShapeError("matmul: batch extents differ on axis 0");
    if (sb[1] != k) throw ShapeError("matmul: inner extents differ on axis -1");
    std::vector<double> out(static_cast<std::size_t>(batch * m * n));
    for (std::int64_t i = 0; i < batch; ++i) {
      kernels::gemm(m, n, k, a.data().data() + i * m * k, b.data().data() + i * k * n,
                    out.data() + i * m * n, false);
    }
    return make_result(Shape{batch, m, n}, std::move(out), "bmm", {a, b},
                       [batch, m, n, k](Node& self) {
                         Node& A = *self.inputs[0];
                         Node& B = *self.inputs[1];
                         std::vector<double> tmp(static_cast<std::size_t>(std::max(k * n, m * k)));
                         for (std::int64_t i = 0; i < batch; ++i) {
                           const double* g = self.grad.data() + i * m * n;
                           if (A.requires_grad) {
                             kernels::transpose(k, n, B.data.data() + i * k * n, tmp.data());
                             kernels::gemm(m, k, n, g, tmp.data(),
                                           A.grad_buffer().data() + i * m * k, true);
                           }
                           if (B.requires_grad) {
                             kernels::transpose(m, k, A.data.data() + i * m * k, tmp.data());
                             kernels::gemm(k, n, m, tmp.data(), g,
                                           B.grad_buffer().data() + i * k * n, true);
                           }
                         }
                       });
  }
  throw ShapeError("matmul: unsupported operand ranks " + shape_str(sa) + " x " + shape_str(sb));
}

// ---------------------------------------------------------------------------
// Convolution

Tensor conv3d(const Tensor& input, const Tensor& kernel, Stride3 stride, PaddingMode mode) {
  const Shape& si = input.shape();
  const Shape& sk = kernel.shape();
  if (si.size() != 5) throw ShapeError("conv3d: input must be [N,C,T,H,W], got " + shape_str(si));
  if (sk.size() != 5) {
    throw ShapeError("conv3d: kernel must be [Co,Ci,kt,kh,kw], got " + shape_str(sk));
  }
  if (sk[1] != si[1]) {
    throw ShapeError("conv3d: channel axis mismatch, input has " + std::to_string(si[1]) +
                     " channels, kernel expects " + std::to_string(sk[1]));
  }
  if (stride.t < 1 || stride.h < 1 || stride.w < 1) {
    throw ShapeError("conv3d: stride components must be >= 1");
  }
  kernels::ConvGeometry g{};
  g.in_c = si[1];
  g.in_t = si[2];
  g.in_h = si[3];
  g.in_w = si[4];
  g.k_t = sk[2];
  g.k_h = sk[3];
  g.k_w = sk[4];
  g.s_t = stride.t;
  g.s_h = stride.h;
  g.s_w = stride.w;
  auto pads = [mode](std::int64_t k, bool temporal) -> std::pair<std::int64_t, std::int64_t> {
    if (mode == PaddingMode::valid) return {0, 0};
    if (mode == PaddingMode::causal_temporal && temporal) return {k - 1, 0};
    const std::int64_t front = (k - 1) / 2;
    return {front, k - 1 - front};
  };
  const char* names[3] = {"time", "height", "width"};
  const std::int64_t ins[3] = {g.in_t, g.in_h, g.in_w};
  const std::int64_t ks[3] = {g.k_t, g.k_h, g.k_w};
  const std::int64_t ss[3] = {g.s_t, g.s_h, g.s_w};
  std::int64_t front[3], outs[3];
  for (int a = 0; a < 3; ++a) {
    auto [f, b] = pads(ks[a], a == 0);
    const std::int64_t padded = ins[a] + f + b;
    if (ks[a] > padded) {
      throw ShapeError("conv3d: kernel extent " + std::to_string(ks[a]) + " exceeds padded " +
                       names[a] + " extent " + std::to_string(padded));
    }
    front[a] = f;
    outs[a] = (padded - ks[a]) / ss[a] + 1;
  }
  g.pad_t = front[0];
  g.pad_h = front[1];
  g.pad_w = front[2];
  g.out_t = outs[0];
  g.out_h = outs[1];
  g.out_w = outs[2];

  const std::int64_t n = si[0];
  const std::int64_t co = sk[0];
  const std::int64_t kk = g.patch_size();
  const std::int64_t pos = g.out_positions();
  const std::int64_t in_vol = g.in_c * g.in_t * g.in_h * g.in_w;
  std::vector<double> out(static_cast<std::size_t>(n * co * pos));
  std::vector<double> cols(static_cast<std::size_t>(kk * pos));
  for (std::int64_t b = 0; b < n; ++b) {
    kernels::im2col(g, input.data().data() + b * in_vol, cols.data());
    kernels::gemm(co, pos, kk, kernel.data().data(), cols.data(), out.data() + b * co * pos,
                  false);
  }
  return make_result(
      Shape{n, co, g.out_t, g.out_h, g.out_w}, std::move(out), "conv3d", {input, kernel},
      [g, n, co, kk, pos, in_vol](Node& self) {
        Node& X = *self.inputs[0];
        Node& K = *self.inputs[1];
        std::vector<double> cols(static_cast<std::size_t>(kk * pos));
        std::vector<double> colst;
        std::vector<double> kt;
        if (K.requires_grad) colst.resize(static_cast<std::size_t>(kk * pos));
        if (X.requires_grad) {
          kt.resize(static_cast<std::size_t>(kk * co));
          kernels::transpose(co, kk, K.data.data(), kt.data());
        }
        for (std::int64_t b = 0; b < n; ++b) {
          const double* gout = self.grad.data() + b * co * pos;
          if (K.requires_grad) {
            kernels::im2col(g, X.data.data() + b * in_vol, cols.data());
            kernels::transpose(kk, pos, cols.data(), colst.data());
            kernels::gemm(co, kk, pos, gout, colst.data(), K.grad_buffer().data(), true);
          }
          if (X.requires_grad) {
            kernels::gemm(kk, pos, co, kt.data(), gout, cols.data(), false);
            kernels::col2im(g, cols.data(), X.grad_buffer().data() + b * in_vol);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Attention

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const Shape& s = q.shape();
  if (s.size() != 4) throw ShapeError("attention: q must be [B,h,L,d], got " + shape_str(s));
  const char* axes[4] = {"batch", "heads", "length", "head_dim"};
  for (const Tensor* t : {&k, &v}) {
    const Shape& o = t->shape();
    if (o.size() != 4) throw ShapeError("attention: k/v must be rank 4");
    for (int a = 0; a < 4; ++a) {
      if (o[a] != s[a]) {
        throw ShapeError(std::string("attention: ") + axes[a] + " axis mismatch (" +
                         std::to_string(s[a]) + " vs " + std::to_string(o[a]) + ")");
      }
    }
  }
  const std::int64_t bh = s[0] * s[1], L = s[2], d = s[3];
  if (d == 0) throw ShapeError("attention: head_dim axis is zero");
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> probs(static_cast<std::size_t>(bh * L * L));
  std::vector<double> out(static_cast<std::size_t>(bh * L * d), 0.0);
  const double* pq = q.data().data();
  const double* pk = k.data().data();
  const double* pv = v.data().data();
  for (std::int64_t h = 0; h < bh; ++h) {
    const double* Q = pq + h * L * d;
    const double* K = pk + h * L * d;
    const double* V = pv + h * L * d;
    double* P = probs.data() + h * L * L;
    double* O = out.data() + h * L * d;
    for (std::int64_t i = 0; i < L; ++i) {
      double* row = P + i * L;
      double mx = -INFINITY;
      for (std::int64_t j = 0; j < L; ++j) {
        double acc = 0.0;
        for (std::int64_t c = 0; c < d; ++c) acc += Q[i * d + c] * K[j * d + c];
        row[j] = acc * inv;
        mx = std::max(mx, row[j]);
      }
      double z = 0.0;
      for (std::int64_t j = 0; j < L; ++j) {
        row[j] = std::exp(row[j] - mx);
        z += row[j];
      }
      for (std::int64_t j = 0; j < L; ++j) row[j] /= z;
      double* orow = O + i * d;
      for (std::int64_t j = 0; j < L; ++j) {
        const double p = row[j];
        const double* vrow = V + j * d;
        for (std::int64_t c = 0; c < d; ++c) orow[c] += p * vrow[c];
      }
    }
  }
  return make_result(
      s, std::move(out), "attention", {q, k, v},
      [probs = std::move(probs), bh, L, d, inv](Node& self) {
        Node& Qn = *self.inputs[0];
        Node& Kn = *self.inputs[1];
        Node& Vn = *self.inputs[2];
        double* gq = Qn.requires_grad ? Qn.grad_buffer().data() : nullptr;
        double* gk = Kn.requires_grad ? Kn.grad_buffer().data() : nullptr;
        double* gv = Vn.requires_grad ? Vn.grad_buffer().data() : nullptr;
        std::vector<double> dp(static_cast<std::size_t>(L));
        for (std::int64_t h = 0; h < bh; ++h) {
          const double* Q = Qn.data.data() + h * L * d;
          const double* K = Kn.data.data() + h * L * d;
          const double* V = Vn.data.data() + h * L * d;
          const double* P = probs.data() + h * L * L;
          const double* G = self.grad.data() + h * L * d;
          for (std::int64_t i = 0; i < L; ++i) {
            const double* prow = P + i * L;
            const double* grow = G + i * d;
            if (gv) {
              for (std::int64_t j = 0; j < L; ++j) {
                double* dst = gv + h * L * d + j * d;
                for (std::int64_t c = 0; c < d; ++c) dst[c] += prow[j] * grow[c];
              }
            }
            if (!gq && !gk) continue;
            double dot = 0.0;
            for (std::int64_t j = 0; j < L; ++j) {
              double acc = 0.0;
              for (std::int64_t c = 0; c < d; ++c) acc += grow[c] * V[j * d + c];
              dp[j] = acc;
              dot += acc * prow[j];
            }
            for (std::int64_t j = 0; j < L; ++j) {
              const double ds = prow[j] * (dp[j] - dot) * inv;
              if (gq) {
                double* dst = gq + h * L * d + i * d;
                for (std::int64_t c = 0; c < d; ++c) dst[c] += ds * K[j * d + c];
              }
              if (gk) {
                double* dst = gk + h * L * d + j * d;
                for (std::int64_t c = 0; c < d; ++c) dst[c] += ds * Q[i * d + c];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization and rotary embedding

Tensor layer_norm(const Tensor& x, double eps) {
  const std::int64_t d = x.shape().empty() ? 1 : x.shape().back();
  const std::int64_t rows = x.numel() / d;
  std::vector<double> out(static_cast<std::size_t>(x.numel()));
  std::vector<double> rstd(static_cast<std::size_t>(rows));
  const double* px = x.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double mu = 0.0;
    for (std::int64_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::int64_t c = 0; c < d; ++c) out[r * d + c] = (row[c] - mu) * rs;
  }
  return make_result(x.shape(), std::move(out), "layer_norm", {x},
                     [rstd = std::move(rstd), rows, d](Node& self) {
                       Node& X = *self.inputs[0];
                       double* gx = X.grad_buffer().data();
                       const double inv_d = 1.0 / static_cast<double>(d);
                       for (std::int64_t r = 0; r < rows; ++r) {
                         const double* y = self.data.data() + r * d;
                         const double* g = self.grad.data() + r * d;
                         double mg = 0.0, mgy = 0.0;
                         for (std::int64_t c = 0; c < d; ++c) {
                           mg += g[c];
                           mgy += g[c] * y[c];
                         }
                         mg *= inv_d;
                         mgy *= inv_d;
                         for (std::int64_t c = 0; c < d; ++c) {
                           gx[r * d + c] += rstd[r] * (g[c] - mg - y[c] * mgy);
                         }
                       }
                     });
}

Tensor rotary(const Tensor& x, const Tensor& cos, const Tensor& sin) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("rotary: input needs rank >= 2");
  const std::int64_t L = s[s.size() - 2], D = s.back();
  if (D % 2 != 0) throw ShapeError("rotary: channel axis extent must be even");
  const Shape table{L, D / 2};
  if (cos.shape() != table || sin.shape() != table) {
    throw ShapeError("rotary: angle tables must be " + shape_str(table) + ", got " +
                     shape_str(cos.shape()));
  }
  const std::int64_t outer = x.numel() / (L * D);
  const double* px = x.data().data();
  const double* pc = cos.data().data();
  const double* ps = sin.data().data();
  std::vector<double> out(static_cast<std::size_t>(x.numel()));
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t l = 0; l < L; ++l) {
      const double* src = px + (o * L + l) * D;
      double* dst = out.data() + (o * L + l) * D;
      for (std::int64_t p = 0; p < D / 2; ++p) {
        const double c = pc[l * (D / 2) + p], sn = ps[l * (D / 2) + p];
        const double a = src[2 * p], b = src[2 * p + 1];
        dst[2 * p] = a * c - b * sn;
        dst[2 * p + 1] = a * sn + b * c;
      }
    }
  }
  std::vector<double> cv(cos.data().begin(), cos.data().end());
  std::vector<double> sv(sin.data().begin(), sin.data().end());
  return make_result(s, std::move(out), "rotary", {x},
                     [cv = std::move(cv), sv = std::move(sv), outer, L, D](Node& self) {
                       Node& X = *self.inputs[0];
                       double* gx = X.grad_buffer().data();
                       for (std::int64_t o = 0; o < outer; ++o) {
                         for (std::int64_t l = 0; l < L; ++l) {
                           const double* g = self.grad.data() + (o * L + l) * D;
                           double* dst = gx + (o * L + l) * D;
                           for (std::int64_t p = 0; p < D / 2; ++p) {
                             const double c = cv[l * (D / 2) + p], sn = sv[l * (D / 2) + p];
                             dst[2 * p] += g[2 * p] * c + g[2 * p + 1] * sn;
                             dst[2 * p + 1] += -g[2 * p] * sn + g[2 * p + 1] * c;
                           }
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Losses

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mse: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  return mean(square(sub(a, b)));
}

Tensor l1(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("l1: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  return mean(abs(sub(a, b)));
}

bool all_finite(const Tensor& x) {
  for (double v : x.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace tinyvid
