// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "tinyvid/tensor.hpp"

namespace tinyvid {

// Elementwise binary ops broadcast numpy-style (trailing axes aligned,
// extent-1 axes stretched). Gradients are summed back to each input's shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor neg(const Tensor& x);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
/// tanh approximation of GELU.
Tensor gelu(const Tensor& x);
Tensor softplus(const Tensor& x);
/// Values outside [lo, hi] are clamped and pass no gradient.
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over one axis; the axis is kept with extent 1.
Tensor mean_axis(const Tensor& x, std::int64_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::int64_t>& order);
/// Sub-block [offsets, offsets + extents) of x.
Tensor crop(const Tensor& x, const std::vector<std::int64_t>& offsets, const Shape& extents);
Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t length);
/// Zero tensor of `full` shape with x written at `offsets`; adjoint of crop.
Tensor place(const Tensor& x, const Shape& full, const std::vector<std::int64_t>& offsets);
Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis);
/// Gathers entries along `axis`; indices may repeat (gradients add up).
Tensor index_select(const Tensor& x, std::int64_t axis, const std::vector<std::int64_t>& indices);

/// [..., M, K] x [K, N] -> [..., M, N], or batched [B, M, K] x [B, K, N].
Tensor matmul(const Tensor& a, const Tensor& b);

enum class PaddingMode {
  zero,             // symmetric zero padding, (k-1)/2 in front
  causal_temporal,  // k_t-1 frames in front of time only; symmetric in space
  valid,            // no padding
};

struct Stride3 {
  std::int64_t t = 1, h = 1, w = 1;
};

/// input [N, C_in, T, H, W], kernel [C_out, C_in, k_t, k_h, k_w].
Tensor conv3d(const Tensor& input, const Tensor& kernel, Stride3 stride, PaddingMode mode);

/// Scaled dot-product attention over [B, heads, L, d]:
/// softmax(q k^T / sqrt(d)) v.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

/// Normalizes the last axis to zero mean and unit variance (no affine).
Tensor layer_norm(const Tensor& x, double eps = 1e-6);

/// Rotates consecutive channel pairs of x [..., L, D] by per-position angles
/// given as cos/sin tables [L, D/2].
Tensor rotary(const Tensor& x, const Tensor& cos, const Tensor& sin);

Tensor mse(const Tensor& a, const Tensor& b);
Tensor l1(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

/// True when every element is finite.
bool all_finite(const Tensor& x);

}  // namespace tinyvid
