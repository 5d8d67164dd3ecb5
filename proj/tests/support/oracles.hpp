// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

// Independent reference implementations used only by tests. Nothing here
// shares code with the library kernels it checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "tinyvid/ops.hpp"
#include "tinyvid/tensor.hpp"

namespace tinyvid::testing {

/// Central finite differences of a scalar function against the analytic
/// gradient of every input. Returns the largest relative error, where the
/// denominator is floored at `floor` so vanishing gradients compare in
/// absolute terms.
inline double gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                        const std::vector<Tensor>& inputs, double eps = 1e-5,
                        double floor = 1e-3) {
  for (const auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor out = fn(inputs);
  out.backward();
  double worst = 0.0;
  for (const auto& t : inputs) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      double plus, minus;
      {
        NoGradGuard ng;
        data[i] = orig + eps;
        plus = fn(inputs).item();
        data[i] = orig - eps;
        minus = fn(inputs).item();
        data[i] = orig;
      }
      const double numeric = (plus - minus) / (2.0 * eps);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), floor});
      worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
    }
  }
  return worst;
}

/// Direct six-loop convolution with explicit padding arithmetic.
inline Tensor naive_conv3d(const Tensor& x, const Tensor& w, Stride3 s, PaddingMode mode) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const long N = xs[0], C = xs[1], T = xs[2], H = xs[3], W = xs[4];
  const long O = ws[0], kt = ws[2], kh = ws[3], kw = ws[4];
  auto front = [&](long k, bool temporal) -> long {
    if (mode == PaddingMode::valid) return 0;
    if (mode == PaddingMode::causal_temporal && temporal) return k - 1;
    return (k - 1) / 2;
  };
  auto total = [&](long k, bool temporal) -> long {
    if (mode == PaddingMode::valid) return 0;
    if (mode == PaddingMode::causal_temporal && temporal) return k - 1;
    return k - 1;
  };
  const long pt = front(kt, true), ph = front(kh, false), pw = front(kw, false);
  const long To = (T + total(kt, true) - kt) / s.t + 1;
  const long Ho = (H + total(kh, false) - kh) / s.h + 1;
  const long Wo = (W + total(kw, false) - kw) / s.w + 1;
  Tensor out = Tensor::zeros({N, O, To, Ho, Wo});
  auto od = out.mutable_data();
  auto xd = x.data();
  auto wd = w.data();
  for (long n = 0; n < N; ++n)
    for (long o = 0; o < O; ++o)
      for (long t = 0; t < To; ++t)
        for (long h = 0; h < Ho; ++h)
          for (long ww = 0; ww < Wo; ++ww) {
            double acc = 0.0;
            for (long c = 0; c < C; ++c)
              for (long a = 0; a < kt; ++a)
                for (long b = 0; b < kh; ++b)
                  for (long e = 0; e < kw; ++e) {
                    const long it = t * s.t + a - pt, ih = h * s.h + b - ph, iw = ww * s.w + e - pw;
                    if (it < 0 || it >= T || ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                    acc += xd[(((n * C + c) * T + it) * H + ih) * W + iw] *
                           wd[(((o * C + c) * kt + a) * kh + b) * kw + e];
                  }
            od[(((n * O + o) * To + t) * Ho + h) * Wo + ww] = acc;
          }
  return out;
}

/// Three-loop softmax attention straight from the definition.
inline Tensor naive_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const auto& s = q.shape();
  const long BH = s[0] * s[1], L = s[2], d = s[3];
  Tensor out = Tensor::zeros(s);
  auto od = out.mutable_data();
  auto qd = q.data(), kd = k.data(), vd = v.data();
  for (long b = 0; b < BH; ++b)
    for (long i = 0; i < L; ++i) {
      std::vector<double> logits(L);
      for (long j = 0; j < L; ++j) {
        double dot = 0.0;
        for (long c = 0; c < d; ++c) dot += qd[(b * L + i) * d + c] * kd[(b * L + j) * d + c];
        logits[j] = dot / std::sqrt(static_cast<double>(d));
      }
      double z = 0.0;
      for (long j = 0; j < L; ++j) z += std::exp(logits[j]);
      for (long j = 0; j < L; ++j)
        for (long c = 0; c < d; ++c)
          od[(b * L + i) * d + c] += std::exp(logits[j]) / z * vd[(b * L + j) * d + c];
    }
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

inline double max_rel_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double d = std::abs(a.data()[i] - b.data()[i]);
    m = std::max(m, d / std::max(1.0, std::abs(b.data()[i])));
  }
  return m;
}

}  // namespace tinyvid::testing
