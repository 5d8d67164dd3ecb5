// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

// Small velocity models with closed-form behavior, used as oracles.

#pragma once

#include <memory>

#include "tinyvid/flow.hpp"
#include "tinyvid/nn.hpp"
#include "tinyvid/ops.hpp"

namespace tinyvid::testing {

/// v(x, t, c) = c everywhere.
class ConstantVelocity : public VelocityModel {
 public:
  explicit ConstantVelocity(double c) : c_(c) {}
  Tensor velocity(const Tensor& x, std::span<const double>, const Captions&,
                  std::span<const double> = {}) const override {
    return Tensor::full(x.shape(), c_);
  }
  ParamList parameters() const override { return {}; }

 private:
  double c_;
};

/// v(x) = a x + b, constant in t and caption.
class AffineVelocity : public VelocityModel {
 public:
  AffineVelocity(double a, double b) : a_(a), b_(b) {}
  Tensor velocity(const Tensor& x, std::span<const double>, const Captions&,
                  std::span<const double> = {}) const override {
    return scale(x, a_) + b_;
  }
  ParamList parameters() const override { return {}; }

 private:
  double a_, b_;
};

/// Returns a fixed tensor regardless of input; an oracle when set to x1 - x0.
class FixedVelocity : public VelocityModel {
 public:
  explicit FixedVelocity(Tensor v) : v_(std::move(v)) {}
  Tensor velocity(const Tensor&, std::span<const double>, const Captions&,
                  std::span<const double> = {}) const override {
    return v_;
  }
  ParamList parameters() const override { return {}; }

 private:
  Tensor v_;
};

/// Conditional-only / unconditional-only velocities that differ per caption:
/// v = x + (caption is all padding ? -1 : +2).
class CaptionSwitchVelocity : public VelocityModel {
 public:
  Tensor velocity(const Tensor& x, std::span<const double>, const Captions& captions,
                  std::span<const double> = {}) const override {
    Tensor out = x.detach();
    const auto per = x.numel() / x.dim(0);
    auto d = out.mutable_data();
    for (std::size_t b = 0; b < captions.size(); ++b) {
      bool null = true;
      for (auto id : captions[b]) null = null && id == kPadToken;
      for (std::int64_t i = 0; i < per; ++i) d[b * per + i] += null ? -1.0 : 2.0;
    }
    return out;
  }
  ParamList parameters() const override { return {}; }
};

/// Linear velocity over flattened latents [B, D]:
///   teacher: v = x W + b + p(c) U
///   student: v = x W + b + (1 + e(g)) p(c) U,  e(g) = w_g g + b_g (zero init)
/// p(c) is the mean embedding of non-padding tokens; the null caption gives 0.
/// The teacher's CFG output is x W + b + g p(c) U, which the student matches
/// exactly at e(g) = g - 1.
class LinearToyModel : public VelocityModel {
 public:
  LinearToyModel(std::int64_t dim, std::int64_t vocab, std::int64_t cond_dim, Rng& rng)
      : w_(make_param({dim, dim}, rng, 0.3)),
        b_(make_param({dim}, rng, 0.3)),
        u_(make_param({cond_dim, dim}, rng, 0.5)),
        emb_(make_param({vocab, cond_dim}, rng, 1.0)) {}

  /// Parameter copy of `teacher` with a zero-initialized guidance input.
  static std::unique_ptr<LinearToyModel> student_of(const LinearToyModel& teacher) {
    auto s = std::unique_ptr<LinearToyModel>(new LinearToyModel(teacher));
    s->w_ = teacher.w_.detach().set_requires_grad(true);
    s->b_ = teacher.b_.detach().set_requires_grad(true);
    s->u_ = teacher.u_.detach().set_requires_grad(true);
    s->emb_ = teacher.emb_.detach().set_requires_grad(true);
    s->gw_ = make_zero_param({1});
    s->gb_ = make_zero_param({1});
    return s;
  }

  Tensor velocity(const Tensor& x, std::span<const double>, const Captions& captions,
                  std::span<const double> guidance = {}) const override {
    const auto b = x.dim(0);
    const auto vocab = emb_.dim(0);
    // Pooling matrix [B, vocab]: mean over non-padding tokens.
    std::vector<double> pool(static_cast<std::size_t>(b * vocab), 0.0);
    for (std::int64_t i = 0; i < b; ++i) {
      std::int64_t n = 0;
      for (auto id : captions[static_cast<std::size_t>(i)]) n += id != kPadToken;
      for (auto id : captions[static_cast<std::size_t>(i)]) {
        if (id != kPadToken) pool[static_cast<std::size_t>(i * vocab + id)] += 1.0 / n;
      }
    }
    const Tensor p = matmul(Tensor({b, vocab}, std::move(pool)), emb_);
    Tensor cond = matmul(p, u_);
    if (gw_.defined()) {
      Tensor g = guidance.empty() ? Tensor::ones({b, 1})
                                  : Tensor({b, 1}, std::vector<double>(guidance.begin(), guidance.end()));
      cond = cond * (g * gw_ + gb_ + 1.0);
    }
    return matmul(x, w_) + b_ + cond;
  }

  ParamList parameters() const override {
    ParamList out{{"w", w_}, {"b", b_}, {"u", u_}, {"emb", emb_}};
    if (gw_.defined()) {
      out.push_back({"guidance.w", gw_});
      out.push_back({"guidance.b", gb_});
    }
    return out;
  }
  bool accepts_guidance() const override { return gw_.defined(); }

 private:
  LinearToyModel(const LinearToyModel&) = default;
  Tensor w_, b_, u_, emb_;
  Tensor gw_, gb_;
};

}  // namespace tinyvid::testing
