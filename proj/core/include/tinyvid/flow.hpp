// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

// Flow-matching objective, inference time schedules and the Euler sampler
// with classifier-free guidance.
//
// Time conventions. Training uses the interpolant
//     x_t = (1 - t) x0 + t x1,   x0 ~ N(0, I), x1 = data,
// whose velocity is u = x1 - x0. Inference schedules are written in noise
// level sigma = 1 - t: they start at sigma = 1 (pure noise) and end at
// sigma = 0. A model is always queried with the training-time t = 1 - sigma.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tinyvid/nn.hpp"
#include "tinyvid/rng.hpp"
#include "tinyvid/tensor.hpp"

namespace tinyvid {

/// Padded caption token ids, one row per batch item. Token 0 is padding.
using TokenIds = std::vector<std::int64_t>;
using Captions = std::vector<TokenIds>;

inline constexpr std::int64_t kPadToken = 0;

/// All-padding caption used as the unconditional input.
TokenIds null_caption(std::size_t length);
Captions null_captions(const Captions& like);

/// Anything that predicts a velocity field for a batch of noisy latents.
class VelocityModel {
 public:
  virtual ~VelocityModel() = default;

  /// x_t: [B, ...]; t, captions (and guidance, when non-empty) have B entries.
  virtual Tensor velocity(const Tensor& x_t, std::span<const double> t, const Captions& captions,
                          std::span<const double> guidance = {}) const = 0;
  virtual ParamList parameters() const = 0;
  /// True for guidance-distilled students that take a guidance scale input.
  virtual bool accepts_guidance() const { return false; }
};

// ---------------------------------------------------------------------------
// Training objective

struct FlowSample {
  Tensor x0;
  Tensor x1;
  double t = 0.0;
  Tensor x_t;
  Tensor u_t;
};

/// Builds the linear interpolant and its target velocity.
FlowSample make_flow_sample(const Tensor& x0, const Tensor& x1, double t);

/// t = sigmoid(n), n ~ N(mu, sigma^2).
double sample_t_logit_normal(Rng& rng, double mu = 0.0, double sigma = 1.0);

struct FlowLossOptions {
  double logit_mean = 0.0;
  double logit_std = 1.0;
};

/// mean ||v - u||^2 over a batch x1 [B, ...], with one t and one noise draw
/// per batch item taken from `rng`.
Tensor fm_loss(const VelocityModel& model, const Tensor& x1, const Captions& captions, Rng& rng,
               const FlowLossOptions& options = {});

/// Same objective with caller-supplied noise and times (evaluation, tests).
Tensor fm_loss_at(const VelocityModel& model, const Tensor& x0, const Tensor& x1,
                  std::span<const double> t, const Captions& captions);

// ---------------------------------------------------------------------------
// Schedules

enum class ScheduleKind { uniform, shifted, linear_quadratic };

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(const std::string& name);

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::shifted;
  int steps = 50;
  double shift = 7.0;
  /// Fraction of steps spent in the linear segment of linear_quadratic.
  double lq_linear_fraction = 0.5;
  /// Noise drop covered by that linear segment.
  double lq_threshold = 0.025;
};

/// t' = s t / (1 + (s - 1) t).
double shift_time(double t, double shift);

/// Shift factor used when none is configured: 17 below 20 steps, else 7.
double default_shift(int steps);

/// Noise levels sigma_0 = 1 > sigma_1 > ... > sigma_Q = 0 (Q + 1 values).
std::vector<double> make_schedule(const ScheduleSpec& spec);

// ---------------------------------------------------------------------------
// Sampling

enum class GuidanceMode { cfg_two_pass, distilled_one_pass };

struct GuidanceSpec {
  double scale = 1.0;
  GuidanceMode mode = GuidanceMode::cfg_two_pass;
};

/// (1 - g) v_uncond + g v_cond. Equal to v_uncond + g (v_cond - v_uncond) in
/// exact arithmetic; this form makes g = 0 and g = 1 bit-exact.
Tensor cfg_combine(const Tensor& v_uncond, const Tensor& v_cond, double scale);

struct SampleStep {
  int index;
  double sigma;
  double latent_norm;
};

struct SampleResult {
  Tensor x;
  std::int64_t model_evaluations = 0;
  std::vector<SampleStep> trajectory;
};

/// Integrates from x0 (sigma = 1) to sigma = 0 with forward Euler:
///   x <- x + (sigma_q - sigma_{q+1}) v(x, 1 - sigma_q).
SampleResult euler_sample(const VelocityModel& model, const std::vector<double>& sigmas,
                          const Captions& captions, const GuidanceSpec& guidance,
                          const Tensor& x0);

/// Convenience overload drawing x0 ~ N(0, I) of `shape` from `rng`.
SampleResult euler_sample(const VelocityModel& model, const std::vector<double>& sigmas,
                          const Captions& captions, const GuidanceSpec& guidance,
                          const Shape& shape, Rng& rng);

// ---------------------------------------------------------------------------
// Guidance distillation

struct DistillOptions {
  double scale_min = 1.0;
  double scale_max = 8.0;
  int steps = 1000;
  double lr = 1e-3;
  FlowLossOptions time;
};

/// Supplies (x1 batch, captions) for one distillation step.
using DistillBatchSource = std::function<std::pair<Tensor, Captions>(Rng&)>;

struct DistillReport {
  std::vector<double> losses;
};

/// Trains `student` (initialized as a copy of the teacher plus a guidance
/// input) to reproduce the teacher's two-pass CFG velocity in one pass, at a
/// guidance scale drawn uniformly from [scale_min, scale_max] per sample.
/// Throws ContractError if any teacher parameter is trainable or the student
/// does not take a guidance input.
DistillReport distill_guidance(const VelocityModel& teacher, VelocityModel& student,
                               const DistillBatchSource& data, const DistillOptions& options,
                               Rng& rng);

}  // namespace tinyvid
