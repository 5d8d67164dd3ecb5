// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#include "tinyvid/flow.hpp"

#include <algorithm>
#include <cmath>

#include "tinyvid/error.hpp"
#include "tinyvid/optim.hpp"

namespace tinyvid {

TokenIds null_caption(std::size_t length) { return TokenIds(std::max<std::size_t>(length, 1), kPadToken); }

Captions null_captions(const Captions& like) {
  Captions out;
  out.reserve(like.size());
  for (const auto& c : like) out.push_back(null_caption(c.size()));
  return out;
}

namespace {

// [B, 1, ..., 1] tensor holding one value per batch item.
Tensor per_item(std::span<const double> values, const Shape& like) {
  Shape s(like.size(), 1);
  s[0] = static_cast<std::int64_t>(values.size());
  return Tensor(s, std::vector<double>(values.begin(), values.end()));
}

void check_batch(const Tensor& x, std::size_t n, const char* what) {
  if (x.rank() < 1 || static_cast<std::size_t>(x.dim(0)) != n) {
    throw ShapeError(std::string(what) + ": batch of " + std::to_string(n) +
                     " entries does not match tensor shape " + shape_str(x.shape()));
  }
}

Tensor interpolate(const Tensor& x0, const Tensor& x1, std::span<const double> t) {
  std::vector<double> one_minus(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) one_minus[i] = 1.0 - t[i];
  return per_item(one_minus, x0.shape()) * x0 + per_item(t, x1.shape()) * x1;
}

}  // namespace

FlowSample make_flow_sample(const Tensor& x0, const Tensor& x1, double t) {
  if (x0.shape() != x1.shape()) {
    throw ShapeError("noise " + shape_str(x0.shape()) + " vs data " + shape_str(x1.shape()));
  }
  FlowSample s;
  s.x0 = x0;
  s.x1 = x1;
  s.t = t;
  s.x_t = scale(x0, 1.0 - t) + scale(x1, t);
  s.u_t = x1 - x0;
  return s;
}

double sample_t_logit_normal(Rng& rng, double mu, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("logit-normal sigma must be positive");
  const double n = rng.normal(mu, sigma);
  double t = 1.0 / (1.0 + std::exp(-n));
  // Keep strictly inside (0, 1) even for extreme draws.
  constexpr double kEdge = 1e-12;
  return std::clamp(t, kEdge, 1.0 - kEdge);
}

Tensor fm_loss_at(const VelocityModel& model, const Tensor& x0, const Tensor& x1,
                  std::span<const double> t, const Captions& captions) {
  if (x0.shape() != x1.shape()) {
    throw ShapeError("noise " + shape_str(x0.shape()) + " vs data " + shape_str(x1.shape()));
  }
  check_batch(x1, t.size(), "fm_loss times");
  check_batch(x1, captions.size(), "fm_loss captions");
  const Tensor x_t = interpolate(x0, x1, t);
  const Tensor u_t = x1 - x0;
  const Tensor v = model.velocity(x_t, t, captions);
  Tensor loss = mse(v, u_t);
  if (!std::isfinite(loss.item())) throw NumericError("non-finite flow-matching loss");
  return loss;
}

Tensor fm_loss(const VelocityModel& model, const Tensor& x1, const Captions& captions, Rng& rng,
               const FlowLossOptions& options) {
  if (!all_finite(x1)) throw NumericError("non-finite training latent");
  const auto b = static_cast<std::size_t>(x1.dim(0));
  std::vector<double> t(b);
  for (auto& ti : t) ti = sample_t_logit_normal(rng, options.logit_mean, options.logit_std);
  const Tensor x0 = Tensor::randn(x1.shape(), rng);
  return fm_loss_at(model, x0, x1, t, captions);
}

// ---------------------------------------------------------------------------

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::uniform: return "uniform";
    case ScheduleKind::shifted: return "shifted";
    case ScheduleKind::linear_quadratic: return "linear_quadratic";
  }
  return "unknown";
}

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "uniform") return ScheduleKind::uniform;
  if (name == "shifted") return ScheduleKind::shifted;
  if (name == "linear_quadratic") return ScheduleKind::linear_quadratic;
  throw ConfigError("unknown schedule kind '" + name + "'");
}

double shift_time(double t, double shift) {
  if (!(shift >= 1.0)) throw ConfigError("shift factor must be >= 1, got " + std::to_string(shift));
  return shift * t / (1.0 + (shift - 1.0) * t);
}

double default_shift(int steps) { return steps < 20 ? 17.0 : 7.0; }

namespace {

// Linear ramp over the first steps, then a quadratic reaching 1. Written in
// "progress" 1 - sigma, as in the reference formulation.
std::vector<double> linear_quadratic(int q, double fraction, double threshold) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError("linear_quadratic linear fraction must lie in (0, 1)");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("linear_quadratic threshold must lie in (0, 1)");
  }
  if (q == 1) return {1.0, 0.0};
  const int lin = std::clamp(static_cast<int>(std::lround(fraction * q)), 1, q - 1);
  const int quad = q - lin;
  const double diff = lin - threshold * q;
  const double qa = diff / (lin * static_cast<double>(quad) * quad);
  const double qb = threshold / lin - 2.0 * diff / (static_cast<double>(quad) * quad);
  const double qc = qa * lin * lin;
  std::vector<double> progress;
  progress.reserve(static_cast<std::size_t>(q) + 1);
  for (int i = 0; i < lin; ++i) progress.push_back(i * threshold / lin);
  for (int i = lin; i < q; ++i) progress.push_back(qa * i * i + qb * i + qc);
  progress.push_back(1.0);
  std::vector<double> sigma(progress.size());
  for (std::size_t i = 0; i < progress.size(); ++i) sigma[i] = 1.0 - progress[i];
  sigma.front() = 1.0;
  sigma.back() = 0.0;
  return sigma;
}

}  // namespace

std::vector<double> make_schedule(const ScheduleSpec& spec) {
  if (spec.steps < 1) throw ConfigError("schedule needs at least one step");
  const int q = spec.steps;
  std::vector<double> sigma;
  if (spec.kind == ScheduleKind::linear_quadratic) {
    sigma = linear_quadratic(q, spec.lq_linear_fraction, spec.lq_threshold);
  } else {
    if (spec.kind == ScheduleKind::shifted && !(spec.shift >= 1.0)) {
      throw ConfigError("shift factor must be >= 1, got " + std::to_string(spec.shift));
    }
    sigma.resize(static_cast<std::size_t>(q) + 1);
    for (int i = 0; i <= q; ++i) {
      const double t = 1.0 - static_cast<double>(i) / q;
      sigma[static_cast<std::size_t>(i)] =
          spec.kind == ScheduleKind::shifted ? shift_time(t, spec.shift) : t;
    }
  }
  for (std::size_t i = 1; i < sigma.size(); ++i) {
    if (!(sigma[i] < sigma[i - 1])) {
      throw ConfigError(to_string(spec.kind) + " schedule is not strictly decreasing at step " +
                        std::to_string(i));
    }
  }
  return sigma;
}

// ---------------------------------------------------------------------------

Tensor cfg_combine(const Tensor& v_uncond, const Tensor& v_cond, double scale) {
  if (v_uncond.shape() != v_cond.shape()) {
    throw ShapeError("cfg: " + shape_str(v_uncond.shape()) + " vs " + shape_str(v_cond.shape()));
  }
  if (scale < 0.0) throw ConfigError("guidance scale must be non-negative");
  std::vector<double> out(v_cond.data().size());
  const auto u = v_uncond.data();
  const auto c = v_cond.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - scale) * u[i] + scale * c[i];
  return Tensor(v_cond.shape(), std::move(out));
}

SampleResult euler_sample(const VelocityModel& model, const std::vector<double>& sigmas,
                          const Captions& captions, const GuidanceSpec& guidance,
                          const Tensor& x0) {
  if (sigmas.size() < 2) throw ConfigError("schedule must contain at least two points");
  if (guidance.scale < 0.0) throw ConfigError("guidance scale must be non-negative");
  const bool distilled = guidance.mode == GuidanceMode::distilled_one_pass;
  if (distilled && !model.accepts_guidance()) {
    throw ConfigError("distilled_one_pass guidance needs a guidance-conditioned student");
  }
  check_batch(x0, captions.size(), "euler_sample captions");

  NoGradGuard no_grad;
  const auto b = captions.size();
  const Captions uncond = null_captions(captions);
  std::vector<double> g(b, guidance.scale);

  SampleResult result;
  std::vector<double> x(x0.data().begin(), x0.data().end());
  const Shape shape = x0.shape();
  auto norm = [&] {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s);
  };
  result.trajectory.push_back({0, sigmas[0], norm()});

  for (std::size_t q = 0; q + 1 < sigmas.size(); ++q) {
    const Tensor xt(shape, x);
    std::vector<double> t(b, 1.0 - sigmas[q]);
    Tensor v;
    if (distilled) {
      v = model.velocity(xt, t, captions, g);
      result.model_evaluations += 1;
    } else {
      const Tensor vc = model.velocity(xt, t, captions);
      const Tensor vu = model.velocity(xt, t, uncond);
      result.model_evaluations += 2;
      v = cfg_combine(vu, vc, guidance.scale);
    }
    if (v.shape() != shape) {
      throw ShapeError("velocity " + shape_str(v.shape()) + " vs latent " + shape_str(shape));
    }
    const double h = sigmas[q] - sigmas[q + 1];
    const auto vd = v.data();
    bool finite = true;
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] += h * vd[i];
      finite = finite && std::isfinite(x[i]);
    }
    if (!finite) {
      throw NumericError("non-finite latent during sampling", static_cast<long>(q));
    }
    result.trajectory.push_back({static_cast<int>(q + 1), sigmas[q + 1], norm()});
  }
  result.x = Tensor(shape, std::move(x));
  return result;
}

SampleResult euler_sample(const VelocityModel& model, const std::vector<double>& sigmas,
                          const Captions& captions, const GuidanceSpec& guidance,
                          const Shape& shape, Rng& rng) {
  return euler_sample(model, sigmas, captions, guidance, Tensor::randn(shape, rng));
}

// ---------------------------------------------------------------------------

DistillReport distill_guidance(const VelocityModel& teacher, VelocityModel& student,
                               const DistillBatchSource& data, const DistillOptions& options,
                               Rng& rng) {
  for (const auto& p : teacher.parameters()) {
    if (p.tensor.requires_grad()) {
      throw ContractError("teacher parameter '" + p.name + "' is trainable; freeze the teacher");
    }
  }
  if (!student.accepts_guidance()) {
    throw ContractError("student has no guidance-scale input");
  }
  if (!(options.scale_min >= 0.0 && options.scale_max >= options.scale_min)) {
    throw ConfigError("invalid guidance scale range");
  }

  AdamOptions adam;
  adam.lr = options.lr;
  Adam opt(student.parameters(), adam);
  Rng data_rng = rng.split("data");
  Rng noise_rng = rng.split("noise");

  DistillReport report;
  report.losses.reserve(static_cast<std::size_t>(std::max(options.steps, 0)));
  for (int step = 0; step < options.steps; ++step) {
    auto [x1, captions] = data(data_rng);
    const auto b = static_cast<std::size_t>(x1.dim(0));
    check_batch(x1, captions.size(), "distillation captions");
    std::vector<double> t(b), g(b);
    for (std::size_t i = 0; i < b; ++i) {
      t[i] = sample_t_logit_normal(noise_rng, options.time.logit_mean, options.time.logit_std);
      g[i] = noise_rng.uniform(options.scale_min, options.scale_max);
    }
    const Tensor x0 = Tensor::randn(x1.shape(), noise_rng);
    const Tensor x_t = interpolate(x0, x1, t);

    Tensor target;
    {
      NoGradGuard no_grad;
      const Tensor vc = teacher.velocity(x_t, t, captions);
      const Tensor vu = teacher.velocity(x_t, t, null_captions(captions));
      std::vector<double> one_minus(b);
      for (std::size_t i = 0; i < b; ++i) one_minus[i] = 1.0 - g[i];
      target = (per_item(one_minus, vu.shape()) * vu + per_item(g, vc.shape()) * vc).detach();
    }
    const Tensor v = student.velocity(x_t, t, captions, g);
    const Tensor loss = mse(v, target);
    if (!std::isfinite(loss.item())) throw NumericError("non-finite distillation loss", step);
    loss.backward();
    opt.step();
    report.losses.push_back(loss.item());
  }
  return report;
}

}  // namespace tinyvid
