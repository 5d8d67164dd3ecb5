// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

// Compute-optimal scaling: loss envelopes over a model-size family and
// power-law fits N_opt = a1 C^b1, D_opt = a2 C^b2.
//
// Units: model size N and token count D in billions, compute C in PFLOPs.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace tinyvid {

struct CurvePoint {
  double compute;  // PFLOPs
  double loss;
};

struct LossCurve {
  double model_size;  // billions of parameters
  std::vector<CurvePoint> points;  // strictly increasing compute

  /// Throws DomainError when the invariants do not hold.
  void validate() const;
  /// Log-log linear interpolation; nullopt outside the curve's support.
  std::optional<double> loss_at(double compute) const;
};

struct EnvelopePoint {
  double compute;
  double loss;
  double model_size;  // owning curve
  double tokens;      // billions, C / (6 N) in consistent units
};

struct Envelope {
  std::vector<EnvelopePoint> points;
  /// Grid values covered by no curve.
  std::int64_t skipped = 0;
};

/// n log-spaced values from lo to hi inclusive.
std::vector<double> log_grid(double lo, double hi, int n);

/// Tokens (billions) consumed by a model of `model_size` billions at
/// `compute` PFLOPs under the C = 6 N D convention.
double tokens_for(double compute, double model_size);

/// Per grid value, the lowest interpolated loss across curves. Ties go to the
/// smaller model.
Envelope extract_envelope(const std::vector<LossCurve>& curves, const std::vector<double>& grid);

/// One compute-optimal sample per model that owns an interior stretch of the
/// envelope: C is the log-midpoint between the two crossings that bound the
/// stretch (crossings are solved on the interpolated curves).
struct OptimalPoint {
  double compute;
  double model_size;
  double tokens;
};
std::vector<OptimalPoint> optimal_points(const std::vector<LossCurve>& curves,
                                         const std::vector<double>& grid);

struct PowerLawFit {
  double a = 0.0;
  double b = 0.0;
  double r2 = 0.0;
  std::vector<double> residuals;  // log y - (log a + b log C)
};

struct PowerLawPoint {
  double x;
  double y;
};

/// Least squares on log y = log a + b log x. Needs 3 or more points unless
/// `allow_two_points` (exact two-point line, for diagnostics).
PowerLawFit fit_power_law(const std::vector<PowerLawPoint>& points, bool allow_two_points = false);

struct ScalingFit {
  double a1 = 0.0, b1 = 0.0;  // N_opt
  double a2 = 0.0, b2 = 0.0;  // D_opt
  double r2_n = 1.0, r2_d = 1.0;
  std::vector<std::string> warnings;

  double n_opt(double compute) const;
  double d_opt(double compute) const;
};

/// Published constants for the image and video model families.
ScalingFit image_scaling_constants();
ScalingFit video_scaling_constants();

struct Budget {
  double model_size;  // billions
  double tokens;      // billions
};

Budget plan_budget(const ScalingFit& fit, double compute);

/// Compute (PFLOPs) at which the fit's N_opt reaches `model_size`.
double compute_for_model_size(const ScalingFit& fit, double model_size);

/// Envelope -> optimal points -> both power laws.
ScalingFit fit_scaling(const std::vector<LossCurve>& curves, const std::vector<double>& grid);

// ---------------------------------------------------------------------------
// Synthetic families with a known answer.

struct SyntheticCurveSpec {
  double a = 5.48e-4;  // generator truth for N_opt = a C^b
  double b = 0.5634;
  int sizes = 7;
  double min_size = 0.092;
  double max_size = 6.6;
  int nodes_per_gap = 8;   // curve samples between neighboring optima
  int gaps_each_side = 2;  // curve support, in neighbor spacings
  double curvature = 0.05;
  double slope = 0.3;
};

/// Curves log L = -slope (c - c_first) + curvature (c - c_N)^2 in c = ln C,
/// with c_N = ln((N / a)^(1 / b)). Neighbors cross at the midpoint of their
/// optima, so the envelope-derived optima lie exactly on the generator's law.
std::vector<LossCurve> synthetic_curves(const SyntheticCurveSpec& spec);

/// Grid spanning the union of the curves' supports.
std::vector<double> covering_grid(const std::vector<LossCurve>& curves, int n);

// ---------------------------------------------------------------------------
// Files

/// CSV with header model_size_billions,compute_pflops,loss.
std::vector<LossCurve> read_curves_csv(std::istream& in);
void write_curves_csv(std::ostream& out, const std::vector<LossCurve>& curves);
void write_envelope_csv(std::ostream& out, const Envelope& envelope);
/// Flat key=value text: a1, b1, a2, b2, r2_n, r2_d.
void write_fit(std::ostream& out, const ScalingFit& fit);
ScalingFit read_fit(std::istream& in);

}  // namespace tinyvid
