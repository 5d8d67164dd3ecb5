// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#include "tinyvid/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "tinyvid/error.hpp"

namespace tinyvid {

void LossCurve::validate() const {
  if (!(model_size > 0.0)) throw DomainError("model size must be positive");
  if (points.size() < 2) throw DomainError("a loss curve needs at least 2 points");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(points[i].compute > 0.0) || !(points[i].loss > 0.0)) {
      throw DomainError("loss curve values must be positive");
    }
    if (i > 0 && !(points[i].compute > points[i - 1].compute)) {
      throw DomainError("loss curve compute must be strictly increasing");
    }
  }
}

std::optional<double> LossCurve::loss_at(double compute) const {
  if (compute < points.front().compute || compute > points.back().compute) return std::nullopt;
  auto it = std::upper_bound(points.begin(), points.end(), compute,
                             [](double c, const CurvePoint& p) { return c < p.compute; });
  if (it == points.end()) return points.back().loss;
  if (it == points.begin()) return points.front().loss;
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double x0 = std::log(lo.compute), x1 = std::log(hi.compute);
  const double y0 = std::log(lo.loss), y1 = std::log(hi.loss);
  const double w = (std::log(compute) - x0) / (x1 - x0);
  return std::exp(y0 + w * (y1 - y0));
}

std::vector<double> log_grid(double lo, double hi, int n) {
  if (!(lo > 0.0 && hi > lo) || n < 2) throw DomainError("log_grid needs 0 < lo < hi and n >= 2");
  std::vector<double> g(static_cast<std::size_t>(n));
  const double a = std::log(lo), b = std::log(hi);
  for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = std::exp(a + (b - a) * i / (n - 1));
  g.front() = lo;
  g.back() = hi;
  return g;
}

double tokens_for(double compute, double model_size) {
  // C[PFLOPs] * 1e15 = 6 * (N * 1e9) * (D * 1e9)
  return compute / (6000.0 * model_size);
}

namespace {

std::vector<std::size_t> by_size(const std::vector<LossCurve>& curves) {
  std::vector<std::size_t> order(curves.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return curves[a].model_size < curves[b].model_size;
  });
  return order;
}

struct Owned {
  double compute;
  double loss;
  std::size_t owner;
};

// Per grid value: owner index or npos when no curve covers it.
std::vector<std::optional<Owned>> ownership(const std::vector<LossCurve>& curves,
                                            const std::vector<double>& grid) {
  if (curves.empty()) throw DomainError("envelope needs at least one curve");
  for (const auto& c : curves) c.validate();
  const auto order = by_size(curves);
  std::vector<std::optional<Owned>> out;
  out.reserve(grid.size());
  for (double c : grid) {
    std::optional<Owned> best;
    for (auto idx : order) {
      const auto l = curves[idx].loss_at(c);
      if (l && (!best || *l < best->loss)) best = Owned{c, *l, idx};
    }
    out.push_back(best);
  }
  return out;
}

// Solves log L_a = log L_b on [lo, hi] (both curves must cover it).
std::optional<double> crossing(const LossCurve& a, const LossCurve& b, double lo, double hi) {
  auto diff = [&](double x) -> std::optional<double> {
    const double c = std::exp(x);
    const auto la = a.loss_at(c), lb = b.loss_at(c);
    if (!la || !lb) return std::nullopt;
    return std::log(*la) - std::log(*lb);
  };
  double x0 = std::log(lo), x1 = std::log(hi);
  auto d0 = diff(x0), d1 = diff(x1);
  if (!d0 || !d1) return std::nullopt;
  if (*d0 == 0.0) return lo;
  if ((*d0 > 0.0) == (*d1 > 0.0)) return std::nullopt;
  for (int it = 0; it < 200; ++it) {
    const double xm = 0.5 * (x0 + x1);
    if (xm <= x0 || xm >= x1) break;
    const auto dm = diff(xm);
    if (*dm == 0.0) return std::exp(xm);
    if ((*dm > 0.0) == (*d0 > 0.0)) {
      x0 = xm;
      d0 = dm;
    } else {
      x1 = xm;
    }
  }
  // Final secant step inside the bracket.
  const double fa = *diff(x0), fb = *diff(x1);
  const double xs = fa == fb ? 0.5 * (x0 + x1) : x0 - fa * (x1 - x0) / (fb - fa);
  return std::exp(std::clamp(xs, x0, x1));
}

}  // namespace

Envelope extract_envelope(const std::vector<LossCurve>& curves, const std::vector<double>& grid) {
  Envelope env;
  for (const auto& o : ownership(curves, grid)) {
    if (!o) {
      ++env.skipped;
      continue;
    }
    const double n = curves[o->owner].model_size;
    env.points.push_back({o->compute, o->loss, n, tokens_for(o->compute, n)});
  }
  return env;
}

std::vector<OptimalPoint> optimal_points(const std::vector<LossCurve>& curves,
                                         const std::vector<double>& grid) {
  const auto owned = ownership(curves, grid);
  // Runs of consecutive grid values with one owner, with refined boundaries.
  struct Run {
    std::size_t owner;
    std::optional<double> lo, hi;
  };
  std::vector<Run> runs;
  for (std::size_t i = 0; i < owned.size(); ++i) {
    if (!owned[i]) {
      if (!runs.empty()) runs.back().hi.reset();
      runs.push_back({static_cast<std::size_t>(-1), {}, {}});
      continue;
    }
    if (runs.empty() || runs.back().owner != owned[i]->owner) {
      std::optional<double> cross;
      if (i > 0 && owned[i - 1] && !runs.empty()) {
        cross = crossing(curves[owned[i - 1]->owner], curves[owned[i]->owner], grid[i - 1],
                         grid[i]);
        runs.back().hi = cross;
      }
      runs.push_back({owned[i]->owner, cross, {}});
    }
  }
  std::vector<OptimalPoint> out;
  for (const auto& r : runs) {
    if (r.owner == static_cast<std::size_t>(-1) || !r.lo || !r.hi) continue;
    const double c = std::exp(0.5 * (std::log(*r.lo) + std::log(*r.hi)));
    const double n = curves[r.owner].model_size;
    out.push_back({c, n, tokens_for(c, n)});
  }
  return out;
}

PowerLawFit fit_power_law(const std::vector<PowerLawPoint>& points, bool allow_two_points) {
  const std::size_t need = allow_two_points ? 2 : 3;
  if (points.size() < need) {
    throw DomainError("power-law fit needs at least " + std::to_string(need) + " points, got " +
                      std::to_string(points.size()));
  }
  std::vector<double> x, y;
  for (const auto& p : points) {
    if (!(p.x > 0.0) || !(p.y > 0.0)) throw DomainError("power-law fit needs positive values");
    x.push_back(std::log(p.x));
    y.push_back(std::log(p.y));
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw DomainError("power-law fit needs distinct x values");
  PowerLawFit fit;
  fit.b = sxy / sxx;
  const double log_a = my - fit.b * mx;
  fit.a = std::exp(log_a);
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (log_a + fit.b * x[i]);
    fit.residuals.push_back(r);
    sse += r * r;
  }
  fit.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  return fit;
}

double ScalingFit::n_opt(double compute) const { return a1 * std::pow(compute, b1); }
double ScalingFit::d_opt(double compute) const { return a2 * std::pow(compute, b2); }

ScalingFit image_scaling_constants() { return {5.48e-4, 0.5634, 0.324, 0.4325, 1.0, 1.0, {}}; }
ScalingFit video_scaling_constants() { return {0.0189, 0.3618, 0.0108, 0.6289, 1.0, 1.0, {}}; }

Budget plan_budget(const ScalingFit& fit, double compute) {
  if (!(compute > 0.0)) throw DomainError("compute budget must be positive");
  return {fit.n_opt(compute), fit.d_opt(compute)};
}

double compute_for_model_size(const ScalingFit& fit, double model_size) {
  if (!(model_size > 0.0) || fit.b1 == 0.0) throw DomainError("cannot invert N_opt");
  return std::pow(model_size / fit.a1, 1.0 / fit.b1);
}

ScalingFit fit_scaling(const std::vector<LossCurve>& curves, const std::vector<double>& grid) {
  const auto opt = optimal_points(curves, grid);
  std::vector<PowerLawPoint> n, d;
  for (const auto& p : opt) {
    n.push_back({p.compute, p.model_size});
    d.push_back({p.compute, p.tokens});
  }
  const auto fn = fit_power_law(n);
  const auto fd = fit_power_law(d);
  ScalingFit fit{fn.a, fn.b, fd.a, fd.b, fn.r2, fd.r2, {}};
  if (!(fit.b1 > 0.0 && fit.b1 < 1.0)) fit.warnings.push_back("b1 outside (0, 1)");
  if (!(fit.b2 > 0.0 && fit.b2 < 1.0)) fit.warnings.push_back("b2 outside (0, 1)");
  return fit;
}

std::vector<LossCurve> synthetic_curves(const SyntheticCurveSpec& spec) {
  if (spec.sizes < 2 || !(spec.min_size > 0.0) || !(spec.max_size > spec.min_size)) {
    throw DomainError("synthetic curves need >= 2 increasing sizes");
  }
  if (spec.nodes_per_gap < 1 || spec.gaps_each_side < 1) {
    throw DomainError("synthetic curve sampling must be positive");
  }
  const double gap = std::log(spec.max_size / spec.min_size) / (spec.sizes - 1) / spec.b;
  if (!(spec.slope > 2.0 * spec.curvature * gap * spec.gaps_each_side)) {
    throw DomainError("synthetic curves would not decrease over their support");
  }
  const double h = gap / spec.nodes_per_gap;
  const double c_first = std::log(spec.min_size / spec.a) / spec.b;
  const int half = spec.nodes_per_gap * spec.gaps_each_side;
  std::vector<LossCurve> curves;
  for (int i = 0; i < spec.sizes; ++i) {
    const double n = spec.min_size * std::exp(i * spec.b * gap);
    const int center = i * spec.nodes_per_gap;
    LossCurve curve{n, {}};
    for (int k = center - half; k <= center + half; ++k) {
      // Shared nodes: every curve evaluates ln C at the same c_first + k h.
      const double c = c_first + k * h;
      const double dc = c - (c_first + center * h);
      const double log_loss = -spec.slope * (c - c_first) + spec.curvature * dc * dc;
      curve.points.push_back({std::exp(c), std::exp(log_loss)});
    }
    curves.push_back(std::move(curve));
  }
  return curves;
}

std::vector<double> covering_grid(const std::vector<LossCurve>& curves, int n) {
  double lo = INFINITY, hi = 0.0;
  for (const auto& c : curves) {
    lo = std::min(lo, c.points.front().compute);
    hi = std::max(hi, c.points.back().compute);
  }
  return log_grid(lo, hi, n);
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw IoError("bad number '" + s + "' for " + what);
  return v;
}

}  // namespace

std::vector<LossCurve> read_curves_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty curves file");
  if (line.rfind("model_size_billions", 0) != 0) throw IoError("missing curves CSV header");
  std::map<double, LossCurve> by_n;
  std::vector<double> order;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[3];
    for (auto& field : f) {
      if (!std::getline(ss, field, ',')) throw IoError("row " + std::to_string(row) + ": 3 fields expected");
    }
    const double n = parse_double(f[0], "model_size_billions");
    auto [it, fresh] = by_n.try_emplace(n, LossCurve{n, {}});
    if (fresh) order.push_back(n);
    it->second.points.push_back({parse_double(f[1], "compute_pflops"), parse_double(f[2], "loss")});
  }
  std::vector<LossCurve> out;
  for (double n : order) {
    by_n[n].validate();
    out.push_back(by_n[n]);
  }
  return out;
}

void write_curves_csv(std::ostream& out, const std::vector<LossCurve>& curves) {
  out << "model_size_billions,compute_pflops,loss\n";
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      out << fmt_double(c.model_size) << ',' << fmt_double(p.compute) << ',' << fmt_double(p.loss)
          << '\n';
    }
  }
}

void write_envelope_csv(std::ostream& out, const Envelope& envelope) {
  out << "compute_pflops,loss,model_size_billions,tokens_billions\n";
  for (const auto& p : envelope.points) {
    out << fmt_double(p.compute) << ',' << fmt_double(p.loss) << ',' << fmt_double(p.model_size)
        << ',' << fmt_double(p.tokens) << '\n';
  }
}

void write_fit(std::ostream& out, const ScalingFit& fit) {
  out << "a1=" << fmt_double(fit.a1) << '\n'
      << "b1=" << fmt_double(fit.b1) << '\n'
      << "a2=" << fmt_double(fit.a2) << '\n'
      << "b2=" << fmt_double(fit.b2) << '\n'
      << "r2_n=" << fmt_double(fit.r2_n) << '\n'
      << "r2_d=" << fmt_double(fit.r2_d) << '\n';
}

ScalingFit read_fit(std::istream& in) {
  std::map<std::string, double> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (line.empty() || eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = parse_double(line.substr(eq + 1), line.substr(0, eq));
  }
  ScalingFit fit;
  auto get = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError(std::string("fit file lacks ") + key);
    return it->second;
  };
  fit.a1 = get("a1");
  fit.b1 = get("b1");
  fit.a2 = get("a2");
  fit.b2 = get("b2");
  fit.r2_n = get("r2_n");
  fit.r2_d = get("r2_d");
  return fit;
}

}  // namespace tinyvid
