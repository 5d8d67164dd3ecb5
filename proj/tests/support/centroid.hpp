// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

// Motion recovery from pixels: intensity-weighted centroid per frame, then a
// least-squares line through the centroids.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tinyvid/tensor.hpp"

namespace tinyvid::testing {

struct Centroid {
  double x = 0.0, y = 0.0, mass = 0.0;
};

/// clip [F, 3, H, W]. Pixels below `floor` (summed over channels) are ignored
/// so faint reconstruction haze does not drag the centroid.
inline std::vector<Centroid> centroids(const Tensor& clip, double floor = 0.0) {
  const auto& s = clip.shape();
  const auto f = s[0], c = s[1], h = s[2], w = s[3];
  const auto d = clip.data();
  std::vector<Centroid> out;
  for (std::int64_t t = 0; t < f; ++t) {
    Centroid ct;
    for (std::int64_t i = 0; i < h; ++i) {
      for (std::int64_t j = 0; j < w; ++j) {
        double v = 0.0;
        for (std::int64_t ch = 0; ch < c; ++ch) v += d[((t * c + ch) * h + i) * w + j];
        if (v <= floor) continue;
        ct.mass += v;
        ct.x += v * (j + 0.5);
        ct.y += v * (i + 0.5);
      }
    }
    if (ct.mass > 0.0) {
      ct.x /= ct.mass;
      ct.y /= ct.mass;
    }
    out.push_back(ct);
  }
  return out;
}

struct Velocity {
  double vx = 0.0, vy = 0.0;
};

/// Least-squares slope of centroid position against frame index.
inline Velocity estimate_velocity(const Tensor& clip, double floor = 0.0) {
  const auto cs = centroids(clip, floor);
  const double n = static_cast<double>(cs.size());
  if (cs.size() < 2) return {};
  double mt = 0.0, mx = 0.0, my = 0.0;
  for (std::size_t t = 0; t < cs.size(); ++t) {
    mt += static_cast<double>(t);
    mx += cs[t].x;
    my += cs[t].y;
  }
  mt /= n;
  mx /= n;
  my /= n;
  double stt = 0.0, stx = 0.0, sty = 0.0;
  for (std::size_t t = 0; t < cs.size(); ++t) {
    const double dt = static_cast<double>(t) - mt;
    stt += dt * dt;
    stx += dt * (cs[t].x - mx);
    sty += dt * (cs[t].y - my);
  }
  return {stx / stt, sty / stt};
}

/// Index of the level nearest to v.
inline int nearest_level(double v, const std::vector<double>& levels) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(levels.size()); ++i) {
    if (std::abs(levels[static_cast<std::size_t>(i)] - v) <
        std::abs(levels[static_cast<std::size_t>(best)] - v)) {
      best = i;
    }
  }
  return best;
}

}  // namespace tinyvid::testing
