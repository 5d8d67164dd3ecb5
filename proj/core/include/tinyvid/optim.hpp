// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "tinyvid/nn.hpp"

namespace tinyvid {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// Global gradient-norm clip; <= 0 disables.
  double clip_norm = 0.0;
};

/// Adam with bias correction. Moments are stored per parameter in the order
/// of the ParamList given at construction.
class Adam {
 public:
  Adam(ParamList params, AdamOptions options);

  /// Applies one update with learning rate `lr` (overrides options.lr) and
  /// clears gradients. Returns the pre-clip global gradient norm.
  double step(double lr);
  double step() { return step(options_.lr); }

  const ParamList& params() const { return params_; }
  const AdamOptions& options() const { return options_; }
  std::int64_t steps_taken() const { return t_; }

  // Exposed for exact save/restore of training state.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }

 private:
  ParamList params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t t_ = 0;
};

}  // namespace tinyvid
