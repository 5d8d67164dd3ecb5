// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

// Small building blocks shared by the autoencoder and the transformer.

#pragma once

#include <string>
#include <vector>

#include "tinyvid/ops.hpp"
#include "tinyvid/rng.hpp"
#include "tinyvid/tensor.hpp"

namespace tinyvid {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

/// Fresh trainable leaf drawn from N(0, stddev^2).
Tensor make_param(Shape shape, Rng& rng, double stddev);
Tensor make_zero_param(Shape shape);

/// y = x W + b with W stored [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, Rng& rng, bool zero_init = false);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
  std::int64_t in_features() const { return weight.dim(0); }
  std::int64_t out_features() const { return weight.dim(1); }
};

/// 3D convolution with bias over [N, C, T, H, W].
struct Conv3d {
  Tensor kernel;
  Tensor bias;  // [C_out]
  Stride3 stride;
  PaddingMode mode = PaddingMode::zero;

  Conv3d() = default;
  Conv3d(std::int64_t in, std::int64_t out, Shape kernel_extent, Stride3 stride, PaddingMode mode,
         Rng& rng, double gain = 1.0);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Lookup table [vocab, dim].
struct Embedding {
  Tensor table;

  Embedding() = default;
  Embedding(std::int64_t vocab, std::int64_t dim, Rng& rng);
  /// ids -> [ids.size(), dim]
  Tensor operator()(const std::vector<std::int64_t>& ids) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Copies parameter values between two lists with identical names and shapes.
void copy_params(const ParamList& from, const ParamList& to);
void set_requires_grad(const ParamList& params, bool on);
void zero_grads(const ParamList& params);
std::int64_t count_params(const ParamList& params);

}  // namespace tinyvid
