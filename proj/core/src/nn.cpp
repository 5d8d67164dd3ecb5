// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#include "tinyvid/nn.hpp"

#include <cmath>

#include "tinyvid/error.hpp"

namespace tinyvid {

Tensor make_param(Shape shape, Rng& rng, double stddev) {
  Tensor t = Tensor::randn(std::move(shape), rng, stddev);
  t.set_requires_grad(true);
  return t;
}

Tensor make_zero_param(Shape shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

Linear::Linear(std::int64_t in, std::int64_t out, Rng& rng, bool zero_init) {
  weight = zero_init ? make_zero_param({in, out})
                     : make_param({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  bias = make_zero_param({out});
}

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Conv3d::Conv3d(std::int64_t in, std::int64_t out, Shape kernel_extent, Stride3 stride_,
               PaddingMode mode_, Rng& rng, double gain)
    : stride(stride_), mode(mode_) {
  if (kernel_extent.size() != 3) throw ShapeError("Conv3d kernel extent must have 3 axes");
  const double fan_in =
      static_cast<double>(in * kernel_extent[0] * kernel_extent[1] * kernel_extent[2]);
  kernel = make_param({out, in, kernel_extent[0], kernel_extent[1], kernel_extent[2]}, rng,
                      gain / std::sqrt(fan_in));
  bias = make_zero_param({out});
}

Tensor Conv3d::operator()(const Tensor& x) const {
  Tensor y = conv3d(x, kernel, stride, mode);
  return add(y, reshape(bias, {bias.dim(0), 1, 1, 1}));
}

void Conv3d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".kernel", kernel});
  out.push_back({prefix + ".bias", bias});
}

Embedding::Embedding(std::int64_t vocab, std::int64_t dim, Rng& rng) {
  table = make_param({vocab, dim}, rng, 1.0);
}

Tensor Embedding::operator()(const std::vector<std::int64_t>& ids) const {
  return index_select(table, 0, ids);
}

void Embedding::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".table", table});
}

void copy_params(const ParamList& from, const ParamList& to) {
  if (from.size() != to.size()) {
    throw ContractError("copy_params: parameter counts differ (" + std::to_string(from.size()) +
                        " vs " + std::to_string(to.size()) + ")");
  }
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].name != to[i].name || from[i].tensor.shape() != to[i].tensor.shape()) {
      throw ContractError("copy_params: mismatch at " + from[i].name + " / " + to[i].name);
    }
    auto src = from[i].tensor.data();
    auto dst = to[i].tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

void set_requires_grad(const ParamList& params, bool on) {
  for (const auto& p : params) p.tensor.set_requires_grad(on);
}

void zero_grads(const ParamList& params) {
  for (const auto& p : params) p.tensor.zero_grad();
}

std::int64_t count_params(const ParamList& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

}  // namespace tinyvid
