// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

// Raw loops behind the differentiable ops. Everything here works on
// contiguous row-major buffers and never allocates.

#pragma once

#include <cstdint>

namespace tinyvid::kernels {

/// C[M,N] (+)= A[M,K] * B[K,N]. The k-sum for every element runs in
/// ascending k order regardless of blocking, so results do not depend on
/// block sizes.
void gemm(std::int64_t m, std::int64_t n, std::int64_t k, const double* a, const double* b,
          double* c, bool accumulate);

/// out[cols, rows] = in[rows, cols]^T
void transpose(std::int64_t rows, std::int64_t cols, const double* in, double* out);

struct ConvGeometry {
  std::int64_t in_c, in_t, in_h, in_w;
  std::int64_t k_t, k_h, k_w;
  std::int64_t s_t, s_h, s_w;
  std::int64_t pad_t, pad_h, pad_w;  // leading padding per axis
  std::int64_t out_t, out_h, out_w;

  std::int64_t patch_size() const { return in_c * k_t * k_h * k_w; }
  std::int64_t out_positions() const { return out_t * out_h * out_w; }
};

/// Unfolds one batch item [C,T,H,W] into [C*kt*kh*kw, T'*H'*W'].
void im2col(const ConvGeometry& g, const double* input, double* cols);

/// Adjoint of im2col: scatters-adds columns back into [C,T,H,W].
void col2im(const ConvGeometry& g, const double* cols, double* input);

}  // namespace tinyvid::kernels
