// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#include "tinyvid/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace tinyvid::kernels {

namespace {

// Four doubles; lowered to AVX2 in the avx2 clone and to SSE pairs otherwise.
typedef double v4d __attribute__((vector_size(32)));
typedef double v4u __attribute__((vector_size(32), aligned(8), may_alias));

constexpr std::int64_t kRows = 4;
constexpr std::int64_t kCols = 8;

#define TINYVID_LOAD4(p) (*reinterpret_cast<const v4u*>(p))
#define TINYVID_STORE4(p, v) (*reinterpret_cast<v4u*>(p) = (v))

}  // namespace

// Every c[i][j] is updated as c += a[i][p] * b[p][j] for p = 0, 1, ... in
// order, with no fused multiply-add, so all code paths round identically.
__attribute__((target_clones("avx2", "default")))
void gemm(std::int64_t m, std::int64_t n, std::int64_t k, const double* a, const double* b,
          double* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<std::size_t>(m * n));
  std::vector<double> panel(static_cast<std::size_t>(k * kCols));
  const std::int64_t n_full = n - n % kCols;
  for (std::int64_t j0 = 0; j0 < n_full; j0 += kCols) {
    for (std::int64_t p = 0; p < k; ++p) {
      std::memcpy(panel.data() + p * kCols, b + p * n + j0, sizeof(double) * kCols);
    }
    const double* bp = panel.data();
    std::int64_t i = 0;
    for (; i + kRows <= m; i += kRows) {
      double* c0 = c + i * n + j0;
      v4d acc[kRows][2];
      for (std::int64_t r = 0; r < kRows; ++r) {
        acc[r][0] = TINYVID_LOAD4(c0 + r * n);
        acc[r][1] = TINYVID_LOAD4(c0 + r * n + 4);
      }
      const double* a0 = a + i * k;
      for (std::int64_t p = 0; p < k; ++p) {
        const v4d b0 = TINYVID_LOAD4(bp + p * kCols);
        const v4d b1 = TINYVID_LOAD4(bp + p * kCols + 4);
        for (std::int64_t r = 0; r < kRows; ++r) {
          const double av = a0[r * k + p];
          const v4d va = {av, av, av, av};
          const v4d t0 = va * b0;
          const v4d t1 = va * b1;
          acc[r][0] = acc[r][0] + t0;
          acc[r][1] = acc[r][1] + t1;
        }
      }
      for (std::int64_t r = 0; r < kRows; ++r) {
        TINYVID_STORE4(c0 + r * n, acc[r][0]);
        TINYVID_STORE4(c0 + r * n + 4, acc[r][1]);
      }
    }
    for (; i < m; ++i) {
      double* crow = c + i * n + j0;
      v4d acc0 = TINYVID_LOAD4(crow), acc1 = TINYVID_LOAD4(crow + 4);
      const double* arow = a + i * k;
      for (std::int64_t p = 0; p < k; ++p) {
        const v4d va = {arow[p], arow[p], arow[p], arow[p]};
        const v4d t0 = va * TINYVID_LOAD4(bp + p * kCols);
        const v4d t1 = va * TINYVID_LOAD4(bp + p * kCols + 4);
        acc0 = acc0 + t0;
        acc1 = acc1 + t1;
      }
      TINYVID_STORE4(crow, acc0);
      TINYVID_STORE4(crow + 4, acc1);
    }
  }
  if (n_full < n) {
    for (std::int64_t i = 0; i < m; ++i) {
      double* crow = c + i * n;
      const double* arow = a + i * k;
      for (std::int64_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = b + p * n;
        for (std::int64_t j = n_full; j < n; ++j) {
          const double t = av * brow[j];
          crow[j] += t;
        }
      }
    }
  }
}

void transpose(std::int64_t rows, std::int64_t cols, const double* in, double* out) {
  constexpr std::int64_t kTile = 32;
  for (std::int64_t r0 = 0; r0 < rows; r0 += kTile) {
    const std::int64_t r1 = std::min(rows, r0 + kTile);
    for (std::int64_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::int64_t c1 = std::min(cols, c0 + kTile);
      for (std::int64_t r = r0; r < r1; ++r) {
        for (std::int64_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
      }
    }
  }
}

void im2col(const ConvGeometry& g, const double* input, double* cols) {
  const std::int64_t positions = g.out_positions();
  const std::int64_t plane = g.in_h * g.in_w;
  const std::int64_t volume = g.in_t * plane;
  std::int64_t row = 0;
  for (std::int64_t ci = 0; ci < g.in_c; ++ci) {
    const double* src_c = input + ci * volume;
    for (std::int64_t a = 0; a < g.k_t; ++a) {
      for (std::int64_t b = 0; b < g.k_h; ++b) {
        for (std::int64_t cc = 0; cc < g.k_w; ++cc, ++row) {
          double* dst = cols + row * positions;
          for (std::int64_t ot = 0; ot < g.out_t; ++ot) {
            const std::int64_t it = ot * g.s_t + a - g.pad_t;
            const bool t_ok = it >= 0 && it < g.in_t;
            for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
              const std::int64_t ih = oh * g.s_h + b - g.pad_h;
              double* d = dst + (ot * g.out_h + oh) * g.out_w;
              if (!t_ok || ih < 0 || ih >= g.in_h) {
                std::fill(d, d + g.out_w, 0.0);
                continue;
              }
              const double* s = src_c + it * plane + ih * g.in_w;
              for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
                const std::int64_t iw = ow * g.s_w + cc - g.pad_w;
                d[ow] = (iw >= 0 && iw < g.in_w) ? s[iw] : 0.0;
              }
            }
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* cols, double* input) {
  const std::int64_t positions = g.out_positions();
  const std::int64_t plane = g.in_h * g.in_w;
  const std::int64_t volume = g.in_t * plane;
  std::int64_t row = 0;
  for (std::int64_t ci = 0; ci < g.in_c; ++ci) {
    double* dst_c = input + ci * volume;
    for (std::int64_t a = 0; a < g.k_t; ++a) {
      for (std::int64_t b = 0; b < g.k_h; ++b) {
        for (std::int64_t cc = 0; cc < g.k_w; ++cc, ++row) {
          const double* src = cols + row * positions;
          for (std::int64_t ot = 0; ot < g.out_t; ++ot) {
            const std::int64_t it = ot * g.s_t + a - g.pad_t;
            if (it < 0 || it >= g.in_t) continue;
            for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
              const std::int64_t ih = oh * g.s_h + b - g.pad_h;
              if (ih < 0 || ih >= g.in_h) continue;
              const double* s = src + (ot * g.out_h + oh) * g.out_w;
              double* d = dst_c + it * plane + ih * g.in_w;
              for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
                const std::int64_t iw = ow * g.s_w + cc - g.pad_w;
                if (iw >= 0 && iw < g.in_w) d[iw] += s[ow];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace tinyvid::kernels
