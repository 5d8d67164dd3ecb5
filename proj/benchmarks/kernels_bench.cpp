// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <vector>

#include "tinyvid/dit.hpp"
#include "tinyvid/kernels.hpp"
#include "tinyvid/ops.hpp"
#include "tinyvid/rng.hpp"

namespace tinyvid {
namespace {

void BM_Gemm(benchmark::State& state) {
  const auto n = state.range(0);
  Rng rng(1);
  std::vector<double> a(n * n), b(n * n), c(n * n);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  for (auto _ : state) {
    kernels::gemm(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["flops"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(128)->Arg(256);

void BM_CausalConv3d(benchmark::State& state) {
  const auto ch = state.range(0);
  Rng rng(2);
  const Tensor x = Tensor::randn({1, ch, 9, 16, 16}, rng);
  const Tensor k = Tensor::randn({ch, ch, 3, 3, 3}, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(conv3d(x, k, {}, PaddingMode::causal_temporal));
  state.counters["flops"] = benchmark::Counter(2.0 * ch * ch * 27 * 9 * 16 * 16,
                                               benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_CausalConv3d)->Arg(8)->Arg(16)->Arg(32);

void BM_CausalConv3dBackward(benchmark::State& state) {
  const auto ch = state.range(0);
  Rng rng(3);
  const Tensor x = Tensor::randn({1, ch, 9, 16, 16}, rng);
  const Tensor k = Tensor::randn({ch, ch, 3, 3, 3}, rng);
  k.set_requires_grad(true);
  for (auto _ : state) {
    k.zero_grad();
    sum(conv3d(x, k, {}, PaddingMode::causal_temporal)).backward();
  }
}
BENCHMARK(BM_CausalConv3dBackward)->Arg(16);

void BM_Attention(benchmark::State& state) {
  const auto len = state.range(0);
  Rng rng(4);
  const Tensor q = Tensor::randn({1, 4, len, 32}, rng);
  const Tensor k = Tensor::randn({1, 4, len, 32}, rng);
  const Tensor v = Tensor::randn({1, 4, len, 32}, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(attention(q, k, v));
}
BENCHMARK(BM_Attention)->Arg(16)->Arg(64)->Arg(256);

void BM_DitTrainStep(benchmark::State& state) {
  ModelConfig mc;
  mc.in_channels = mc.out_channels = 8;
  mc.text_vocab = 32;
  Rng rng(5);
  Dit model(mc, rng);
  const Tensor x = Tensor::randn({4, 3, 8, 4, 4}, rng);
  const Captions caps(4, TokenIds{1, 4, 10, 15});
  const std::vector<double> t(4, 0.5);
  for (auto _ : state) {
    for (const auto& p : model.parameters()) p.tensor.zero_grad();
    sum(model.velocity(x, t, caps, {})).backward();
  }
}
BENCHMARK(BM_DitTrainStep)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace tinyvid

BENCHMARK_MAIN();
