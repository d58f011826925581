// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
// Wall time of the four scoring kernels on one square dense block. Args are
// (n, m, T, w); the exact flop and workspace counts ride along as counters.
#include <benchmark/benchmark.h>

#include "datareg/compression.hpp"
#include "datareg/exec.hpp"
#include "datareg/scoring.hpp"

using namespace datareg;

namespace {

struct Block {
  Tensor b, a, bs, as;
  Block(std::size_t n, std::size_t m, std::size_t t, std::size_t w, Rng& rng)
      : b(Tensor::randn(w, n * t, rng)), a(Tensor::randn(w, n * t, rng)),
        bs(Tensor::randn(w, m * t, rng)), as(Tensor::randn(w, m * t, rng)) {}
};

template <ScoreMethod Method>
void BM_Score(benchmark::State& state) {
  const auto n = std::size_t(state.range(0)), m = std::size_t(state.range(1));
  const auto t = std::size_t(state.range(2)), w = std::size_t(state.range(3));
  Rng rng(n * 1000 + t * 10 + w);
  const Block blk(n, m, t, w, rng);
  const FactorBlock train{w, w, 0, &blk.b, &blk.a, false};
  const FactorBlock target{w, w, 0, &blk.bs, &blk.as, false};
  const ProjectorDims dims{8, 8, 0};
  const Projector proj = Projector::gaussian(w, w, dims, 1);
  std::uint64_t flops = 0;
  std::int64_t workspace = 0;
  for (auto _ : state) {
    ExecContext ctx;
    std::vector<double> s;
    if constexpr (Method == ScoreMethod::direct) s = score_direct(train, target, t, ctx);
    if constexpr (Method == ScoreMethod::gip) s = score_gip(train, target, t, ctx);
    if constexpr (Method == ScoreMethod::pip) s = score_pip(train, target, t, ctx);
    if constexpr (Method == ScoreMethod::compressed) s = score_compressed(train, target, t, proj, ctx);
    benchmark::DoNotOptimize(s.data());
    flops = ctx.meter().flops();
    workspace = ctx.meter().peak();
  }
  state.counters["flops"] = double(flops);
  state.counters["workspace"] = double(workspace);
  state.counters["FLOP/s"] = benchmark::Counter(double(flops), benchmark::Counter::kIsIterationInvariantRate);
}

// Token counts straddle both crossovers: GIP at mT = w/2, PIP at T = w.
void Shapes(benchmark::internal::Benchmark* b) {
  for (int w : {16, 64})
    for (int t : {1, 4, 16, 64, 128}) b->Args({8, 1, t, w});
  b->Args({8, 4, 8, 32});
}

}  // namespace

BENCHMARK_TEMPLATE(BM_Score, ScoreMethod::direct)->Apply(Shapes);
BENCHMARK_TEMPLATE(BM_Score, ScoreMethod::gip)->Apply(Shapes);
BENCHMARK_TEMPLATE(BM_Score, ScoreMethod::pip)->Apply(Shapes);
BENCHMARK_TEMPLATE(BM_Score, ScoreMethod::compressed)->Apply(Shapes);

BENCHMARK_MAIN();
