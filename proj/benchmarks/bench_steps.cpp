// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
// One optimizer step per schedule on a dense tanh network of L layers of
// width w. The ledger peak is reported so time and memory read side by side.
#include <benchmark/benchmark.h>

#include "datareg/updates.hpp"

using namespace datareg;

namespace {

ModelSpec square_net(std::size_t layers, std::size_t w, std::size_t t) {
  ModelSpec s;
  for (std::size_t l = 0; l < layers; ++l) s.layers.push_back({LayerKind::dense, w, w, 0});
  s.tokens = t;
  return s;
}

SampleSet samples(const ModelSpec& spec, std::size_t count, Rng& rng) {
  SampleSet s;
  s.count = count;
  s.inputs = Tensor::randn(spec.input_width(), count * spec.tokens, rng);
  s.targets = Tensor::randn(spec.output_width(), count * spec.tokens, rng);
  return s;
}

enum Kind { kStandard, kGlobal, kLayerwise, kTwoPass };

void BM_Step(benchmark::State& state) {
  const auto kind = Kind(state.range(0));
  const auto layers = std::size_t(state.range(1)), w = std::size_t(state.range(2));
  const std::size_t n = 16, m = 2, t = 4;
  const ModelSpec spec = square_net(layers, w, t);
  Rng rng(7);
  const Model base(spec, rng);
  Batch batch{t, samples(spec, n, rng), samples(spec, m, rng)};
  StepConfig cfg;
  cfg.lr = 0.01;
  cfg.spec.rule.k = n / 2;
  cfg.spec.partition = kind == kGlobal || kind == kTwoPass ? Partition::global(spec) : Partition::layer_wise(spec);
  if (kind == kTwoPass) cfg.schedule = Schedule::two_pass;
  std::int64_t peak = 0;
  for (auto _ : state) {
    Model model = base;
    const StepReport r = kind == kStandard ? step_standard(model, batch, cfg.lr) : run_step(model, batch, cfg);
    peak = r.meter.peak_entries;
    benchmark::DoNotOptimize(r.update.layers.data());
  }
  static const char* names[] = {"standard", "global", "layerwise", "two_pass"};
  state.SetLabel(names[kind]);
  state.counters["peak_entries"] = double(peak);
}

}  // namespace

BENCHMARK(BM_Step)->ArgsProduct({{kStandard, kGlobal, kLayerwise, kTwoPass}, {2, 6}, {32, 128}});

BENCHMARK_MAIN();
