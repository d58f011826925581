// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include "kernels.hpp"

#include <cmath>

#include "datareg/exec.hpp"
#include "datareg/ledger.hpp"

namespace datareg::app {

Factors::Factors(std::size_t n, std::size_t m, std::size_t t, std::size_t w, Rng& rng)
    : b(Tensor::randn(w, n * t, rng)), a(Tensor::randn(w, n * t, rng)), bs(Tensor::randn(w, m * t, rng)),
      as(Tensor::randn(w, m * t, rng)) {}

KernelRun run_kernel(ScoreMethod method, const Factors& f, std::size_t t, const Projector* proj) {
  ExecContext ctx;
  const std::int64_t live0 = ctx.meter().live();
  KernelRun r;
  switch (method) {
    case ScoreMethod::direct: r.scores = score_direct(f.train(), f.target(), t, ctx); break;
    case ScoreMethod::gip: r.scores = score_gip(f.train(), f.target(), t, ctx); break;
    case ScoreMethod::pip: r.scores = score_pip(f.train(), f.target(), t, ctx); break;
    case ScoreMethod::compressed: r.scores = score_compressed(f.train(), f.target(), t, *proj, ctx); break;
  }
  r.flops = ctx.meter().flops();
  r.workspace = ctx.meter().peak() - live0;
  const auto kept = select_events(ctx.ledger().events,
                                  [](const LedgerEvent& e) { return e.label.rfind("compress/", 0) != 0; });
  r.stored = replay(kept).peak;
  return r;
}

PopulationSpec shifted_population(std::size_t d, double shift, double target_var, double train_var, double level) {
  std::vector<double> target(d, level), train(d);
  for (std::size_t j = 0; j < d; ++j) train[j] = target[j] + ((j / 4) % 2 ? -shift : shift) / std::sqrt(double(d));
  return PopulationSpec::isotropic(target, train, target_var, train_var);
}

}  // namespace datareg::app
