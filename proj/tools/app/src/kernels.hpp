// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "datareg/biasvar.hpp"
#include "datareg/compression.hpp"
#include "datareg/net.hpp"
#include "datareg/scoring.hpp"

namespace datareg::app {

// Random dense factors for one square block: n training and m target
// samples of T tokens each.
struct Factors {
  Tensor b, a, bs, as;
  Factors(std::size_t n, std::size_t m, std::size_t t, std::size_t w, Rng& rng);
  FactorBlock train() const { return {b.rows(), a.rows(), 0, &b, &a, false}; }
  FactorBlock target() const { return {b.rows(), a.rows(), 0, &bs, &as, false}; }
};

struct KernelRun {
  std::vector<double> scores;
  std::uint64_t flops = 0;
  std::int64_t workspace = 0;  // peak entries above the starting level
  std::int64_t stored = 0;     // peak with compression scratch excluded
};

// Runs one scoring kernel on a fresh execution context.
KernelRun run_kernel(ScoreMethod method, const Factors& f, std::size_t t, const Projector* proj = nullptr);

// Isotropic populations with target mean `level` in every coordinate; the
// training mean moves by +-shift/sqrt(d) on alternating blocks of four.
PopulationSpec shifted_population(std::size_t d, double shift, double target_var, double train_var, double level = 0.5);

}  // namespace datareg::app
