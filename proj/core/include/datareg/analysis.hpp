// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "datareg/net.hpp"
#include "datareg/scoring.hpp"

namespace datareg {

// Per-layer scores of one batch and how each layer's ranking agrees with the
// ranking by the summed (whole-model) score.
struct LayerScoreStats {
  std::size_t layer = 0;
  double mean_abs = 0.0;
  std::optional<double> spearman;  // null for n < 2 or constant scores
};

struct CaseStudy {
  std::vector<std::vector<double>> layer_scores;  // [layer][sample]
  std::vector<double> global_scores;
  std::vector<LayerScoreStats> layers;
};

// One merged forward/backward pass, then every layer scored with `method`.
CaseStudy score_layers(const Model& model, const Batch& batch, ScoreMethod method = ScoreMethod::direct);

// Multiplies layer `from` by c and layer `from + 1` by 1/c. With a
// positively homogeneous activation (identity or relu) the network function
// is unchanged while the gradient of layer `from + 1` grows by c and that of
// layer `from` shrinks by 1/c. Throws ConfigError for other activations or
// non-dense layers.
void rescale_adjacent(Model& model, std::size_t from, double c);

}  // namespace datareg
