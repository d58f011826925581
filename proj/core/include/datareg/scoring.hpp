// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "datareg/compression.hpp"
#include "datareg/exec.hpp"
#include "datareg/net.hpp"
#include "datareg/partition.hpp"
#include "datareg/selection.hpp"

namespace datareg {

enum class ScoreMethod { direct, gip, pip, compressed };

std::string to_string(ScoreMethod m);
ScoreMethod parse_score_method(const std::string& s);

struct ScoreTable {
  Partition partition;
  ScoreMethod method = ScoreMethod::direct;
  std::vector<std::vector<double>> scores;  // [group][sample]

  std::size_t groups() const noexcept { return scores.size(); }
  std::size_t samples() const noexcept { return scores.empty() ? 0 : scores.front().size(); }
};

struct ScoreShape {
  std::size_t n = 0;
  std::size_t m = 0;
  std::size_t tokens = 0;
  std::size_t w_out = 0;
  std::size_t w_in = 0;
};

// Exact cost of scoring one dense layer. `memory` is the persistent workspace
// in scalar entries; `scratch` is the per-token projection buffer used only
// by the compressed method, so its measured peak is memory + scratch.
struct ScoreCost {
  std::uint64_t flops = 0;
  std::uint64_t memory = 0;
  std::uint64_t scratch = 0;
};

// Closed forms, with W = w_out * w_in and N = n + m:
//   direct      flops 2NTW + n(W - 1)                   memory (n + 1) W
//   gip         flops 2nmT^2 (w_out + w_in)             memory 2nmT^2
//   pip         flops 2NTW + n(T w_out - 1)             memory W + nT w_out
//   compressed  with c = k_in(2w_in - 1) + k_out(2w_out - 1), K = k_in k_out,
//               f = k_final(2K - 1) under a second stage (else 0), kappa the
//               output size:
//               flops NTc + (2nT - n + 2mT - 1) K + (n + 1) f + kappa + n(2 kappa - 1)
//               memory (n + 1) kappa, scratch k_in + k_out (+ K under a second stage)
ScoreCost predict_cost(ScoreMethod method, const ScoreShape& shape, const ProjectorDims& dims = {});
// Square layers (w_out = w_in = w). For the compressed method kappa must be a
// perfect square and is split evenly between the two factors.
ScoreCost predict_cost(ScoreMethod method, std::size_t n, std::size_t m, std::size_t tokens, std::size_t w,
                       std::size_t kappa = 0);

// Block-level scores against the target segment of the same block. Both
// FactorBlocks come from LayerFactors of the training and target segments.
// Allocations are tracked on `ctx`; inputs are read under `consumer`.
std::vector<double> score_direct(const FactorBlock& train, const FactorBlock& target, std::size_t tokens,
                                 ExecContext& ctx);
std::vector<double> score_gip(const FactorBlock& train, const FactorBlock& target, std::size_t tokens,
                              ExecContext& ctx);
std::vector<double> score_pip(const FactorBlock& train, const FactorBlock& target, std::size_t tokens,
                              ExecContext& ctx);
std::vector<double> score_compressed(const FactorBlock& train, const FactorBlock& target, std::size_t tokens,
                                     const Projector& proj, ExecContext& ctx);

// s_i = sum_tau <delta_{i,tau}, target_grad[x_{i,tau}]> for token ids (1 x nT),
// output gradients delta (D x nT) and the V x D target table.
std::vector<double> score_embedding(const Tensor& ids, const Tensor& delta, const Tensor& target_grad,
                                    std::size_t tokens, CostMeter* meter = nullptr);

// Scores of every training sample for a whole layer. Embedding layers use the
// lookup path whatever the method; LoRA layers sum over their two blocks.
// The compressed method needs a projector and a dense layer.
std::vector<double> score_layer(ScoreMethod method, const Model& model, std::size_t layer, const Segment& train,
                                const Segment& target, ExecContext& ctx, const Projector* proj = nullptr);

// score_layer on a merged-batch cache; throws PhaseError unless the cache
// holds swapped gradients.
std::vector<double> score_cache(ScoreMethod method, const Model& model, const LayerCache& cache, ExecContext& ctx,
                                const Projector* proj = nullptr);

// Per-parameter path: sum_{q in span} g_{i,q} ghat_q for a coordinate span.
std::vector<double> score_span(const Model& model, const Span& span, const Segment& train, const Segment& target,
                               ExecContext& ctx);

// s_{i,q} = g_{i,q} ghat_q over the whole layer for sample i.
std::vector<double> per_parameter_scores(const Model& model, std::size_t layer, const Segment& train,
                                         const Segment& target, std::size_t i);

// Per-sample and target gradients restricted to a span, for selection rules
// that need gradient access.
GroupGrads span_grads(const Model& model, const Span& span, const Segment& train, const Segment& target);

}  // namespace datareg
