// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include "datareg/analysis.hpp"

#include <cmath>

#include "datareg/errors.hpp"
#include "datareg/stats.hpp"

namespace datareg {

CaseStudy score_layers(const Model& model, const Batch& batch, ScoreMethod method) {
  const ModelSpec& spec = model.spec();
  batch.validate(spec);
  if (batch.m() == 0) throw ConfigError("case study needs at least one target sample");
  ExecContext ctx;
  ForwardResult fwd = forward(model, batch, ctx);
  Backward bw(model, batch, fwd, ctx);
  const std::size_t L = spec.num_layers(), n = batch.n();
  CaseStudy cs;
  cs.layer_scores.assign(L, {});
  cs.global_scores.assign(n, 0.0);
  std::vector<Projector> projectors;
  for (std::size_t l = L; l-- > 0;) {
    bw.step(l);
    LayerCache& cache = fwd.caches[l];
    std::optional<Projector> proj;
    if (method == ScoreMethod::compressed) {
      const LayerSpec& ls = spec.layers[l];
      proj = Projector::gaussian(ls.w_out, ls.w_in, {8, 8, 0}, 0, l);
    }
    cs.layer_scores[l] = score_layer(method, model, l, cache.train, cache.target, ctx, proj ? &*proj : nullptr);
    release_segment(cache.train, ctx);
    release_segment(cache.target, ctx);
  }
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t i = 0; i < n; ++i) cs.global_scores[i] += cs.layer_scores[l][i];
  for (std::size_t l = 0; l < L; ++l) {
    LayerScoreStats st;
    st.layer = l;
    double s = 0.0;
    for (double v : cs.layer_scores[l]) s += std::abs(v);
    st.mean_abs = n ? s / double(n) : 0.0;
    st.spearman = spearman(cs.layer_scores[l], cs.global_scores);
    cs.layers.push_back(st);
  }
  return cs;
}

void rescale_adjacent(Model& model, std::size_t from, double c) {
  const ModelSpec& spec = model.spec();
  if (from + 1 >= spec.num_layers()) throw ConfigError("rescale needs a layer above the scaled one");
  if (spec.activation == Activation::tanh) throw ConfigError("rescale preserves the function only for identity or relu");
  if (!(c > 0.0)) throw ConfigError("rescale factor must be positive");
  for (std::size_t l : {from, from + 1}) {
    if (spec.layers[l].kind != LayerKind::dense) throw ConfigError("rescale applies to dense layers only");
  }
  scale_inplace(model.params(from).w, c);
  scale_inplace(model.params(from + 1).w, 1.0 / c);
}

}  // namespace datareg
