// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <array>

#include "datareg/errors.hpp"
#include "datareg/scoring.hpp"
#include "datareg/stats.hpp"
#include "datareg/task.hpp"
#include "support.hpp"

using namespace datareg;

namespace {

// Random factor tensors for one dense block: training (n samples) and
// target (m samples), T tokens each.
struct Factors {
  Tensor b, a, bs, as;
  std::size_t n, m, t;

  Factors(std::size_t n_, std::size_t m_, std::size_t t_, std::size_t wo, std::size_t wi, Rng& rng)
      : b(Tensor::randn(wo, n_ * t_, rng)), a(Tensor::randn(wi, n_ * t_, rng)),
        bs(Tensor::randn(wo, m_ * t_, rng)), as(Tensor::randn(wi, m_ * t_, rng)), n(n_), m(m_), t(t_) {}

  FactorBlock train() const { return {b.rows(), a.rows(), 0, &b, &a, false}; }
  FactorBlock target() const { return {b.rows(), a.rows(), 0, &bs, &as, false}; }
};

// Materializes every per-sample gradient with plain loops.
std::vector<double> oracle_scores(const Factors& f) {
  const std::size_t wo = f.b.rows(), wi = f.a.rows();
  std::vector<double> ghat(wo * wi, 0.0);
  for (std::size_t c = 0; c < f.m * f.t; ++c)
    for (std::size_t r = 0; r < wo; ++r)
      for (std::size_t q = 0; q < wi; ++q) ghat[r * wi + q] += f.bs(r, c) * f.as(q, c) / double(f.m);
  std::vector<double> s(f.n, 0.0);
  for (std::size_t i = 0; i < f.n; ++i) {
    std::vector<double> g(wo * wi, 0.0);
    for (std::size_t tau = 0; tau < f.t; ++tau)
      for (std::size_t r = 0; r < wo; ++r)
        for (std::size_t q = 0; q < wi; ++q) g[r * wi + q] += f.b(r, i * f.t + tau) * f.a(q, i * f.t + tau);
    s[i] = dt::dotv(g, ghat);
  }
  return s;
}

struct Measured {
  std::vector<double> scores;
  std::uint64_t flops;
  std::int64_t workspace;
};

Measured measure(ScoreMethod method, const Factors& f, const Projector* proj = nullptr) {
  ExecContext ctx;
  ctx.meter().reset_peak();
  const auto live0 = ctx.meter().live();
  std::vector<double> s;
  switch (method) {
    case ScoreMethod::direct: s = score_direct(f.train(), f.target(), f.t, ctx); break;
    case ScoreMethod::gip: s = score_gip(f.train(), f.target(), f.t, ctx); break;
    case ScoreMethod::pip: s = score_pip(f.train(), f.target(), f.t, ctx); break;
    case ScoreMethod::compressed: s = score_compressed(f.train(), f.target(), f.t, *proj, ctx); break;
  }
  EXPECT_EQ(ctx.meter().live(), live0);
  return {s, ctx.meter().flops(), ctx.meter().peak() - live0};
}

}  // namespace

TEST(Direct, ZeroTargetGivesZeroScores) {
  Rng rng(1);
  Factors f(3, 2, 2, 4, 4, rng);
  f.bs.fill(0.0);
  for (double s : measure(ScoreMethod::direct, f).scores) EXPECT_EQ(s, 0.0);
}

TEST(Direct, SelfAlignmentIsSquaredNorm) {
  Rng rng(2);
  Factors f(1, 1, 3, 3, 4, rng);
  f.bs = f.b;
  f.as = f.a;
  const Tensor g = outer_sum(f.b, f.a);
  const double s = measure(ScoreMethod::direct, f).scores[0];
  EXPECT_NEAR(s, frob_inner(g, g), 1e-12);
  EXPECT_GE(s, 0.0);
}

TEST(Direct, MatchesMaterializedOracle) {
  Rng rng(12);
  for (auto [n, m, t, wo, wi] : {std::array<std::size_t, 5>{4, 2, 3, 5, 3}, {1, 3, 1, 2, 6}, {5, 1, 4, 4, 4}}) {
    const Factors f(n, m, t, wo, wi, rng);
    const auto want = oracle_scores(f);
    for (ScoreMethod method : {ScoreMethod::direct, ScoreMethod::gip, ScoreMethod::pip}) {
      const auto got = measure(method, f).scores;
      for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(got[i], want[i], 1e-10 * (1 + std::abs(want[i])));
    }
  }
}

TEST(Direct, FlopsAtSmallShape) {
  Rng rng(3);
  Factors f(2, 1, 2, 4, 4, rng);
  EXPECT_EQ(measure(ScoreMethod::direct, f).flops, 222u);
}

TEST(Gip, MatchesDirectAndFlops) {
  Rng rng(4);
  Factors f(2, 1, 2, 4, 4, rng);
  const auto d = measure(ScoreMethod::direct, f), g = measure(ScoreMethod::gip, f);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(g.scores[i], d.scores[i], 1e-10);
  EXPECT_EQ(g.flops, 128u);
}

TEST(Gip, OrthogonalActivationsGiveZero) {
  Tensor b(2, 1, {1, 2}), a(2, 1, {1, 0}), bs(2, 1, {3, 4}), as(2, 1, {0, 1});
  const FactorBlock tr{2, 2, 0, &b, &a, false}, tg{2, 2, 0, &bs, &as, false};
  ExecContext ctx;
  EXPECT_EQ(score_gip(tr, tg, 1, ctx)[0], 0.0);
}

TEST(Pip, MatchesDirectAndFlops) {
  Rng rng(5);
  Factors f(2, 1, 2, 4, 4, rng);
  const auto d = measure(ScoreMethod::direct, f), p = measure(ScoreMethod::pip, f);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(p.scores[i], d.scores[i], 1e-10);
  EXPECT_EQ(p.flops, 206u);
}

TEST(Pip, IdentityTargetGradient) {
  // Target tokens e_k e_k^T for k < w sum to the identity, so each score is
  // the trace of the sample gradient.
  const std::size_t w = 3;
  Rng rng(6);
  Tensor b = Tensor::randn(w, 2 * w, rng), a = Tensor::randn(w, 2 * w, rng);
  Tensor bs = Tensor::identity(w), as = Tensor::identity(w);
  const FactorBlock tr{w, w, 0, &b, &a, false}, tg{w, w, 0, &bs, &as, false};
  ExecContext ctx;
  const auto s = score_pip(tr, tg, w, ctx);
  for (std::size_t i = 0; i < 2; ++i) {
    double trace = 0.0;
    for (std::size_t c = i * w; c < (i + 1) * w; ++c)
      for (std::size_t r = 0; r < w; ++r) trace += b(r, c) * a(r, c);
    EXPECT_NEAR(s[i], trace, 1e-12);
  }
}

TEST(Compressed, IdentityProjectorIsLossless) {
  Rng rng(7);
  Factors f(3, 2, 2, 4, 5, rng);
  const Projector id = Projector::identity(4, 5);
  const auto d = measure(ScoreMethod::direct, f), c = measure(ScoreMethod::compressed, f, &id);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(c.scores[i], d.scores[i], 1e-10);
}

TEST(Compressed, ZeroActivationsGiveZero) {
  Rng rng(8);
  Factors f(3, 1, 2, 4, 4, rng);
  f.a.fill(0.0);
  const Projector p = Projector::gaussian(4, 4, {3, 3, 0}, 1);
  for (double s : measure(ScoreMethod::compressed, f, &p).scores) EXPECT_EQ(s, 0.0);
}

TEST(Compressed, ProjectorMismatchThrows) {
  Rng rng(9);
  Factors f(2, 1, 1, 4, 4, rng);
  const Projector p = Projector::gaussian(4, 5, {2, 2, 0}, 1);
  ExecContext ctx;
  EXPECT_THROW(score_compressed(f.train(), f.target(), 1, p, ctx), DimensionError);
}

// Per-factor projection noise scales as 1/sqrt(k); a 32 x 32 factorization
// (kappa = 1024) leaves the median rho near 0.76 on this data.
TEST(Compressed, RankAgreementWithExactScores) {
  const ModelSpec spec = dt::dense_spec({16, 16, 16}, 2);
  std::vector<double> rhos;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(1000 + seed);
    Model model(spec, rng);
    TaskSpec ts;
    ts.mismatch = 1.0;
    ts.seed = seed;
    const Task task = make_task(spec, ts);
    const Batch b = sample_batch(task, 32, 8, rng);
    ExecContext ctx;
    ForwardResult fwd = forward(model, b, ctx);
    Backward bw(model, b, fwd, ctx);
    bw.step(1);
    const Projector p = Projector::gaussian(16, 16, {128, 128, 0}, seed, 1);
    const auto exact = score_cache(ScoreMethod::direct, model, fwd.caches[1], ctx);
    const auto approx = score_cache(ScoreMethod::compressed, model, fwd.caches[1], ctx, &p);
    rhos.push_back(spearman(exact, approx).value());
  }
  std::nth_element(rhos.begin(), rhos.begin() + 10, rhos.end());
  EXPECT_GT(rhos[10], 0.9);
}

TEST(Costs, MeasuredEqualsPredicted) {
  Rng rng(10);
  for (int trial = 0; trial < 24; ++trial) {
    const std::size_t n = 1 + rng.below(5), m = 1 + rng.below(3), t = 1 + rng.below(4);
    const std::size_t wo = 1 + rng.below(6), wi = 1 + rng.below(6);
    Factors f(n, m, t, wo, wi, rng);
    const ScoreShape shape{n, m, t, wo, wi};
    for (ScoreMethod method : {ScoreMethod::direct, ScoreMethod::gip, ScoreMethod::pip}) {
      const auto got = measure(method, f);
      const auto want = predict_cost(method, shape);
      EXPECT_EQ(got.flops, want.flops) << to_string(method);
      EXPECT_EQ(got.workspace, std::int64_t(want.memory)) << to_string(method);
    }
    for (ProjectorDims dims : {ProjectorDims{2, 3, 0}, ProjectorDims{2, 2, 3}}) {
      const Projector p = Projector::gaussian(wo, wi, dims, trial);
      const auto got = measure(ScoreMethod::compressed, f, &p);
      const auto want = predict_cost(ScoreMethod::compressed, shape, dims);
      EXPECT_EQ(got.flops, want.flops);
      EXPECT_EQ(got.workspace, std::int64_t(want.memory + want.scratch));
    }
  }
}

TEST(Costs, ClosedFormValues) {
  EXPECT_EQ(predict_cost(ScoreMethod::direct, 8, 1, 1, 64).memory, 36864u);
  EXPECT_EQ(predict_cost(ScoreMethod::gip, 8, 1, 512, 64).memory, 4194304u);
  EXPECT_EQ(predict_cost(ScoreMethod::pip, 2, 1, 2, 4).memory, 16u + 16u);
  EXPECT_EQ(predict_cost(ScoreMethod::compressed, 8, 1, 4, 16, 64).memory, 9u * 64u);
  EXPECT_THROW(predict_cost(ScoreMethod::compressed, 8, 1, 4, 16, 60), ConfigError);
}

TEST(Costs, GipCrossoverNearHalfWidth) {
  const auto flops = [](ScoreMethod m, std::size_t t) { return predict_cost(m, 8, 1, t, 2048).flops; };
  EXPECT_LT(flops(ScoreMethod::gip, 512), flops(ScoreMethod::direct, 512));
  EXPECT_GT(flops(ScoreMethod::gip, 2048), flops(ScoreMethod::direct, 2048));
}

TEST(Costs, PipBeatsDirectExactlyWhenTokensBelowWidth) {
  for (std::size_t w : {4, 8, 16})
    for (std::size_t t = 1; t <= 2 * w; ++t) {
      const bool cheaper = predict_cost(ScoreMethod::pip, 4, 2, t, w).flops < predict_cost(ScoreMethod::direct, 4, 2, t, w).flops;
      EXPECT_EQ(cheaper, t < w) << "w=" << w << " T=" << t;
    }
}

TEST(Embedding, ZeroTargetAndSingleLookup) {
  Tensor ids(1, 2, {2, 0}), delta(3, 2, {1, 2, 3, 4, 5, 6});
  Tensor zero(4, 3);
  for (double s : score_embedding(ids, delta, zero, 1)) EXPECT_EQ(s, 0.0);
  Tensor table(4, 3);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) table(r, c) = double(r * 3 + c);
  const auto s = score_embedding(ids, delta, table, 1);
  EXPECT_EQ(s[0], 1 * 6 + 3 * 7 + 5 * 8.0);
  EXPECT_EQ(s[1], 2 * 0 + 4 * 1 + 6 * 2.0);
  Tensor bad(1, 2, {4, 0});
  EXPECT_THROW(score_embedding(bad, delta, table, 1), DimensionError);
}

TEST(Embedding, MatchesMaterializedGradients) {
  ModelSpec spec;
  spec.layers = {{LayerKind::embedding, 6, 3, 0}, {LayerKind::dense, 3, 2, 0}};
  spec.tokens = 3;
  Rng rng(11);
  Model model(spec, rng);
  const Batch b = dt::random_batch(spec, 4, 2, rng);
  const auto g = dt::library_grads(model, b);
  ExecContext ctx;
  ForwardResult fwd = forward(model, b, ctx);
  Backward bw(model, b, fwd, ctx);
  bw.step(1);
  bw.step(0);
  const auto s = score_cache(ScoreMethod::direct, model, fwd.caches[0], ctx);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(s[i], dt::dotv(g.train[0][i], g.target_mean[0]), 1e-12);
}

TEST(Layers, ExactMethodsAgreeOnAllLayerKinds) {
  ModelSpec spec;
  spec.layers = {{LayerKind::dense, 4, 5, 0}, {LayerKind::lora, 5, 4, 2}, {LayerKind::dense, 4, 3, 0}};
  spec.tokens = 3;
  Rng rng(12);
  Model model(spec, rng, {1.0, 0.5});
  const Batch b = dt::random_batch(spec, 5, 2, rng);
  const auto g = dt::library_grads(model, b);
  ExecContext ctx;
  ForwardResult fwd = forward(model, b, ctx);
  Backward bw(model, b, fwd, ctx);
  for (std::size_t l = 3; l-- > 0;) {
    EXPECT_THROW(score_cache(ScoreMethod::direct, model, fwd.caches[l], ctx), PhaseError);
    bw.step(l);
    for (ScoreMethod m : {ScoreMethod::direct, ScoreMethod::gip, ScoreMethod::pip}) {
      const auto s = score_cache(m, model, fwd.caches[l], ctx);
      for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(s[i], dt::dotv(g.train[l][i], g.target_mean[l]), 1e-10);
    }
  }
}

TEST(Layers, SpanScoresAddUpAndMatchPerParameter) {
  const ModelSpec spec = dt::dense_spec({4, 5, 3}, 2);
  Rng rng(13);
  Model model(spec, rng);
  const Batch b = dt::random_batch(spec, 4, 2, rng);
  ExecContext ctx;
  ForwardResult fwd = forward(model, b, ctx);
  Backward bw(model, b, fwd, ctx);
  bw.step(1);
  const LayerCache& c = fwd.caches[1];
  const auto whole = score_cache(ScoreMethod::direct, model, c, ctx);
  const auto lo = score_span(model, {1, 0, 7}, c.train, c.target, ctx);
  const auto hi = score_span(model, {1, 7, 15}, c.train, c.target, ctx);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(lo[i] + hi[i], whole[i], 1e-12);
    const auto per = per_parameter_scores(model, 1, c.train, c.target, i);
    double s = 0.0;
    for (std::size_t q = 0; q < 7; ++q) s += per[q];
    EXPECT_EQ(s, lo[i]);
  }
}

TEST(Layers, CompressedNeedsDenseLayer) {
  ModelSpec spec;
  spec.layers = {{LayerKind::embedding, 6, 3, 0}, {LayerKind::dense, 3, 2, 0}};
  Rng rng(14);
  Model model(spec, rng);
  const Batch b = dt::random_batch(spec, 2, 1, rng);
  ExecContext ctx;
  ForwardResult fwd = forward(model, b, ctx);
  Backward bw(model, b, fwd, ctx);
  bw.step(1);
  bw.step(0);
  const Projector p = Projector::gaussian(3, 6, {2, 2, 0}, 0);
  EXPECT_THROW(score_cache(ScoreMethod::compressed, model, fwd.caches[0], ctx, &p), ConfigError);
}
