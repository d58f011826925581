// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include "datareg/scoring.hpp"

#include <algorithm>
#include <cmath>

#include "datareg/errors.hpp"

namespace datareg {

namespace {

struct BlockCounts {
  std::size_t n;
  std::size_t m;
};

BlockCounts counts(const FactorBlock& train, const FactorBlock& target, std::size_t tokens) {
  if (tokens == 0) throw DimensionError("tokens per sample must be positive");
  if (train.rows != target.rows || train.cols != target.cols || train.one_hot != target.one_hot) {
    throw DimensionError("training and target factor blocks describe different parameters");
  }
  const std::size_t n = train.out->cols() / tokens;
  const std::size_t m = target.out->cols() / tokens;
  if (m == 0) throw SelectionError("scoring needs at least one target sample");
  return {n, m};
}

// dst = sum_{k < T} b[:, c0 + k] a[:, c0 + k]^T with the first term taken as a
// product; (2T - 1) * rows * cols flops.
void outer_sum_range(const Tensor& b, const Tensor& a, std::size_t c0, std::size_t t, double* dst) {
  const std::size_t wi = a.rows();
  for (std::size_t r = 0; r < b.rows(); ++r) {
    const double* br = b.row(r) + c0;
    for (std::size_t c = 0; c < wi; ++c) {
      const double* ac = a.row(c) + c0;
      double s = br[0] * ac[0];
      for (std::size_t k = 1; k < t; ++k) s = s + br[k] * ac[k];
      dst[r * wi + c] = s;
    }
  }
}

double inner(const double* x, const double* y, std::size_t len) {
  double s = x[0] * y[0];
  for (std::size_t k = 1; k < len; ++k) s = s + x[k] * y[k];
  return s;
}

// Target gradient of a dense block, (1/m) sum over all target tokens.
Tensor target_grad(const FactorBlock& target, std::size_t m, ExecContext& ctx) {
  Tensor g = outer_sum(*target.out, *target.in, ctx.flops());
  scale_inplace(g, 1.0 / double(m), ctx.flops());
  return g;
}

void add_scores(std::vector<double>& acc, const std::vector<double>& x, CostMeter* meter) {
  if (acc.empty()) {
    acc = x;
    return;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = acc[i] + x[i];
  if (meter) meter->add_flops(acc.size());
}

std::vector<double> score_embedding_block(const FactorBlock& train, const FactorBlock& target,
                                          std::size_t tokens, ExecContext& ctx) {
  const auto [n, m] = counts(train, target, tokens);
  (void)n;
  const Tensor& ids = *target.out;
  const Tensor& delta = *target.in;
  Tensor table(train.rows, train.cols);
  ctx.track(table, "embedding/target_grad");
  std::vector<char> touched(train.rows, 0);
  for (std::size_t c = 0; c < ids.cols(); ++c) {
    const auto x = static_cast<std::size_t>(ids(0, c));
    if (x >= table.rows()) throw DimensionError("token id outside vocabulary");
    touched[x] = 1;
    double* row = table.row(x);
    for (std::size_t d = 0; d < table.cols(); ++d) row[d] = row[d] + delta(d, c);
  }
  std::uint64_t flops = ids.cols() * table.cols();
  const double inv = 1.0 / double(m);
  for (std::size_t x = 0; x < table.rows(); ++x) {
    if (!touched[x]) continue;
    for (double& v : std::span<double>(table.row(x), table.cols())) v = v * inv;
    flops += table.cols();
  }
  ctx.meter().add_flops(flops);
  auto s = score_embedding(*train.out, *train.in, table, tokens, ctx.flops());
  ctx.release(table);
  return s;
}

std::vector<double> score_factors(ScoreMethod method, const LayerFactors& train, const LayerFactors& target,
                                  std::size_t tokens, ExecContext& ctx, const Projector* proj) {
  std::vector<double> total;
  for (std::size_t b = 0; b < train.blocks().size(); ++b) {
    const FactorBlock& tr = train.blocks()[b];
    const FactorBlock& tg = target.blocks()[b];
    std::vector<double> s;
    if (tr.one_hot) {
      s = score_embedding_block(tr, tg, tokens, ctx);
    } else {
      switch (method) {
        case ScoreMethod::direct: s = score_direct(tr, tg, tokens, ctx); break;
        case ScoreMethod::gip: s = score_gip(tr, tg, tokens, ctx); break;
        case ScoreMethod::pip: s = score_pip(tr, tg, tokens, ctx); break;
        case ScoreMethod::compressed:
          if (!proj) throw ConfigError("compressed scoring needs a projector");
          s = score_compressed(tr, tg, tokens, *proj, ctx);
          break;
      }
    }
    add_scores(total, s, ctx.flops());
  }
  return total;
}

}  // namespace

std::string to_string(ScoreMethod m) {
  switch (m) {
    case ScoreMethod::direct: return "direct";
    case ScoreMethod::gip: return "gip";
    case ScoreMethod::pip: return "pip";
    case ScoreMethod::compressed: return "compressed";
  }
  return "?";
}

ScoreMethod parse_score_method(const std::string& s) {
  if (s == "direct") return ScoreMethod::direct;
  if (s == "gip") return ScoreMethod::gip;
  if (s == "pip") return ScoreMethod::pip;
  if (s == "compressed") return ScoreMethod::compressed;
  throw ConfigError("unknown scoring method '" + s + "'");
}

ScoreCost predict_cost(ScoreMethod method, const ScoreShape& s, const ProjectorDims& dims) {
  const std::uint64_t n = s.n, m = s.m, t = s.tokens, wo = s.w_out, wi = s.w_in, w2 = wo * wi;
  const std::uint64_t big_n = n + m;
  switch (method) {
    case ScoreMethod::direct: return {2 * big_n * t * w2 + n * (w2 - 1), (n + 1) * w2, 0};
    case ScoreMethod::gip: return {2 * n * m * t * t * (wo + wi), 2 * n * m * t * t, 0};
    case ScoreMethod::pip: return {2 * big_n * t * w2 + n * (t * wo - 1), w2 + n * t * wo, 0};
    case ScoreMethod::compressed: {
      const std::uint64_t ki = dims.k_in, ko = dims.k_out, k1 = ki * ko, kappa = dims.kappa();
      const std::uint64_t c = ki * (2 * wi - 1) + ko * (2 * wo - 1);
      const std::uint64_t f = dims.k_final ? dims.k_final * (2 * k1 - 1) : 0;
      const std::uint64_t flops =
          big_n * t * c + (2 * n * t - n + 2 * m * t - 1) * k1 + (n + 1) * f + kappa + n * (2 * kappa - 1);
      return {flops, (n + 1) * kappa, ki + ko + (dims.k_final ? k1 : 0)};
    }
  }
  return {};
}

ScoreCost predict_cost(ScoreMethod method, std::size_t n, std::size_t m, std::size_t tokens, std::size_t w,
                       std::size_t kappa) {
  ProjectorDims dims;
  if (method == ScoreMethod::compressed) {
    const auto k = static_cast<std::size_t>(std::llround(std::sqrt(double(kappa))));
    if (k == 0 || k * k != kappa) throw ConfigError("square compressed cost needs kappa = k^2");
    dims = {k, k, 0};
  }
  return predict_cost(method, ScoreShape{n, m, tokens, w, w}, dims);
}

std::vector<double> score_direct(const FactorBlock& train, const FactorBlock& target, std::size_t tokens,
                                 ExecContext& ctx) {
  const auto [n, m] = counts(train, target, tokens);
  const std::size_t w2 = train.rows * train.cols;
  Tensor ghat = target_grad(target, m, ctx);
  ctx.track(ghat, "direct/target_grad");
  Tensor per(n * train.rows, train.cols);
  ctx.track(per, "direct/per_sample");
  for (std::size_t i = 0; i < n; ++i) {
    outer_sum_range(*train.out, *train.in, i * tokens, tokens, per.row(i * train.rows));
  }
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = inner(ghat.data().data(), per.row(i * train.rows), w2);
  ctx.meter().add_flops(n * (2 * tokens - 1) * w2 + n * (2 * w2 - 1));
  ctx.release(per);
  ctx.release(ghat);
  return s;
}

std::vector<double> score_gip(const FactorBlock& train, const FactorBlock& target, std::size_t tokens,
                              ExecContext& ctx) {
  const auto [n, m] = counts(train, target, tokens);
  const std::size_t t = tokens, t2 = t * t;
  const Tensor& bo = *train.out;
  const Tensor& ai = *train.in;
  const Tensor& bs = *target.out;
  const Tensor& as = *target.in;
  // All n*m token cross-correlation pairs are materialized together.
  Tensor ghost_out(n * m * t, t);
  Tensor ghost_in(n * m * t, t);
  ctx.track(ghost_out, "gip/ghost_out");
  ctx.track(ghost_in, "gip/ghost_in");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t base = (i * m + j) * t;
      for (std::size_t u = 0; u < t; ++u) {
        for (std::size_t v = 0; v < t; ++v) {
          const std::size_t ci = i * t + u, cj = j * t + v;
          double so = bo(0, ci) * bs(0, cj);
          for (std::size_t r = 1; r < bo.rows(); ++r) so = so + bo(r, ci) * bs(r, cj);
          double si = ai(0, ci) * as(0, cj);
          for (std::size_t r = 1; r < ai.rows(); ++r) si = si + ai(r, ci) * as(r, cj);
          ghost_out(base + u, v) = so;
          ghost_in(base + u, v) = si;
        }
      }
    }
  }
  std::vector<double> s(n);
  const double inv = 1.0 / double(m);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t base = (i * m + j) * t;
      const double sij = inner(ghost_out.row(base), ghost_in.row(base), t2);
      acc = j == 0 ? sij : acc + sij;
    }
    s[i] = acc * inv;
  }
  ctx.meter().add_flops(n * m * (t2 * (2 * bo.rows() - 1 + 2 * ai.rows() - 1) + 2 * t2 - 1) + n * (m - 1) + n);
  ctx.release(ghost_in);
  ctx.release(ghost_out);
  return s;
}

std::vector<double> score_pip(const FactorBlock& train, const FactorBlock& target, std::size_t tokens,
                              ExecContext& ctx) {
  const auto [n, m] = counts(train, target, tokens);
  Tensor ghat = target_grad(target, m, ctx);
  ctx.track(ghat, "pip/target_grad");
  Tensor v = matmul(ghat, *train.in, ctx.flops());
  ctx.track(v, "pip/projected");
  const Tensor& b = *train.out;
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t tau = 0; tau < tokens; ++tau) {
      const std::size_t c = i * tokens + tau;
      double d = b(0, c) * v(0, c);
      for (std::size_t r = 1; r < b.rows(); ++r) d = d + b(r, c) * v(r, c);
      acc = tau == 0 ? d : acc + d;
    }
    s[i] = acc;
  }
  ctx.meter().add_flops(n * tokens * (2 * b.rows() - 1) + n * (tokens - 1));
  ctx.release(v);
  ctx.release(ghat);
  return s;
}

std::vector<double> score_compressed(const FactorBlock& train, const FactorBlock& target, std::size_t tokens,
                                     const Projector& proj, ExecContext& ctx) {
  const auto [n, m] = counts(train, target, tokens);
  if (proj.w_out() != train.rows || proj.w_in() != train.cols) {
    throw DimensionError("projector is bound to a " + std::to_string(proj.w_out()) + "x" +
                         std::to_string(proj.w_in()) + " layer, block is " + std::to_string(train.rows) + "x" +
                         std::to_string(train.cols));
  }
  const std::size_t kappa = proj.kappa();
  Tensor tgt(kappa, 1);
  ctx.track(tgt, "compressed/target");
  std::vector<std::size_t> cols(m * tokens);
  for (std::size_t c = 0; c < cols.size(); ++c) cols[c] = c;
  {
    auto g = project_outer_sum(proj, *target.out, *target.in, cols, ctx.flops(), &ctx);
    const double inv = 1.0 / double(m);
    for (std::size_t k = 0; k < kappa; ++k) tgt(k, 0) = g[k] * inv;
    ctx.meter().add_flops(kappa);
  }
  Tensor per(n, kappa);
  ctx.track(per, "compressed/per_sample");
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t one[] = {i};
    const auto sc = sample_columns(one, tokens);
    const auto g = project_outer_sum(proj, *train.out, *train.in, sc, ctx.flops(), &ctx);
    std::copy(g.begin(), g.end(), per.row(i));
  }
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = inner(tgt.data().data(), per.row(i), kappa);
  ctx.meter().add_flops(n * (2 * kappa - 1));
  ctx.release(per);
  ctx.release(tgt);
  return s;
}

std::vector<double> score_embedding(const Tensor& ids, const Tensor& delta, const Tensor& target_grad,
                                    std::size_t tokens, CostMeter* meter) {
  if (ids.cols() != delta.cols() || tokens == 0 || ids.cols() % tokens != 0) {
    throw DimensionError("token ids and gradients disagree on the token count");
  }
  if (delta.rows() != target_grad.cols()) throw DimensionError("embedding width mismatch");
  const std::size_t n = ids.cols() / tokens, d = delta.rows();
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t tau = 0; tau < tokens; ++tau) {
      const std::size_t c = i * tokens + tau;
      const auto x = static_cast<std::size_t>(ids(0, c));
      if (ids(0, c) < 0 || x >= target_grad.rows()) throw DimensionError("token id outside vocabulary");
      const double* row = target_grad.row(x);
      double v = delta(0, c) * row[0];
      for (std::size_t k = 1; k < d; ++k) v = v + delta(k, c) * row[k];
      acc = tau == 0 ? v : acc + v;
    }
    s[i] = acc;
  }
  if (meter) meter->add_flops(n * tokens * (2 * d - 1) + n * (tokens - 1));
  return s;
}

std::vector<double> score_layer(ScoreMethod method, const Model& model, std::size_t layer, const Segment& train,
                                const Segment& target, ExecContext& ctx, const Projector* proj) {
  if (method == ScoreMethod::compressed && model.spec().layers.at(layer).kind != LayerKind::dense) {
    throw ConfigError("compressed scoring is implemented for dense layers only");
  }
  const std::string consumer = "scoring:" + std::to_string(layer);
  LayerFactors tr(model, layer, train, &ctx, consumer);
  LayerFactors tg(model, layer, target, &ctx, consumer);
  auto s = score_factors(method, tr, tg, model.spec().tokens, ctx, proj);
  tg.release();
  tr.release();
  return s;
}

std::vector<double> score_cache(ScoreMethod method, const Model& model, const LayerCache& cache, ExecContext& ctx,
                                const Projector* proj) {
  if (cache.phase != CachePhase::swapped) {
    throw PhaseError("layer " + std::to_string(cache.layer) + " must be swapped before scoring");
  }
  return score_layer(method, model, cache.layer, cache.train, cache.target, ctx, proj);
}

std::vector<double> score_span(const Model& model, const Span& span, const Segment& train, const Segment& target,
                               ExecContext& ctx) {
  const std::size_t t = model.spec().tokens;
  const std::size_t size = model.spec().trainable_size(span.layer);
  if (span.begin >= span.end || span.end > size) throw DimensionError("span outside layer coordinates");
  const std::string consumer = "scoring:" + std::to_string(span.layer);
  LayerFactors tr(model, span.layer, train, &ctx, consumer);
  LayerFactors tg(model, span.layer, target, &ctx, consumer);
  const std::size_t n = train.count, m = target.count;
  if (m == 0) throw SelectionError("scoring needs at least one target sample");
  Tensor ghat_t(span.size(), 1), gi_t(span.size(), 1);
  ctx.track(ghat_t, "span/target_grad");
  ctx.track(gi_t, "span/per_sample");
  std::vector<double> ghat(size, 0.0), gi(size, 0.0);
  std::vector<std::size_t> all(m * t);
  for (std::size_t c = 0; c < all.size(); ++c) all[c] = c;
  accumulate_layer_grad(ghat, tg, all, span.begin, span.end, ctx.flops());
  const double inv = 1.0 / double(m);
  for (std::size_t q = span.begin; q < span.end; ++q) ghat[q] = ghat[q] * inv;
  ctx.meter().add_flops(span.size());
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(gi.begin() + span.begin, gi.begin() + span.end, 0.0);
    const std::size_t one[] = {i};
    accumulate_layer_grad(gi, tr, sample_columns(one, t), span.begin, span.end, ctx.flops());
    s[i] = inner(ghat.data() + span.begin, gi.data() + span.begin, span.size());
  }
  ctx.meter().add_flops(n * (2 * span.size() - 1));
  ctx.release(gi_t);
  ctx.release(ghat_t);
  return s;
}

std::vector<double> per_parameter_scores(const Model& model, std::size_t layer, const Segment& train,
                                         const Segment& target, std::size_t i) {
  const std::size_t t = model.spec().tokens;
  const std::size_t size = model.spec().trainable_size(layer);
  LayerFactors tr(model, layer, train, nullptr, {});
  LayerFactors tg(model, layer, target, nullptr, {});
  std::vector<double> ghat(size, 0.0), gi(size, 0.0);
  std::vector<std::size_t> all(target.count * t);
  for (std::size_t c = 0; c < all.size(); ++c) all[c] = c;
  accumulate_layer_grad(ghat, tg, all, 0, size);
  const double inv = 1.0 / double(target.count);
  const std::size_t one[] = {i};
  accumulate_layer_grad(gi, tr, sample_columns(one, t), 0, size);
  std::vector<double> s(size);
  for (std::size_t q = 0; q < size; ++q) s[q] = gi[q] * (ghat[q] * inv);
  return s;
}

GroupGrads span_grads(const Model& model, const Span& span, const Segment& train, const Segment& target) {
  const std::size_t t = model.spec().tokens;
  const std::size_t size = model.spec().trainable_size(span.layer);
  LayerFactors tr(model, span.layer, train, nullptr, {});
  LayerFactors tg(model, span.layer, target, nullptr, {});
  GroupGrads out;
  std::vector<double> acc(size, 0.0);
  std::vector<std::size_t> all(target.count * t);
  for (std::size_t c = 0; c < all.size(); ++c) all[c] = c;
  accumulate_layer_grad(acc, tg, all, span.begin, span.end);
  const double inv = 1.0 / double(target.count);
  for (std::size_t q = span.begin; q < span.end; ++q) out.target.push_back(acc[q] * inv);
  for (std::size_t i = 0; i < train.count; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const std::size_t one[] = {i};
    accumulate_layer_grad(acc, tr, sample_columns(one, t), span.begin, span.end);
    out.samples.emplace_back(acc.begin() + span.begin, acc.begin() + span.end);
  }
  return out;
}

}  // namespace datareg
