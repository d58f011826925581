// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include "datareg/updates.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "datareg/errors.hpp"

namespace datareg {

namespace {

Projector make_projector(const LayerSpec& ls, const MesoConfig& cfg, std::size_t layer, std::uint64_t epoch) {
  if (cfg.identity) return Projector::identity(ls.w_out, ls.w_in);
  return Projector::gaussian(ls.w_out, ls.w_in, cfg.dims, cfg.seed, layer, epoch);
}

std::string tag(const char* what, std::size_t l) { return std::string(what) + ":" + std::to_string(l); }

}  // namespace

MesoState::MesoState(const ModelSpec& spec, const MesoConfig& cfg) : cfg_(cfg) {
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    if (spec.layers[l].kind != LayerKind::dense) throw ConfigError("compressed optimizer states need dense layers");
    projectors_.push_back(make_projector(spec.layers[l], cfg_, l, 0));
    moments_.push_back(MomentState::zeros(projectors_.back().kappa(), cfg_.adam));
  }
}

void MesoState::begin_step(const ModelSpec& spec) {
  if (steps_ > 0 && cfg_.refresh_every > 0 && steps_ % cfg_.refresh_every == 0) {
    ++epoch_;
    for (std::size_t l = 0; l < projectors_.size(); ++l) {
      Projector next = make_projector(spec.layers[l], cfg_, l, epoch_);
      MomentState& ms = moments_[l];
      ms.m = refresh_first_moment(ms.m, projectors_[l], next);
      Rng rng(derive_seed(cfg_.seed, {l, epoch_, 2}));
      ms.v = refresh_second_moment(ms.v, projectors_[l], next, cfg_.second_moment, rng);
      // The probe estimate can dip below zero; a second moment cannot.
      for (double& v : ms.v) v = std::max(v, 0.0);
      projectors_[l] = std::move(next);
    }
  }
  ++steps_;
}

StepReport step_meso_layerwise(Model& model, const Batch& batch, const StepConfig& cfg, MesoState& state) {
  const ModelSpec& spec = model.spec();
  batch.validate(spec);
  if (batch.n() == 0 || batch.m() == 0) throw SelectionError("compressed layer-wise step needs training and target samples");
  if (cfg.spec.mode == UpdateMode::subset) cfg.spec.rule.validate(batch.n());
  if (!state.initialized()) state = MesoState(spec, cfg.meso);
  state.begin_step(spec);

  const std::size_t L = spec.num_layers(), n = batch.n(), m = batch.m(), T = batch.tokens;
  StepReport r;
  r.kind = "meso_layerwise";
  r.target_loss_before = batch.m() ? evaluate_loss(model, batch.target, T) : 0.0;
  r.update = Update::zeros(spec);
  ExecContext ctx(cfg.precision);
  ForwardResult fwd = forward(model, batch, ctx);
  r.train_loss = std::accumulate(fwd.train_losses.begin(), fwd.train_losses.end(), 0.0);
  Tensor u_tensor(spec.param_count(), 1);
  std::vector<Tensor> moment_tensors;
  {
    PhaseScope phase(ctx, "optimizer");
    ctx.track(u_tensor, "u");
    if (cfg.optimizer == OptimizerKind::meso_adamw) {
      for (std::size_t l = 0; l < L; ++l) {
        moment_tensors.emplace_back(2 * state.projector(l).kappa(), 1);
        ctx.track(moment_tensors.back(), tag("moments", l));
      }
    }
  }
  const Partition lw = Partition::layer_wise(spec);
  ScoreTable table;
  table.partition = lw;
  table.method = ScoreMethod::compressed;
  table.scores.resize(L);
  r.groups.resize(L);

  const auto target_cols = [&] {
    std::vector<std::size_t> c(m * T);
    std::iota(c.begin(), c.end(), 0);
    return c;
  }();
  Backward bw(model, batch, fwd, ctx);
  for (std::size_t l = L; l-- > 0;) {
    bw.step(l);
    LayerCache& cache = fwd.caches[l];
    PhaseScope phase(ctx, tag("scoring", l));
    const std::string consumer = tag("scoring", l);
    const Projector& proj = state.projector(l);
    const std::size_t kappa = proj.kappa();
    for (const Segment* seg : {&cache.train, &cache.target}) {
      ctx.read(seg->a, consumer);
      ctx.read(seg->e, consumer);
    }
    Tensor tgt(kappa, 1), per(n, kappa);
    ctx.track(tgt, "meso/target");
    {
      const auto g = project_outer_sum(proj, cache.target.e, cache.target.a, target_cols, ctx.flops(), &ctx);
      const double inv = 1.0 / double(m);
      for (std::size_t k = 0; k < kappa; ++k) tgt(k, 0) = g[k] * inv;
    }
    ctx.track(per, "meso/per_sample");
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t one[] = {i};
      const auto g = project_outer_sum(proj, cache.train.e, cache.train.a, sample_columns(one, T), ctx.flops(), &ctx);
      std::copy(g.begin(), g.end(), per.row(i));
    }
    // The layer's pair is no longer needed once compressed.
    release_segment(cache.train, ctx);
    release_segment(cache.target, ctx);
    cache.phase = CachePhase::released;

    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) scores[i] = dot(tgt.data(), std::span<const double>(per.row(i), kappa), ctx.flops());
    table.scores[l] = scores;
    GroupSelection sel;
    if (cfg.spec.mode == UpdateMode::full_training) {
      sel.samples.resize(n);
      std::iota(sel.samples.begin(), sel.samples.end(), 0);
      sel.divisor = double(n);
    } else {
      GroupGrads gg;
      if (cfg.spec.rule.needs_gradients()) {
        for (std::size_t i = 0; i < n; ++i) gg.samples.emplace_back(per.row(i), per.row(i) + kappa);
        gg.target.assign(tgt.data().begin(), tgt.data().end());
      }
      sel = select_group(cfg.spec.rule, scores, n, cfg.spec.rule.needs_gradients() ? &gg : nullptr);
    }
    GroupReport& gr = r.groups[l];
    gr.group = l;
    gr.selected = sel.samples;
    gr.divisor = sel.divisor;
    gr.fallback = sel.fallback;
    gr.skipped = sel.skipped;
    gr.objective = sel.objective;
    if (!sel.skipped) {
      std::vector<double> ut(kappa, 0.0);
      bool first = true;
      for (std::size_t i : sel.samples) {
        const double* row = per.row(i);
        for (std::size_t k = 0; k < kappa; ++k) ut[k] = first ? row[k] : ut[k] + row[k];
        first = false;
      }
      const double inv = 1.0 / sel.divisor;
      for (double& v : ut) v = v * inv;
      auto& ul = r.update.layers[l];
      if (cfg.optimizer == OptimizerKind::sgd) {
        const Tensor back = project_back(proj, ut, ctx.flops());
        std::copy(back.data().begin(), back.data().end(), ul.begin());
      } else if (cfg.lr != 0.0) {
        const auto delta = adamw_compressed_step(state.moments(l), ut, cfg.lr);
        const Tensor back = project_back(proj, delta, ctx.flops());
        const double wd = state.moments(l).config.weight_decay;
        const Tensor& w = model.params(l).w;
        // Expressed as a direction so that theta - lr * u applies both the
        // adaptive step and decoupled weight decay in parameter space.
        for (std::size_t q = 0; q < ul.size(); ++q) ul[q] = -back.data()[q] / cfg.lr + wd * w.data()[q];
      }
    }
    ctx.release(per);
    ctx.release(tgt);
  }
  for (GroupReport& g : r.groups) {
    double s = 0.0;
    for (double v : r.update.layers[g.group]) s += v * v;
    g.update_norm = std::sqrt(s);
  }
  r.scores = table;
  {
    PhaseScope phase(ctx, "optimizer");
    model.apply_update(r.update, cfg.lr, cfg.precision);
    for (Tensor& t : moment_tensors) ctx.release(t);
    ctx.release(u_tensor);
  }
  r.ledger = ctx.ledger();
  r.meter = ctx.meter().snapshot();
  r.target_loss_after = evaluate_loss(model, batch.target, T);
  return r;
}

StepReport run_step(Model& model, const Batch& batch, const StepConfig& cfg, MesoState* meso) {
  const ModelSpec& spec = model.spec();
  switch (cfg.spec.mode) {
    case UpdateMode::target_only: return step_target_only(model, batch, cfg.lr, cfg.precision);
    case UpdateMode::full_training: return step_standard(model, batch, cfg.lr, cfg.precision);
    case UpdateMode::subset: break;
  }
  if (cfg.optimizer == OptimizerKind::meso_adamw) {
    if (!meso) throw ConfigError("the compressed optimizer needs persistent state");
    return step_meso_layerwise(model, batch, cfg, *meso);
  }
  if (cfg.schedule == Schedule::grad_accum) return step_grad_accum(model, batch, cfg);
  Schedule sched = cfg.schedule;
  std::string note;
  if (cfg.checkpoint) {
    cfg.checkpoint->validate(spec.num_layers());
    const PlanDecision d = plan_under_checkpointing(cfg.spec.partition, *cfg.checkpoint);
    if (d.schedule == Schedule::two_pass && sched == Schedule::one_pass) {
      sched = Schedule::two_pass;
      note = "switched to two_pass: " + d.rationale;
    }
  }
  StepReport r;
  if (sched == Schedule::two_pass) {
    r = step_twopass(model, batch, cfg);
  } else if (cfg.spec.partition.size() == 1) {
    r = step_global_onepass(model, batch, cfg);
  } else if (cfg.spec.partition.is_layer_wise(spec)) {
    r = step_layerwise(model, batch, cfg);
  } else {
    r = step_groupwise(model, batch, cfg);
  }
  r.schedule = sched;
  r.schedule_note = note;
  return r;
}

}  // namespace datareg
