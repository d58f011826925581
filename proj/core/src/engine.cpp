// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>

#include "datareg/errors.hpp"
#include "datareg/updates.hpp"

namespace datareg {

namespace {

std::string tag(const char* what, std::size_t l) { return std::string(what) + ":" + std::to_string(l); }

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

double target_loss(const Model& model, const Batch& batch) {
  return batch.m() ? evaluate_loss(model, batch.target, batch.tokens) : 0.0;
}

std::size_t total_params(const ModelSpec& spec) { return spec.param_count(); }

void scale_span(std::vector<double>& v, const Span& s, double divisor, CostMeter* meter) {
  const double inv = 1.0 / divisor;
  for (std::size_t q = s.begin; q < s.end; ++q) v[q] = v[q] * inv;
  if (meter) meter->add_flops(s.size());
}

// Applies the update and closes the ledger.
void finish(StepReport& r, Model& model, const Batch& batch, double lr, ExecContext& ctx, Tensor& u_tensor) {
  {
    PhaseScope phase(ctx, "optimizer");
    model.apply_update(r.update, lr, ctx.precision());
    ctx.release(u_tensor);
  }
  r.ledger = ctx.ledger();
  r.meter = ctx.meter().snapshot();
  r.target_loss_after = target_loss(model, batch);
}

void fill_group_norms(StepReport& r, const Partition& part) {
  for (GroupReport& g : r.groups) {
    double s = 0.0;
    for (const Span& sp : part.group(g.group))
      for (std::size_t q = sp.begin; q < sp.end; ++q) s += r.update.layers[sp.layer][q] * r.update.layers[sp.layer][q];
    g.update_norm = std::sqrt(s);
  }
}

StepReport full_batch_step(Model& model, const Batch& batch, const SampleSet& samples, double lr,
                           Precision precision, const char* kind) {
  const ModelSpec& spec = model.spec();
  if (samples.count == 0) throw SelectionError(std::string(kind) + " step needs at least one sample");
  StepReport r;
  r.kind = kind;
  r.target_loss_before = target_loss(model, batch);
  Batch b{batch.tokens, samples, {}};
  ExecContext ctx(precision);
  ForwardResult fwd = forward(model, b, ctx);
  r.train_loss = fwd.loss;
  r.update = Update::zeros(spec);
  Tensor u_tensor(total_params(spec), 1);
  {
    PhaseScope phase(ctx, "optimizer");
    ctx.track(u_tensor, "u");
  }
  Backward bw(model, b, fwd, ctx);
  const auto cols = iota_n(samples.count * batch.tokens);
  for (std::size_t l = spec.num_layers(); l-- > 0;) {
    bw.step(l);
    PhaseScope phase(ctx, tag("assembly", l));
    LayerCache& cache = fwd.caches[l];
    {
      LayerFactors f(model, l, cache.train, &ctx, tag("assembly", l));
      const Span all{l, 0, spec.trainable_size(l)};
      accumulate_layer_grad(r.update.layers[l], f, cols, all.begin, all.end, ctx.flops());
      scale_span(r.update.layers[l], all, double(samples.count), ctx.flops());
    }
    release_segment(cache.train, ctx);
    cache.phase = CachePhase::released;
  }
  GroupReport g;
  g.selected = iota_n(samples.count);
  g.divisor = double(samples.count);
  r.groups.push_back(g);
  fill_group_norms(r, Partition::global(spec));
  finish(r, model, batch, lr, ctx, u_tensor);
  return r;
}

// Shared machinery of the subset schedules.
class SubsetEngine {
 public:
  SubsetEngine(Model& model, const Batch& batch, const StepConfig& cfg, const char* kind)
      : model_(model), spec_(model.spec()), batch_(batch), cfg_(cfg), part_(cfg.spec.partition),
        ctx_(cfg.precision) {
    batch.validate(spec_);
    if (cfg.spec.mode == UpdateMode::target_only) throw ConfigError("target-only updates do not select subsets");
    if (batch.n() == 0) throw SelectionError("subset update needs at least one training sample");
    if (batch.m() == 0) throw SelectionError("subset update needs at least one target sample");
    part_.validate(spec_);
    if (cfg.spec.mode == UpdateMode::subset) cfg.spec.rule.validate(batch.n());
    n_ = batch.n();
    report_.kind = kind;
    report_.schedule = cfg.schedule;
    report_.update = Update::zeros(spec_);
    report_.target_loss_before = target_loss(model, batch);
    table_.partition = part_;
    table_.method = cfg.method;
    table_.scores.assign(part_.size(), {});
    selections_.resize(part_.size());
    resolved_.assign(part_.size(), false);
    if (cfg.spec.mode == UpdateMode::subset && cfg.spec.rule.needs_gradients()) grads_.resize(part_.size());
    if (cfg.method == ScoreMethod::compressed) {
      for (std::size_t l = 0; l < spec_.num_layers(); ++l) {
        const LayerSpec& ls = spec_.layers[l];
        projectors_.push_back(Projector::gaussian(ls.w_out, ls.w_in, cfg.score_dims, cfg.projector_seed, l,
                                                  cfg.step_index));
      }
    }
  }

  ExecContext& ctx() { return ctx_; }
  StepReport& report() { return report_; }
  const Partition& partition() const { return part_; }

  void alloc_u() {
    u_tensor_ = Tensor(total_params(spec_), 1);
    PhaseScope phase(ctx_, "optimizer");
    ctx_.track(u_tensor_, "u");
  }

  // Adds layer l's contribution to every group touching it.
  void score_layer_groups(std::size_t l, const Segment& train, const Segment& target) {
    PhaseScope phase(ctx_, tag("scoring", l));
    std::vector<double> whole;
    for (std::size_t p : part_.groups_on(l)) {
      for (const Span& s : part_.group(p)) {
        if (s.layer != l) continue;
        std::vector<double> sc;
        if (s.begin == 0 && s.end == spec_.trainable_size(l)) {
          if (whole.empty()) {
            const Projector* proj = projectors_.empty() ? nullptr : &projectors_[l];
            whole = score_layer(cfg_.method, model_, l, train, target, ctx_, proj);
          }
          sc = whole;
        } else {
          sc = score_span(model_, s, train, target, ctx_);
        }
        add_group_scores(p, sc);
        if (!grads_.empty()) {
          GroupGrads g = span_grads(model_, s, train, target);
          append_grads(grads_[p], g);
        }
      }
    }
  }

  void resolve(std::size_t p) {
    if (cfg_.spec.mode == UpdateMode::full_training) {
      selections_[p].samples = iota_n(n_);
      selections_[p].divisor = double(n_);
    } else {
      const GroupGrads* g = grads_.empty() ? nullptr : &grads_[p];
      selections_[p] = select_group(cfg_.spec.rule, table_.scores[p], n_, g);
    }
    resolved_[p] = true;
  }

  bool resolved(std::size_t p) const { return resolved_[p]; }
  const GroupSelection& selection(std::size_t p) const { return selections_[p]; }

  // Assembles the spans of group p on layer l from a training segment whose
  // column positions are given by `pos` (identity when empty).
  void assemble(std::size_t p, std::size_t l, const LayerFactors& f, const std::vector<std::size_t>& pos) {
    const GroupSelection& sel = selections_[p];
    if (sel.skipped) return;
    std::vector<std::size_t> samples = sel.samples;
    if (!pos.empty())
      for (std::size_t& i : samples) i = pos[i];
    const auto cols = sample_columns(samples, batch_.tokens);
    for (const Span& s : part_.group(p)) {
      if (s.layer != l) continue;
      accumulate_layer_grad(report_.update.layers[l], f, cols, s.begin, s.end, ctx_.flops());
      scale_span(report_.update.layers[l], s, sel.divisor, ctx_.flops());
    }
  }

  StepReport finalize() {
    for (std::size_t p = 0; p < part_.size(); ++p) {
      GroupReport g;
      g.group = p;
      g.selected = selections_[p].samples;
      g.divisor = selections_[p].divisor;
      g.fallback = selections_[p].fallback;
      g.skipped = selections_[p].skipped;
      g.objective = selections_[p].objective;
      report_.groups.push_back(std::move(g));
    }
    fill_group_norms(report_, part_);
    report_.scores = table_;
    finish(report_, model_, batch_, cfg_.lr, ctx_, u_tensor_);
    return std::move(report_);
  }

  // For schedules that fill groups and scores themselves.
  StepReport finalize_external() {
    finish(report_, model_, batch_, cfg_.lr, ctx_, u_tensor_);
    return std::move(report_);
  }

  std::size_t n() const { return n_; }

 private:
  void add_group_scores(std::size_t p, const std::vector<double>& sc) {
    auto& dst = table_.scores[p];
    if (dst.empty()) {
      dst = sc;
      return;
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = dst[i] + sc[i];
    ctx_.meter().add_flops(dst.size());
  }

  static void append_grads(GroupGrads& dst, const GroupGrads& src) {
    if (dst.samples.empty()) dst.samples.resize(src.samples.size());
    for (std::size_t i = 0; i < src.samples.size(); ++i)
      dst.samples[i].insert(dst.samples[i].end(), src.samples[i].begin(), src.samples[i].end());
    dst.target.insert(dst.target.end(), src.target.begin(), src.target.end());
  }

  Model& model_;
  const ModelSpec& spec_;
  const Batch& batch_;
  const StepConfig& cfg_;
  Partition part_;
  ExecContext ctx_;
  StepReport report_;
  ScoreTable table_;
  std::vector<GroupSelection> selections_;
  std::vector<bool> resolved_;
  std::vector<GroupGrads> grads_;
  std::vector<Projector> projectors_;
  Tensor u_tensor_;
  std::size_t n_ = 0;
};

void skip_swap_fault(LayerCache& cache, ExecContext& ctx) {
  // Standard training drops the pair once backward has passed the layer.
  release_segment(cache.train, ctx);
  release_segment(cache.target, ctx);
}

StepReport interleaved(Model& model, const Batch& batch, const StepConfig& cfg, const char* kind) {
  SubsetEngine eng(model, batch, cfg, kind);
  ExecContext& ctx = eng.ctx();
  const ModelSpec& spec = model.spec();
  const Partition& part = eng.partition();
  const std::size_t L = spec.num_layers();
  ForwardResult fwd = forward(model, batch, ctx);
  eng.report().train_loss = std::accumulate(fwd.train_losses.begin(), fwd.train_losses.end(), 0.0);
  eng.alloc_u();
  std::vector<std::size_t> lowest(part.size());
  for (std::size_t p = 0; p < part.size(); ++p) lowest[p] = part.layers_of(p).front();
  Backward bw(model, batch, fwd, ctx);
  for (std::size_t l = L; l-- > 0;) {
    bw.step(l);
    LayerCache& cache = fwd.caches[l];
    if (cfg.fault == Fault::skip_swap) skip_swap_fault(cache, ctx);
    eng.score_layer_groups(l, cache.train, cache.target);
    {
      PhaseScope phase(ctx, tag("scoring", l));
      release_segment(cache.target, ctx);
    }
    std::vector<std::size_t> now;
    for (std::size_t p = 0; p < part.size(); ++p)
      if (lowest[p] == l) now.push_back(p);
    if (now.empty()) continue;
    for (std::size_t p : now) eng.resolve(p);
    for (std::size_t lp = l; lp < L; ++lp) {
      bool touched = false;
      for (std::size_t p : now)
        for (std::size_t x : part.layers_of(p)) touched = touched || x == lp;
      if (!touched) continue;
      PhaseScope phase(ctx, tag("assembly", lp));
      LayerFactors f(model, lp, fwd.caches[lp].train, &ctx, tag("assembly", lp));
      for (std::size_t p : now) eng.assemble(p, lp, f, {});
    }
    for (std::size_t lp = l; lp < L; ++lp) {
      LayerCache& c = fwd.caches[lp];
      if (!c.train.live) continue;
      bool done = true;
      for (std::size_t p : part.groups_on(lp)) done = done && eng.resolved(p);
      if (!done) continue;
      PhaseScope phase(ctx, tag("assembly", lp));
      release_segment(c.train, ctx);
      c.phase = CachePhase::released;
    }
  }
  return eng.finalize();
}

}  // namespace

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "meso_adamw"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "meso_adamw") return OptimizerKind::meso_adamw;
  throw ConfigError("unknown optimizer '" + s + "'");
}

StepReport step_standard(Model& model, const Batch& batch, double lr, Precision precision) {
  batch.validate(model.spec());
  return full_batch_step(model, batch, batch.train, lr, precision, "standard");
}

StepReport step_target_only(Model& model, const Batch& batch, double lr, Precision precision) {
  batch.validate(model.spec());
  return full_batch_step(model, batch, batch.target, lr, precision, "target_only");
}

StepReport step_global_onepass(Model& model, const Batch& batch, const StepConfig& cfg) {
  if (cfg.spec.partition.size() != 1) throw ConfigError("the global one-pass schedule needs a single group");
  SubsetEngine eng(model, batch, cfg, "global_onepass");
  ExecContext& ctx = eng.ctx();
  const std::size_t L = model.num_layers();
  ForwardResult fwd = forward(model, batch, ctx);
  eng.report().train_loss = std::accumulate(fwd.train_losses.begin(), fwd.train_losses.end(), 0.0);
  {
    Backward bw(model, batch, fwd, ctx);
    for (std::size_t l = L; l-- > 0;) {
      bw.step(l);
      if (cfg.fault == Fault::skip_swap) skip_swap_fault(fwd.caches[l], ctx);
    }
  }
  for (std::size_t l = L; l-- > 0;) {
    LayerCache& cache = fwd.caches[l];
    eng.score_layer_groups(l, cache.train, cache.target);
    PhaseScope phase(ctx, tag("scoring", l));
    release_segment(cache.target, ctx);
  }
  eng.resolve(0);
  eng.alloc_u();
  for (std::size_t l = L; l-- > 0;) {
    LayerCache& cache = fwd.caches[l];
    PhaseScope phase(ctx, tag("assembly", l));
    {
      LayerFactors f(model, l, cache.train, &ctx, tag("assembly", l));
      eng.assemble(0, l, f, {});
    }
    release_segment(cache.train, ctx);
    cache.phase = CachePhase::released;
  }
  return eng.finalize();
}

StepReport step_layerwise(Model& model, const Batch& batch, const StepConfig& cfg) {
  if (!cfg.spec.partition.is_layer_wise(model.spec())) throw ConfigError("layer-wise schedule needs a layer-wise partition");
  return interleaved(model, batch, cfg, "layerwise");
}

StepReport step_groupwise(Model& model, const Batch& batch, const StepConfig& cfg) {
  return interleaved(model, batch, cfg, "groupwise");
}

StepReport step_twopass(Model& model, const Batch& batch, const StepConfig& cfg) {
  SubsetEngine eng(model, batch, cfg, "twopass");
  eng.report().schedule = Schedule::two_pass;
  ExecContext& ctx = eng.ctx();
  const ModelSpec& spec = model.spec();
  const Partition& part = eng.partition();
  const std::size_t L = spec.num_layers();
  ForwardResult fwd = forward(model, batch, ctx);
  eng.report().train_loss = std::accumulate(fwd.train_losses.begin(), fwd.train_losses.end(), 0.0);
  eng.alloc_u();
  {
    Backward bw(model, batch, fwd, ctx);
    for (std::size_t l = L; l-- > 0;) {
      bw.step(l);
      LayerCache& cache = fwd.caches[l];
      eng.score_layer_groups(l, cache.train, cache.target);
      PhaseScope phase(ctx, tag("scoring", l));
      release_segment(cache.target, ctx);
      release_segment(cache.train, ctx);
      cache.phase = CachePhase::released;
    }
  }
  std::vector<std::size_t> uni;
  for (std::size_t p = 0; p < part.size(); ++p) {
    eng.resolve(p);
    const GroupSelection& s = eng.selection(p);
    if (!s.skipped) uni.insert(uni.end(), s.samples.begin(), s.samples.end());
  }
  std::sort(uni.begin(), uni.end());
  uni.erase(std::unique(uni.begin(), uni.end()), uni.end());
  if (!uni.empty()) {
    ctx.set_phase_prefix("pass2/");
    std::vector<std::size_t> pos(eng.n(), 0);
    for (std::size_t j = 0; j < uni.size(); ++j) pos[uni[j]] = j;
    Batch second{batch.tokens, batch.train.subset(uni, batch.tokens), {}};
    ForwardResult fwd2 = forward(model, second, ctx);
    Backward bw(model, second, fwd2, ctx);
    for (std::size_t l = L; l-- > 0;) {
      bw.step(l);
      LayerCache& cache = fwd2.caches[l];
      PhaseScope phase(ctx, tag("assembly", l));
      {
        LayerFactors f(model, l, cache.train, &ctx, tag("assembly", l));
        for (std::size_t p : part.groups_on(l)) eng.assemble(p, l, f, pos);
      }
      release_segment(cache.train, ctx);
      cache.phase = CachePhase::released;
    }
    ctx.set_phase_prefix("");
  }
  return eng.finalize();
}

StepReport step_grad_accum(Model& model, const Batch& batch, const StepConfig& cfg) {
  if (cfg.spec.mode == UpdateMode::subset && cfg.spec.rule.kind != RuleKind::threshold) {
    throw ConfigError("gradient accumulation supports only the threshold rule; " + to_string(cfg.spec.rule.kind) +
                      " depends on the whole batch, use schedule two_pass");
  }
  SubsetEngine eng(model, batch, cfg, "grad_accum");
  eng.report().schedule = Schedule::grad_accum;
  ExecContext& ctx = eng.ctx();
  const ModelSpec& spec = model.spec();
  const Partition& part = eng.partition();
  const std::size_t L = spec.num_layers(), n = eng.n(), T = batch.tokens;
  const std::size_t micro = cfg.micro_batch ? cfg.micro_batch : n;
  const bool fallback = cfg.spec.rule.empty_policy == EmptyPolicy::full_batch;

  // Target side first; its swapped pairs stay live for every micro-batch.
  Batch tb{T, {}, batch.target};
  ctx.set_phase_prefix("target/");
  ForwardResult tf = forward(model, tb, ctx);
  {
    Backward bw(model, tb, tf, ctx);
    for (std::size_t l = L; l-- > 0;) bw.step(l);
  }
  ctx.set_phase_prefix("");
  eng.alloc_u();
  Update full = Update::zeros(spec);
  Tensor full_tensor;
  if (fallback) {
    full_tensor = Tensor(total_params(spec), 1);
    PhaseScope phase(ctx, "optimizer");
    ctx.track(full_tensor, "u_full");
  }
  std::vector<std::vector<std::size_t>> chosen(part.size());
  std::vector<std::vector<double>> table(part.size(), std::vector<double>(n, 0.0));
  double train_loss = 0.0;
  std::size_t mb_index = 0;
  for (std::size_t start = 0; start < n; start += micro, ++mb_index) {
    const std::size_t stop = std::min(n, start + micro);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    ctx.set_phase_prefix("micro" + std::to_string(mb_index) + "/");
    Batch mb{T, batch.train.subset(idx, T), {}};
    ForwardResult mf = forward(model, mb, ctx);
    train_loss += mf.loss;
    std::vector<std::vector<double>> sc(part.size());
    {
      Backward bw(model, mb, mf, ctx);
      for (std::size_t l = L; l-- > 0;) {
        bw.step(l);
        PhaseScope phase(ctx, tag("scoring", l));
        std::vector<double> whole;
        for (std::size_t p : part.groups_on(l)) {
          for (const Span& s : part.group(p)) {
            if (s.layer != l) continue;
            std::vector<double> v;
            if (s.begin == 0 && s.end == spec.trainable_size(l)) {
              if (whole.empty()) {
                std::optional<Projector> proj;
                if (cfg.method == ScoreMethod::compressed) {
                  proj = Projector::gaussian(spec.layers[l].w_out, spec.layers[l].w_in, cfg.score_dims,
                                             cfg.projector_seed, l, cfg.step_index);
                }
                whole = score_layer(cfg.method, model, l, mf.caches[l].train, tf.caches[l].target, ctx,
                                    proj ? &*proj : nullptr);
              }
              v = whole;
            } else {
              v = score_span(model, s, mf.caches[l].train, tf.caches[l].target, ctx);
            }
            if (sc[p].empty()) {
              sc[p] = v;
            } else {
              for (std::size_t i = 0; i < v.size(); ++i) sc[p][i] = sc[p][i] + v[i];
              ctx.meter().add_flops(v.size());
            }
          }
        }
      }
    }
    for (std::size_t p = 0; p < part.size(); ++p) {
      std::copy(sc[p].begin(), sc[p].end(), table[p].begin() + start);
      const auto local = cfg.spec.mode == UpdateMode::full_training ? iota_n(idx.size())
                                                                    : select_threshold(sc[p], cfg.spec.rule.threshold);
      for (std::size_t i : local) chosen[p].push_back(start + i);
      const auto cols = sample_columns(local, T);
      const auto all_cols = iota_n(idx.size() * T);
      for (std::size_t l = L; l-- > 0;) {
        bool on = false;
        for (const Span& s : part.group(p)) on = on || s.layer == l;
        if (!on) continue;
        PhaseScope phase(ctx, tag("assembly", l));
        LayerFactors f(model, l, mf.caches[l].train, &ctx, tag("assembly", l));
        for (const Span& s : part.group(p)) {
          if (s.layer != l) continue;
          accumulate_layer_grad(eng.report().update.layers[l], f, cols, s.begin, s.end, ctx.flops());
          if (fallback) accumulate_layer_grad(full.layers[l], f, all_cols, s.begin, s.end, ctx.flops());
        }
      }
    }
    for (std::size_t l = L; l-- > 0;) {
      PhaseScope phase(ctx, tag("assembly", l));
      release_segment(mf.caches[l].train, ctx);
    }
  }
  ctx.set_phase_prefix("");
  for (std::size_t l = L; l-- > 0;) {
    PhaseScope phase(ctx, tag("scoring", l));
    release_segment(tf.caches[l].target, ctx);
  }
  // Final scaling per group, with the empty-selection policy.
  std::vector<GroupSelection> sels(part.size());
  Update& u = eng.report().update;
  for (std::size_t p = 0; p < part.size(); ++p) {
    GroupSelection& s = sels[p];
    s.samples = chosen[p];
    if (s.samples.empty()) {
      if (fallback) {
        s.fallback = true;
        s.samples = iota_n(n);
        for (const Span& sp : part.group(p))
          std::copy(full.layers[sp.layer].begin() + sp.begin, full.layers[sp.layer].begin() + sp.end,
                    u.layers[sp.layer].begin() + sp.begin);
      } else {
        s.skipped = true;
        continue;
      }
    }
    s.divisor = double(s.samples.size());
    for (const Span& sp : part.group(p)) scale_span(u.layers[sp.layer], sp, s.divisor, ctx.flops());
  }
  if (fallback) {
    PhaseScope phase(ctx, "optimizer");
    ctx.release(full_tensor);
  }
  StepReport& r = eng.report();
  r.train_loss = train_loss;
  for (std::size_t p = 0; p < part.size(); ++p) {
    GroupReport g;
    g.group = p;
    g.selected = sels[p].samples;
    g.divisor = sels[p].divisor;
    g.fallback = sels[p].fallback;
    g.skipped = sels[p].skipped;
    r.groups.push_back(std::move(g));
  }
  fill_group_norms(r, part);
  ScoreTable st;
  st.partition = part;
  st.method = cfg.method;
  st.scores = table;
  r.scores = st;
  return eng.finalize_external();
}

}  // namespace datareg
