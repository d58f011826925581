// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include "datareg/net.hpp"

#include <algorithm>
#include <cmath>

#include "datareg/errors.hpp"

namespace datareg {

namespace {

std::string layer_tag(const char* what, std::size_t l) { return std::string(what) + ":" + std::to_string(l); }

double activate(Activation act, double x) {
  switch (act) {
    case Activation::identity: return x;
    case Activation::tanh: return std::tanh(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
  }
  return x;
}

// Derivative expressed through the pre-activation.
double activate_grad(Activation act, double e) {
  switch (act) {
    case Activation::identity: return 1.0;
    case Activation::tanh: {
      const double t = std::tanh(e);
      return 1.0 - t * t;
    }
    case Activation::relu: return e > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

std::size_t token_id(const Tensor& ids, std::size_t col) { return static_cast<std::size_t>(ids(0, col)); }

Tensor embed(const Tensor& table, const Tensor& ids) {
  const std::size_t d = table.cols();
  Tensor e(d, ids.cols());
  for (std::size_t c = 0; c < ids.cols(); ++c) {
    const std::size_t x = token_id(ids, c);
    if (x >= table.rows()) throw DimensionError("token id " + std::to_string(x) + " outside vocabulary");
    for (std::size_t r = 0; r < d; ++r) e(r, c) = table(x, r);
  }
  return e;
}

// Pre-activation of layer l for the given input columns.
Tensor layer_forward(const Model& model, std::size_t l, const Tensor& a, Tensor* lora_mid,
                     CostMeter* meter) {
  const LayerSpec& ls = model.spec().layers[l];
  const LayerParams& p = model.params(l);
  switch (ls.kind) {
    case LayerKind::dense: return matmul(p.w, a, meter);
    case LayerKind::embedding: return embed(p.w, a);
    case LayerKind::lora: {
      Tensor mid = matmul(p.a, a, meter);
      Tensor e = matmul(p.w, a, meter);
      add_inplace(e, matmul(p.b, mid, meter), meter);
      if (lora_mid) *lora_mid = std::move(mid);
      return e;
    }
  }
  throw ConfigError("unknown layer kind");
}

std::vector<double> per_sample_loss(const ModelSpec& spec, const Tensor& out, const Tensor& targets,
                                    std::size_t count) {
  const std::size_t t = spec.tokens;
  std::vector<double> losses(count, 0.0);
  for (std::size_t i = 0; i < count; ++i) {
    double li = 0.0;
    for (std::size_t tau = 0; tau < t; ++tau) {
      const std::size_t c = i * t + tau;
      if (spec.loss == LossKind::squared) {
        for (std::size_t r = 0; r < out.rows(); ++r) {
          const double d = out(r, c) - targets(r, c);
          li += 0.5 * d * d;
        }
      } else {
        double mx = out(0, c);
        for (std::size_t r = 1; r < out.rows(); ++r) mx = std::max(mx, out(r, c));
        double z = 0.0;
        for (std::size_t r = 0; r < out.rows(); ++r) z += std::exp(out(r, c) - mx);
        li += mx + std::log(z) - out(token_id(targets, c), c);
      }
    }
    losses[i] = li;
  }
  return losses;
}

void forward_segment(const Model& model, const SampleSet& samples, std::vector<LayerCache>& caches,
                     bool is_target, ExecContext& ctx, std::vector<double>& losses) {
  if (samples.count == 0) return;
  const ModelSpec& spec = model.spec();
  const Precision prec = ctx.precision();
  const char* side = is_target ? "target" : "train";
  Tensor a = samples.inputs;
  round_to(a, prec);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    Segment& seg = is_target ? caches[l].target : caches[l].train;
    seg.count = samples.count;
    seg.a = std::move(a);
    ctx.track(seg.a, layer_tag(side, l) + "/a");
    Tensor mid;
    seg.e = layer_forward(model, l, seg.a, &mid, ctx.flops());
    round_to(seg.e, prec);
    if (mid.size() > 0) {
      round_to(mid, prec);
      seg.lora_mid = std::move(mid);
      ctx.track(seg.lora_mid, layer_tag(side, l) + "/lora_mid");
    }
    ctx.track(seg.e, layer_tag(side, l) + "/e");
    seg.live = true;
    if (l + 1 < spec.num_layers()) {
      a = Tensor(seg.e.rows(), seg.e.cols());
      auto src = seg.e.data();
      auto dst = a.data();
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] = activate(spec.activation, src[k]);
      round_to(a, prec);
    }
  }
  const Segment& top = is_target ? caches.back().target : caches.back().train;
  losses = per_sample_loss(spec, top.e, samples.targets, samples.count);
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
  }
  return "?";
}

std::string to_string(LossKind l) { return l == LossKind::squared ? "squared" : "softmax_xent"; }

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::lora: return "lora";
    case LayerKind::embedding: return "embedding";
  }
  return "?";
}

Activation parse_activation(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + s + "'");
}

LossKind parse_loss(const std::string& s) {
  if (s == "squared") return LossKind::squared;
  if (s == "softmax_xent") return LossKind::softmax_xent;
  throw ConfigError("unknown loss '" + s + "'");
}

LayerKind parse_layer_kind(const std::string& s) {
  if (s == "dense") return LayerKind::dense;
  if (s == "lora") return LayerKind::lora;
  if (s == "embedding") return LayerKind::embedding;
  throw ConfigError("unknown layer kind '" + s + "'");
}

void ModelSpec::validate() const {
  if (layers.empty()) throw ConfigError("model needs at least one layer");
  if (tokens == 0) throw ConfigError("tokens per sample must be positive");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerSpec& ls = layers[l];
    const std::string where = "layer " + std::to_string(l) + ": ";
    if (ls.w_in == 0 || ls.w_out == 0) throw ConfigError(where + "widths must be positive");
    if (ls.kind == LayerKind::embedding && l != 0) throw ConfigError(where + "embedding must be the first layer");
    if (ls.kind == LayerKind::lora && (ls.rank < 1 || ls.rank >= std::min(ls.w_in, ls.w_out))) {
      throw ConfigError(where + "LoRA rank must satisfy 1 <= r < min(w_in, w_out)");
    }
    if (l > 0 && layers[l - 1].w_out != ls.w_in) {
      throw ConfigError(where + "w_in " + std::to_string(ls.w_in) + " does not match previous w_out " +
                        std::to_string(layers[l - 1].w_out));
    }
  }
  if (loss == LossKind::softmax_xent && output_width() < 2) {
    throw ConfigError("softmax cross-entropy needs at least two classes");
  }
}

bool ModelSpec::token_input() const noexcept {
  return !layers.empty() && layers.front().kind == LayerKind::embedding;
}

std::size_t ModelSpec::input_width() const { return token_input() ? 1 : layers.at(0).w_in; }
std::size_t ModelSpec::output_width() const { return layers.at(layers.size() - 1).w_out; }

std::size_t ModelSpec::trainable_size(std::size_t l) const {
  const LayerSpec& ls = layers.at(l);
  if (ls.kind == LayerKind::lora) return ls.rank * ls.w_in + ls.w_out * ls.rank;
  return ls.w_in * ls.w_out;
}

std::size_t ModelSpec::param_count() const {
  std::size_t d = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) d += trainable_size(l);
  return d;
}

Update Update::zeros(const ModelSpec& spec) {
  Update u;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) u.layers.emplace_back(spec.trainable_size(l), 0.0);
  return u;
}

double Update::squared_norm() const {
  double s = 0.0;
  for (const auto& v : layers)
    for (double x : v) s += x * x;
  return s;
}

Model::Model(ModelSpec spec, Rng& rng, ModelInit init) : spec_(std::move(spec)) {
  spec_.validate();
  for (const LayerSpec& ls : spec_.layers) {
    LayerParams p;
    switch (ls.kind) {
      case LayerKind::dense:
        p.w = Tensor::randn(ls.w_out, ls.w_in, rng, init.scale / std::sqrt(double(ls.w_in)));
        break;
      case LayerKind::embedding:
        p.w = Tensor::randn(ls.w_in, ls.w_out, rng, init.scale);
        break;
      case LayerKind::lora:
        p.w = Tensor::randn(ls.w_out, ls.w_in, rng, init.scale / std::sqrt(double(ls.w_in)));
        p.a = Tensor::randn(ls.rank, ls.w_in, rng, 1.0 / std::sqrt(double(ls.w_in)));
        p.b = Tensor::randn(ls.w_out, ls.rank, rng, init.lora_b_scale / std::sqrt(double(ls.rank)));
        break;
    }
    params_.push_back(std::move(p));
  }
}

Model::Model(ModelSpec spec, std::vector<LayerParams> params) : spec_(std::move(spec)), params_(std::move(params)) {
  spec_.validate();
  if (params_.size() != spec_.num_layers()) throw DimensionError("parameter list does not match layer count");
  for (std::size_t l = 0; l < params_.size(); ++l) {
    const LayerSpec& ls = spec_.layers[l];
    const LayerParams& p = params_[l];
    const bool table = ls.kind == LayerKind::embedding;
    const std::size_t wr = table ? ls.w_in : ls.w_out, wc = table ? ls.w_out : ls.w_in;
    if (p.w.rows() != wr || p.w.cols() != wc) throw DimensionError("layer " + std::to_string(l) + ": W shape");
    if (ls.kind == LayerKind::lora &&
        (p.a.rows() != ls.rank || p.a.cols() != ls.w_in || p.b.rows() != ls.w_out || p.b.cols() != ls.rank)) {
      throw DimensionError("layer " + std::to_string(l) + ": LoRA factor shapes");
    }
  }
}

std::vector<Tensor*> Model::blocks(std::size_t l) {
  LayerParams& p = params_.at(l);
  if (spec_.layers[l].kind == LayerKind::lora) return {&p.a, &p.b};
  return {&p.w};
}

std::vector<const Tensor*> Model::blocks(std::size_t l) const {
  const LayerParams& p = params_.at(l);
  if (spec_.layers[l].kind == LayerKind::lora) return {&p.a, &p.b};
  return {&p.w};
}

double& Model::coord(std::size_t l, std::size_t q) {
  for (Tensor* t : blocks(l)) {
    if (q < t->size()) return t->data()[q];
    q -= t->size();
  }
  throw DimensionError("coordinate outside layer " + std::to_string(l));
}

double Model::get(std::size_t l, std::size_t q) const { return const_cast<Model*>(this)->coord(l, q); }
void Model::set(std::size_t l, std::size_t q, double v) { coord(l, q) = v; }

std::vector<double> Model::flat(std::size_t l) const {
  std::vector<double> out;
  for (const Tensor* t : blocks(l)) out.insert(out.end(), t->data().begin(), t->data().end());
  return out;
}

void Model::apply_update(const Update& u, double lr, Precision precision) {
  if (u.layers.size() != num_layers()) throw DimensionError("update layer count mismatch");
  for (std::size_t l = 0; l < num_layers(); ++l) {
    if (u.layers[l].size() != spec_.trainable_size(l)) throw DimensionError("update size mismatch at layer " + std::to_string(l));
    std::size_t q = 0;
    for (Tensor* t : blocks(l)) {
      for (double& x : t->data()) {
        x = x - lr * u.layers[l][q++];
      }
      round_to(*t, precision);
    }
  }
}

bool bit_equal(const Model& a, const Model& b) {
  if (a.num_layers() != b.num_layers()) return false;
  for (std::size_t l = 0; l < a.num_layers(); ++l) {
    const LayerParams& p = a.params(l);
    const LayerParams& q = b.params(l);
    if (!bit_equal(p.w, q.w) || !bit_equal(p.a, q.a) || !bit_equal(p.b, q.b)) return false;
  }
  return true;
}

SampleSet SampleSet::subset(std::span<const std::size_t> samples, std::size_t tokens) const {
  for (std::size_t i : samples) {
    if (i >= count) throw DimensionError("sample index " + std::to_string(i) + " out of range");
  }
  const auto cols = sample_columns(samples, tokens);
  SampleSet s;
  s.count = samples.size();
  s.inputs = gather_columns(inputs, cols);
  s.targets = gather_columns(targets, cols);
  return s;
}

SampleSet SampleSet::concat(const SampleSet& a, const SampleSet& b) {
  SampleSet s;
  s.count = a.count + b.count;
  s.inputs = hcat(a.inputs, b.inputs);
  s.targets = hcat(a.targets, b.targets);
  return s;
}

void Batch::validate(const ModelSpec& spec) const {
  if (tokens != spec.tokens) throw DimensionError("batch token count differs from the model's");
  if (n() + m() == 0) throw DimensionError("batch is empty");
  const std::size_t out_rows = spec.loss == LossKind::squared ? spec.output_width() : 1;
  for (const SampleSet* s : {&train, &target}) {
    if (s->count == 0) continue;
    if (s->inputs.rows() != spec.input_width() || s->inputs.cols() != s->count * tokens) {
      throw DimensionError("batch inputs are " + std::to_string(s->inputs.rows()) + "x" +
                           std::to_string(s->inputs.cols()) + ", expected " +
                           std::to_string(spec.input_width()) + "x" + std::to_string(s->count * tokens));
    }
    if (s->targets.rows() != out_rows || s->targets.cols() != s->count * tokens) {
      throw DimensionError("batch targets have the wrong shape");
    }
    if (spec.token_input()) {
      for (double x : s->inputs.data())
        if (x < 0 || static_cast<std::size_t>(x) >= spec.layers[0].w_in) throw DimensionError("token id outside vocabulary");
    }
    if (spec.loss == LossKind::softmax_xent) {
      for (double y : s->targets.data())
        if (y < 0 || static_cast<std::size_t>(y) >= spec.output_width()) throw DimensionError("class label out of range");
    }
  }
}

ForwardResult forward(const Model& model, const Batch& batch, ExecContext& ctx) {
  batch.validate(model.spec());
  PhaseScope phase(ctx, "forward");
  ForwardResult r;
  r.caches.resize(model.num_layers());
  for (std::size_t l = 0; l < model.num_layers(); ++l) r.caches[l].layer = l;
  forward_segment(model, batch.train, r.caches, false, ctx, r.train_losses);
  forward_segment(model, batch.target, r.caches, true, ctx, r.target_losses);
  for (double v : r.train_losses) r.loss += v;
  for (double v : r.target_losses) r.loss += v;
  return r;
}

double evaluate_loss(const Model& model, const SampleSet& samples, std::size_t tokens) {
  if (samples.count == 0) return 0.0;
  const ModelSpec& spec = model.spec();
  if (tokens != spec.tokens) throw DimensionError("token count differs from the model's");
  Tensor a = samples.inputs;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    Tensor e = layer_forward(model, l, a, nullptr, nullptr);
    if (l + 1 == spec.num_layers()) {
      double total = 0.0;
      for (double v : per_sample_loss(spec, e, samples.targets, samples.count)) total += v;
      return total;
    }
    for (double& v : e.data()) v = activate(spec.activation, v);
    a = std::move(e);
  }
  return 0.0;
}

Backward::Backward(const Model& model, const Batch& batch, ForwardResult& fwd, ExecContext& ctx)
    : model_(model), batch_(batch), fwd_(fwd), ctx_(ctx), next_(model.num_layers() - 1) {
  std::size_t rows = 0;
  for (std::size_t l = 1; l < model.num_layers(); ++l) rows = std::max(rows, model.spec().layers[l].w_in);
  if (rows == 0) return;
  PhaseScope phase(ctx_, layer_tag("backward", next_));
  const std::size_t t = batch.tokens;
  if (batch.n() > 0) {
    carry_train_ = Tensor(rows, batch.n() * t);
    ctx_.track(carry_train_, "train/carry");
  }
  if (batch.m() > 0) {
    carry_target_ = Tensor(rows, batch.m() * t);
    ctx_.track(carry_target_, "target/carry");
  }
}

void Backward::step(std::size_t l) {
  if (done() || l != next_) {
    throw PhaseError("backward visited layer " + std::to_string(l) + " but expected " +
                     (done() ? std::string("no further layers") : std::to_string(next_)));
  }
  LayerCache& cache = fwd_.caches[l];
  if (cache.phase != CachePhase::forward) throw PhaseError("layer " + std::to_string(l) + " cache is not in the forward phase");
  PhaseScope phase(ctx_, layer_tag("backward", l));
  if (cache.train.live) step_segment(l, cache.train, carry_train_, batch_.train.targets);
  if (cache.target.live) step_segment(l, cache.target, carry_target_, batch_.target.targets);
  cache.phase = CachePhase::swapped;
  if (l == 0) {
    next_ = kDone;
    if (carry_train_.size() > 0) ctx_.release(carry_train_);
    if (carry_target_.size() > 0) ctx_.release(carry_target_);
  } else {
    next_ = l - 1;
  }
}

void Backward::step_segment(std::size_t l, Segment& seg, Tensor& carry, const Tensor& targets) {
  const ModelSpec& spec = model_.spec();
  const std::string consumer = layer_tag("backward", l);
  ctx_.read(seg.e, consumer);
  Tensor& g = seg.e;
  const std::size_t cols = g.cols();
  if (l + 1 == spec.num_layers()) {
    if (spec.loss == LossKind::squared) {
      auto gd = g.data();
      auto yd = targets.data();
      for (std::size_t k = 0; k < gd.size(); ++k) gd[k] = gd[k] - yd[k];
      ctx_.meter().add_flops(gd.size());
    } else {
      for (std::size_t c = 0; c < cols; ++c) {
        double mx = g(0, c);
        for (std::size_t r = 1; r < g.rows(); ++r) mx = std::max(mx, g(r, c));
        double z = 0.0;
        for (std::size_t r = 0; r < g.rows(); ++r) z += std::exp(g(r, c) - mx);
        for (std::size_t r = 0; r < g.rows(); ++r) g(r, c) = std::exp(g(r, c) - mx) / z;
        g(token_id(targets, c), c) -= 1.0;
      }
    }
  } else {
    ctx_.read(carry, consumer);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double* gr = g.row(r);
      const double* cr = carry.row(r);
      for (std::size_t c = 0; c < cols; ++c) gr[c] = activate_grad(spec.activation, gr[c]) * cr[c];
    }
    ctx_.meter().add_flops(g.size());
  }
  round_to(g, ctx_.precision());
  // Swap: the pre-activation handle dies and the same footprint is re-registered
  // as dloss/de.
  const TensorId old_id = g.id();
  g.renew_id();
  ctx_.release(old_id);
  ctx_.track(g, layer_tag(&seg == &fwd_.caches[l].target ? "target" : "train", l) + "/grad_e");

  if (l == 0) return;
  const LayerSpec& ls = spec.layers[l];
  const LayerParams& p = model_.params(l);
  ctx_.read(carry, consumer);
  Tensor da = matmul_tn(p.w, g, ctx_.flops());
  if (ls.kind == LayerKind::lora) {
    Tensor bg = matmul_tn(p.b, g, ctx_.flops());
    ctx_.track(bg, layer_tag("lora_back", l));
    add_inplace(da, matmul_tn(p.a, bg, ctx_.flops()), ctx_.flops());
    ctx_.release(bg);
  }
  round_to(da, ctx_.precision());
  for (std::size_t r = 0; r < da.rows(); ++r)
    std::copy(da.row(r), da.row(r) + cols, carry.row(r));
}

void release_segment(Segment& seg, ExecContext& ctx) {
  if (!seg.live) return;
  ctx.release(seg.a);
  ctx.release(seg.e);
  if (seg.lora_mid.size() > 0) ctx.release(seg.lora_mid);
  seg.live = false;
}

LayerFactors::LayerFactors(const Model& model, std::size_t layer, const Segment& seg, ExecContext* ctx,
                           const std::string& consumer)
    : ctx_(ctx), tokens_total_(seg.e.cols()) {
  const LayerSpec& ls = model.spec().layers.at(layer);
  if (ctx_) {
    ctx_->read(seg.a, consumer);
    ctx_->read(seg.e, consumer);
    if (seg.lora_mid.size() > 0) ctx_->read(seg.lora_mid, consumer);
  }
  switch (ls.kind) {
    case LayerKind::dense:
      blocks_.push_back({ls.w_out, ls.w_in, 0, &seg.e, &seg.a, false});
      break;
    case LayerKind::embedding:
      blocks_.push_back({ls.w_in, ls.w_out, 0, &seg.a, &seg.e, true});
      break;
    case LayerKind::lora:
      lora_back_ = matmul_tn(model.params(layer).b, seg.e, ctx_ ? ctx_->flops() : nullptr);
      if (ctx_) {
        ctx_->track(lora_back_, layer_tag("lora_back", layer));
        tracked_ = true;
      }
      blocks_.push_back({ls.rank, ls.w_in, 0, &lora_back_, &seg.a, false});
      blocks_.push_back({ls.w_out, ls.rank, ls.rank * ls.w_in, &seg.e, &seg.lora_mid, false});
      break;
  }
}

LayerFactors::~LayerFactors() {
  try {
    release();
  } catch (...) {
  }
}

void LayerFactors::release() {
  if (tracked_) {
    tracked_ = false;
    ctx_->release(lora_back_);
  }
}

void accumulate_layer_grad(std::vector<double>& acc, const LayerFactors& factors,
                           std::span<const std::size_t> columns, std::size_t q_begin, std::size_t q_end,
                           CostMeter* meter) {
  std::uint64_t flops = 0;
  for (const FactorBlock& f : factors.blocks()) {
    const std::size_t lo = std::max(q_begin, f.offset);
    const std::size_t hi = std::min(q_end, f.offset + f.rows * f.cols);
    if (lo >= hi) continue;
    if (hi > acc.size()) throw DimensionError("accumulator shorter than layer coordinates");
    if (f.one_hot) {
      for (std::size_t col : columns) {
        const std::size_t x = token_id(*f.out, col);
        const std::size_t base = f.offset + x * f.cols;
        for (std::size_t c = 0; c < f.cols; ++c) {
          const std::size_t q = base + c;
          if (q < lo || q >= hi) continue;
          acc[q] = acc[q] + (*f.in)(c, col);
          ++flops;
        }
      }
      continue;
    }
    for (std::size_t q = lo; q < hi; ++q) {
      const std::size_t r = (q - f.offset) / f.cols;
      const std::size_t c = (q - f.offset) % f.cols;
      const double* br = f.out->row(r);
      const double* ac = f.in->row(c);
      double s = acc[q];
      for (std::size_t col : columns) s = s + br[col] * ac[col];
      acc[q] = s;
    }
    flops += 2 * columns.size() * (hi - lo);
  }
  if (meter) meter->add_flops(flops);
}

std::vector<double> per_sample_grad(const Model& model, const LayerCache& cache, const Segment& seg, std::size_t i) {
  if (cache.phase != CachePhase::swapped) throw PhaseError("per-sample gradient needs a swapped cache");
  if (i >= seg.count) throw DimensionError("sample index out of range");
  const std::size_t t = model.spec().tokens;
  const std::size_t idx[] = {i};
  const auto cols = sample_columns(idx, t);
  LayerFactors f(model, cache.layer, seg, nullptr, {});
  std::vector<double> g(model.spec().trainable_size(cache.layer), 0.0);
  accumulate_layer_grad(g, f, cols, 0, g.size());
  return g;
}

std::vector<double> batch_grad(const Model& model, const LayerCache& cache, const Segment& seg,
                               std::span<const std::size_t> samples, double divisor) {
  if (cache.phase != CachePhase::swapped) throw PhaseError("batch gradient needs a swapped cache");
  if (samples.empty()) throw SelectionError("empty selection");
  const auto cols = sample_columns(samples, model.spec().tokens);
  LayerFactors f(model, cache.layer, seg, nullptr, {});
  std::vector<double> g(model.spec().trainable_size(cache.layer), 0.0);
  accumulate_layer_grad(g, f, cols, 0, g.size());
  const double inv = 1.0 / divisor;
  for (double& v : g) v = v * inv;
  return g;
}

std::vector<Tensor> unflatten(const ModelSpec& spec, std::size_t l, std::span<const double> flat) {
  if (flat.size() != spec.trainable_size(l)) throw DimensionError("flat gradient has the wrong length");
  const LayerSpec& ls = spec.layers.at(l);
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  switch (ls.kind) {
    case LayerKind::dense: shapes = {{ls.w_out, ls.w_in}}; break;
    case LayerKind::embedding: shapes = {{ls.w_in, ls.w_out}}; break;
    case LayerKind::lora: shapes = {{ls.rank, ls.w_in}, {ls.w_out, ls.rank}}; break;
  }
  std::vector<Tensor> out;
  std::size_t off = 0;
  for (auto [r, c] : shapes) {
    out.emplace_back(r, c, std::vector<double>(flat.begin() + off, flat.begin() + off + r * c));
    off += r * c;
  }
  return out;
}

}  // namespace datareg
