// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include "datareg/task.hpp"

#include <cmath>
#include <numeric>

#include "datareg/errors.hpp"

namespace datareg {

namespace {

Tensor teacher_outputs(const Tensor& teacher, const Tensor& x) { return matmul(teacher, x); }

SampleSet draw_set(std::size_t count, std::size_t tokens, std::size_t w_in, std::size_t w_out, Rng& rng,
                   double scale, double shift) {
  SampleSet s;
  s.count = count;
  s.inputs = Tensor(w_in, count * tokens);
  for (double& v : s.inputs.data()) v = scale * rng.normal() + shift;
  s.targets = Tensor(w_out, count * tokens);
  return s;
}

void add_noise(Tensor& y, double noise, Rng& rng) {
  if (noise == 0.0) return;
  for (double& v : y.data()) v += noise * rng.normal();
}

}  // namespace

void TaskSpec::validate() const {
  if (train_pool == 0 || target_pool == 0 || eval_pool == 0) throw ConfigError("task pools must be non-empty");
  if (!(clean_fraction >= 0.0 && clean_fraction <= 1.0)) throw ConfigError("clean_fraction must lie in [0, 1]");
  if (sources == 0) throw ConfigError("task needs at least one shifted source");
  if (!(mismatch >= 0.0) || !(noise >= 0.0) || !(input_scale > 0.0)) {
    throw ConfigError("mismatch and noise must be non-negative and input_scale positive");
  }
}

Task make_task(const ModelSpec& model, const TaskSpec& spec) {
  model.validate();
  spec.validate();
  if (model.token_input()) throw ConfigError("the synthetic regression task needs a dense input layer");
  if (model.loss != LossKind::squared) throw ConfigError("the synthetic regression task needs the squared loss");
  const std::size_t w_in = model.input_width(), w_out = model.output_width(), T = model.tokens;
  Rng rng(derive_seed(spec.seed, {0x7461736bULL}));
  Rng teacher_rng = rng.split(0), src_rng = rng.split(1), data_rng = rng.split(2);
  const Tensor teacher = Tensor::randn(w_out, w_in, teacher_rng, 1.0 / std::sqrt(double(w_in)));
  std::vector<Tensor> shifted;
  for (std::size_t s = 0; s < spec.sources; ++s) {
    Tensor d = Tensor::randn(w_out, w_in, src_rng, 1.0);
    const double rms = frob_norm(d) / std::sqrt(double(d.size()));
    scale_inplace(d, spec.mismatch / (rms * std::sqrt(double(w_in))));
    add_inplace(d, teacher);
    shifted.push_back(std::move(d));
  }

  Task task;
  task.tokens = T;
  task.target = draw_set(spec.target_pool, T, w_in, w_out, data_rng, 1.0, 0.0);
  task.target.targets = teacher_outputs(teacher, task.target.inputs);
  add_noise(task.target.targets, spec.noise, data_rng);
  task.eval = draw_set(spec.eval_pool, T, w_in, w_out, data_rng, 1.0, 0.0);
  task.eval.targets = teacher_outputs(teacher, task.eval.inputs);

  task.train = draw_set(spec.train_pool, T, w_in, w_out, data_rng, spec.input_scale, spec.input_shift);
  task.clean.resize(spec.train_pool);
  for (std::size_t i = 0; i < spec.train_pool; ++i) {
    const bool clean = data_rng.uniform() < spec.clean_fraction;
    task.clean[i] = clean;
    const Tensor& w = clean ? teacher : shifted[data_rng.below(spec.sources)];
    const Tensor x = slice_columns(task.train.inputs, i * T, (i + 1) * T);
    const Tensor y = matmul(w, x);
    for (std::size_t r = 0; r < w_out; ++r)
      for (std::size_t c = 0; c < T; ++c) task.train.targets(r, i * T + c) = y(r, c);
  }
  add_noise(task.train.targets, spec.noise, data_rng);
  return task;
}

namespace {

std::vector<std::size_t> draw_without_replacement(std::size_t pool, std::size_t count, Rng& rng) {
  if (count > pool) throw ConfigError("batch size exceeds its pool");
  std::vector<std::size_t> idx(pool);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(pool - i)]);
  idx.resize(count);
  return idx;
}

}  // namespace

Batch sample_batch(const Task& task, std::size_t n, std::size_t m, Rng& rng) {
  Batch b;
  b.tokens = task.tokens;
  const auto tr = draw_without_replacement(task.train.count, n, rng);
  const auto tg = draw_without_replacement(task.target.count, m, rng);
  b.train = task.train.subset(tr, task.tokens);
  b.target = task.target.subset(tg, task.tokens);
  return b;
}

double mean_loss(const Model& model, const SampleSet& samples, std::size_t tokens) {
  if (samples.count == 0) return 0.0;
  return evaluate_loss(model, samples, tokens) / double(samples.count);
}

std::vector<StepRecord> train(Model& model, const Task& task, const TrainOptions& opts,
                              const std::function<void(const StepRecord&)>& on_step) {
  if (opts.steps == 0) throw ConfigError("training needs at least one step");
  Rng rng(derive_seed(opts.seed, {0x7472616eULL}));
  std::optional<MesoState> meso;
  if (opts.step.optimizer == OptimizerKind::meso_adamw) meso.emplace(model.spec(), opts.step.meso);
  std::vector<StepRecord> records;
  for (std::size_t t = 0; t < opts.steps; ++t) {
    const Batch batch = sample_batch(task, opts.n, opts.m, rng);
    StepConfig cfg = opts.step;
    cfg.step_index = t;
    const StepReport rep = run_step(model, batch, cfg, meso ? &*meso : nullptr);
    StepRecord rec;
    rec.step = t + 1;
    rec.train_loss = rep.train_loss;
    rec.target_loss_before = rep.target_loss_before;
    rec.target_loss_after = rep.target_loss_after;
    rec.update_norm = std::sqrt(rep.update.squared_norm());
    rec.peak_entries = rep.meter.peak_entries;
    rec.flops = rep.meter.flops;
    rec.groups = rep.groups;
    rec.schedule_note = rep.schedule_note;
    if (opts.eval_every && (rec.step % opts.eval_every == 0 || rec.step == opts.steps)) {
      rec.eval_loss = mean_loss(model, task.eval, task.tokens);
    }
    if (on_step) on_step(rec);
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace datareg
