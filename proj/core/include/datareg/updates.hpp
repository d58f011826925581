// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "datareg/compression.hpp"
#include "datareg/exec.hpp"
#include "datareg/ledger.hpp"
#include "datareg/net.hpp"
#include "datareg/scheduler.hpp"
#include "datareg/scoring.hpp"
#include "datareg/selection.hpp"

namespace datareg {

enum class OptimizerKind { sgd, meso_adamw };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

// Deliberate schedule faults used to exercise the legality checker.
enum class Fault { none, skip_swap };

struct MesoConfig {
  ProjectorDims dims{8, 8, 0};
  std::uint64_t seed = 0;
  bool identity = false;  // lossless projector, for equivalence checks
  std::size_t refresh_every = 0;  // 0 keeps the first projector forever
  AdamWConfig adam;
  SecondMomentOptions second_moment;
};

struct StepConfig {
  double lr = 0.1;
  FeasibleSetSpec spec;
  ScoreMethod method = ScoreMethod::direct;
  // Projector dims and seed for compressed scoring.
  ProjectorDims score_dims{8, 8, 0};
  std::uint64_t projector_seed = 0;
  OptimizerKind optimizer = OptimizerKind::sgd;
  Schedule schedule = Schedule::one_pass;
  std::size_t micro_batch = 0;
  std::optional<SegmentPlan> checkpoint;
  MesoConfig meso;
  Precision precision = Precision::f64;
  Fault fault = Fault::none;
  std::uint64_t step_index = 0;
};

struct GroupReport {
  std::size_t group = 0;
  std::vector<std::size_t> selected;
  double divisor = 0.0;
  bool fallback = false;
  bool skipped = false;
  std::optional<double> objective;
  double update_norm = 0.0;
};

struct StepReport {
  std::string kind;
  Schedule schedule = Schedule::one_pass;
  std::string schedule_note;
  Update update;
  std::vector<GroupReport> groups;
  std::optional<ScoreTable> scores;
  Ledger ledger;
  CostSnapshot meter;
  double train_loss = 0.0;
  double target_loss_before = 0.0;
  double target_loss_after = 0.0;
};

// Per-layer compressed optimizer state carried across MeSO steps.
class MesoState {
 public:
  MesoState() = default;
  MesoState(const ModelSpec& spec, const MesoConfig& cfg);

  bool initialized() const noexcept { return !projectors_.empty(); }
  const Projector& projector(std::size_t l) const { return projectors_.at(l); }
  MomentState& moments(std::size_t l) { return moments_.at(l); }
  const MomentState& moments(std::size_t l) const { return moments_.at(l); }
  std::uint64_t epoch() const noexcept { return epoch_; }
  std::uint64_t steps() const noexcept { return steps_; }

  // Advances the step counter and, on refresh boundaries, draws new
  // projectors and transfers both moments into the new subspace.
  void begin_step(const ModelSpec& spec);

 private:
  MesoConfig cfg_;
  std::vector<Projector> projectors_;
  std::vector<MomentState> moments_;
  std::uint64_t epoch_ = 0;
  std::uint64_t steps_ = 0;
};

// theta <- theta - lr * ghat_tr, with per-layer release during backward.
StepReport step_standard(Model& model, const Batch& batch, double lr, Precision precision = Precision::f64);
// theta <- theta - lr * ghat_target.
StepReport step_target_only(Model& model, const Batch& batch, double lr, Precision precision = Precision::f64);

// Post-hoc global schedule: backward retains every pair, a scoring sweep
// releases target caches, one subset is solved, and an assembly sweep
// releases training caches. Requires a single group.
StepReport step_global_onepass(Model& model, const Batch& batch, const StepConfig& cfg);
// Interleaved schedule for layer-wise partitions.
StepReport step_layerwise(Model& model, const Batch& batch, const StepConfig& cfg);
// Interleaved schedule for arbitrary partitions: a group resolves at its
// lowest layer and a layer's caches are released once every group touching
// it has resolved.
StepReport step_groupwise(Model& model, const Batch& batch, const StepConfig& cfg);
// Pass one scores with the standard release schedule; pass two re-runs the
// selected samples and assembles.
StepReport step_twopass(Model& model, const Batch& batch, const StepConfig& cfg);
// Threshold rule over sequential micro-batches of cfg.micro_batch samples.
// Throws ConfigError for rules that do not decompose across micro-batches.
StepReport step_grad_accum(Model& model, const Batch& batch, const StepConfig& cfg);
// Layer-wise selection on compressed per-sample gradients, with the update
// formed and optionally optimized in the compressed space.
StepReport step_meso_layerwise(Model& model, const Batch& batch, const StepConfig& cfg, MesoState& state);

// Dispatches on mode, partition, schedule, optimizer and checkpoint plan.
// A group spanning checkpoint segments switches one_pass to two_pass and the
// reason is recorded in the report.
StepReport run_step(Model& model, const Batch& batch, const StepConfig& cfg, MesoState* meso = nullptr);

}  // namespace datareg
