// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "datareg/net.hpp"
#include "datareg/rng.hpp"
#include "datareg/updates.hpp"

namespace datareg {

// Two-distribution regression with a linear teacher. Target samples follow
// y = W* x + noise. A training sample comes from the target teacher with
// probability clean_fraction and otherwise from one of `sources` shifted
// teachers W* + mismatch * D_s, where each D_s has unit RMS entry. Training
// inputs may also be scaled and shifted.
struct TaskSpec {
  std::size_t train_pool = 256;
  std::size_t target_pool = 64;
  std::size_t eval_pool = 256;
  double mismatch = 0.0;
  double clean_fraction = 0.25;
  std::size_t sources = 4;
  double noise = 0.05;
  double input_scale = 1.0;  // training inputs only
  double input_shift = 0.0;  // added to every training input coordinate
  std::uint64_t seed = 0;

  void validate() const;
};

struct Task {
  SampleSet train;
  SampleSet target;
  SampleSet eval;
  std::vector<bool> clean;  // per training sample
  std::size_t tokens = 1;
};

// Throws ConfigError for token-input models.
Task make_task(const ModelSpec& model, const TaskSpec& spec);

// Draws n training and m target samples without replacement from the pools.
Batch sample_batch(const Task& task, std::size_t n, std::size_t m, Rng& rng);

struct TrainOptions {
  std::size_t steps = 100;
  std::size_t n = 8;
  std::size_t m = 1;
  std::size_t eval_every = 10;
  std::uint64_t seed = 0;
  StepConfig step;
};

struct StepRecord {
  std::size_t step = 0;
  double train_loss = 0.0;
  double target_loss_before = 0.0;
  double target_loss_after = 0.0;
  double update_norm = 0.0;
  std::int64_t peak_entries = 0;
  std::uint64_t flops = 0;
  std::optional<double> eval_loss;  // mean per-sample loss on the eval pool
  std::vector<GroupReport> groups;
  std::string schedule_note;
};

// Runs `steps` optimizer steps, resampling both batches every step. The
// callback sees each record as it is produced.
std::vector<StepRecord> train(Model& model, const Task& task, const TrainOptions& opts,
                              const std::function<void(const StepRecord&)>& on_step = {});

// Mean per-sample loss over a sample set.
double mean_loss(const Model& model, const SampleSet& samples, std::size_t tokens);

}  // namespace datareg
