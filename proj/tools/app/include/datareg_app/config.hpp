// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration: JSON file format, schema validation and conversion to
// library option structs. The schema is documented in docs/config.md.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "datareg/biasvar.hpp"
#include "datareg/net.hpp"
#include "datareg/task.hpp"
#include "datareg/updates.hpp"

namespace datareg::app {

struct PartitionConfig {
  std::string kind = "layer_wise";  // global | layer_wise | blocks
  std::size_t block_layers = 1;     // layers per group for "blocks"
};

struct BenchConfig {
  std::vector<std::array<std::size_t, 4>> cells;  // (n, m, T, w)
  ProjectorDims compressed_dims{4, 4, 0};
  std::size_t repeats = 1;
};

struct SimulateConfig {
  std::size_t dim = 16;
  std::size_t n = 8;
  std::size_t k = 4;
  std::size_t groups = 4;
  double target_mean = 0.5;
  double target_var = 4.0;
  double train_var = 1.0;
  std::vector<double> mismatch{0.0, 1.0, 2.0};
  std::vector<std::size_t> m{1, 2, 4, 8, 16, 32, 64};
  std::size_t trials = 10000;
  std::optional<double> clip;
  std::vector<SimMethodSpec> methods;  // empty: the four standard estimators
};

struct CaseStudyConfig {
  std::size_t batches = 50;
  std::size_t n = 8;
  std::size_t m = 1;
  ScoreMethod method = ScoreMethod::direct;
  std::optional<std::size_t> rescale_from;
  double rescale_factor = 10.0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::uint64_t model_seed = 0;  // defaults to 100 + seed when absent
  bool model_seed_set = false;
  ModelSpec model;
  ModelInit init;
  TaskSpec task;
  std::size_t steps = 100;
  std::size_t n = 8;
  std::size_t m = 1;
  std::size_t eval_every = 10;
  StepConfig step;
  PartitionConfig partition;
  std::optional<std::size_t> checkpoint_per_segment;
  bool trace = false;
  BenchConfig bench;
  SimulateConfig simulate;
  CaseStudyConfig case_study;
  std::string output_dir = "out";

  // The exact JSON that was read (after command-line overrides); hashed into
  // every report.
  nlohmann::json source;

  std::uint64_t effective_model_seed() const noexcept { return model_seed_set ? model_seed : 100 + seed; }
  Partition build_partition() const;
  TrainOptions train_options() const;
};

// Validates against the schema and converts. Throws ConfigError naming the
// offending JSON path; unknown keys are errors.
RunConfig parse_config(const nlohmann::json& j);
nlohmann::json read_config_json(const std::string& path);
RunConfig load_config(const std::string& path);
// Defaults for every section, as a config document.
nlohmann::json default_config();

// 64-bit FNV-1a over the compact, key-sorted serialization.
std::uint64_t config_hash(const nlohmann::json& j);
std::string hex64(std::uint64_t v);

}  // namespace datareg::app
