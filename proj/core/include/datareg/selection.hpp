// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "datareg/partition.hpp"

namespace datareg {

enum class RuleKind { topk, threshold, greedy, bruteforce };
enum class EmptyPolicy { full_batch, skip_group };
// Averaging divisor used while greedy builds its set: the running |S| or the
// final k.
enum class GreedyDivisor { running, fixed_k };
enum class UpdateMode { target_only, full_training, subset };

std::string to_string(RuleKind k);
std::string to_string(EmptyPolicy p);
std::string to_string(UpdateMode m);
RuleKind parse_rule_kind(const std::string& s);
EmptyPolicy parse_empty_policy(const std::string& s);
UpdateMode parse_update_mode(const std::string& s);
GreedyDivisor parse_greedy_divisor(const std::string& s);

struct SelectionRule {
  RuleKind kind = RuleKind::topk;
  std::size_t k = 1;
  double threshold = 0.0;
  EmptyPolicy empty_policy = EmptyPolicy::full_batch;
  GreedyDivisor greedy_divisor = GreedyDivisor::running;
  std::uint64_t enumeration_cap = 1000000;

  bool fixed_cardinality() const noexcept { return kind != RuleKind::threshold; }
  bool needs_gradients() const noexcept { return kind == RuleKind::greedy || kind == RuleKind::bruteforce; }
  // Throws ConfigError if k is outside [1, n] for fixed-cardinality kinds.
  void validate(std::size_t n) const;
};

struct FeasibleSetSpec {
  UpdateMode mode = UpdateMode::subset;
  SelectionRule rule;
  Partition partition;
};

// Per-sample gradients and the target gradient restricted to one group.
struct GroupGrads {
  std::vector<std::vector<double>> samples;
  std::vector<double> target;
};

// Scores are ranked descending; ties go to the lower index. Returned sets
// are ascending.
std::vector<std::size_t> select_topk(std::span<const double> scores, std::size_t k);
// {i : s_i >= threshold}
std::vector<std::size_t> select_threshold(std::span<const double> scores, double threshold);
std::vector<std::size_t> select_greedy(const GroupGrads& grads, std::size_t k,
                                       GreedyDivisor divisor = GreedyDivisor::running);

struct BruteForceResult {
  std::vector<std::size_t> samples;
  double objective = 0.0;
};
// Exact minimizer of ||mean_S g - target||^2 over all size-k subsets; ties go
// to the lexicographically smallest subset. Throws SelectionError when the
// number of subsets exceeds `cap`.
BruteForceResult solve_bruteforce(const GroupGrads& grads, std::size_t k, std::uint64_t cap = 1000000);

// ||(1/divisor) sum_{i in S} g_i - target||^2
double subset_objective(const GroupGrads& grads, std::span<const std::size_t> samples, double divisor);

// Outcome of one group's selection as it is applied to the update.
struct GroupSelection {
  std::vector<std::size_t> samples;
  double divisor = 0.0;
  bool fallback = false;  // empty threshold selection replaced by the full batch
  bool skipped = false;   // empty selection with skip_group: zero update
  std::optional<double> objective;
};

// Applies `rule` to one group. `grads` is required for greedy and brute force.
GroupSelection select_group(const SelectionRule& rule, std::span<const double> scores, std::size_t n,
                            const GroupGrads* grads = nullptr);

struct ScoreTable;

// Solves every group independently. `grads` holds one entry per group when
// the rule needs gradients and may be empty otherwise.
std::vector<GroupSelection> solve_groupwise(const FeasibleSetSpec& spec, const ScoreTable& table,
                                            std::span<const GroupGrads> grads = {});

std::uint64_t binomial(std::size_t n, std::size_t k);

}  // namespace datareg
