// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include "datareg/selection.hpp"

#include <algorithm>
#include <numeric>

#include "datareg/errors.hpp"
#include "datareg/scoring.hpp"

namespace datareg {

std::string to_string(RuleKind k) {
  switch (k) {
    case RuleKind::topk: return "topk";
    case RuleKind::threshold: return "threshold";
    case RuleKind::greedy: return "greedy";
    case RuleKind::bruteforce: return "bruteforce";
  }
  return "?";
}

std::string to_string(EmptyPolicy p) { return p == EmptyPolicy::full_batch ? "full_batch" : "skip_group"; }

std::string to_string(UpdateMode m) {
  switch (m) {
    case UpdateMode::target_only: return "target_only";
    case UpdateMode::full_training: return "full_training";
    case UpdateMode::subset: return "subset";
  }
  return "?";
}

RuleKind parse_rule_kind(const std::string& s) {
  if (s == "topk") return RuleKind::topk;
  if (s == "threshold") return RuleKind::threshold;
  if (s == "greedy") return RuleKind::greedy;
  if (s == "bruteforce") return RuleKind::bruteforce;
  throw ConfigError("unknown selection rule '" + s + "'");
}

EmptyPolicy parse_empty_policy(const std::string& s) {
  if (s == "full_batch") return EmptyPolicy::full_batch;
  if (s == "skip_group") return EmptyPolicy::skip_group;
  throw ConfigError("unknown empty policy '" + s + "'");
}

UpdateMode parse_update_mode(const std::string& s) {
  if (s == "target_only") return UpdateMode::target_only;
  if (s == "full_training") return UpdateMode::full_training;
  if (s == "subset") return UpdateMode::subset;
  throw ConfigError("unknown update mode '" + s + "'");
}

GreedyDivisor parse_greedy_divisor(const std::string& s) {
  if (s == "running") return GreedyDivisor::running;
  if (s == "fixed_k") return GreedyDivisor::fixed_k;
  throw ConfigError("unknown greedy divisor '" + s + "'");
}

void SelectionRule::validate(std::size_t n) const {
  if (fixed_cardinality() && (k < 1 || k > n)) {
    throw ConfigError("selection size k=" + std::to_string(k) + " must lie in [1, " + std::to_string(n) + "]");
  }
}

std::vector<std::size_t> select_topk(std::span<const double> scores, std::size_t k) {
  if (k > scores.size()) {
    throw SelectionError("top-k with k=" + std::to_string(k) + " exceeds n=" + std::to_string(scores.size()));
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<std::size_t> select_threshold(std::span<const double> scores, double threshold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] >= threshold) out.push_back(i);
  return out;
}

double subset_objective(const GroupGrads& grads, std::span<const std::size_t> samples, double divisor) {
  const std::size_t d = grads.target.size();
  std::vector<double> sum(d, 0.0);
  for (std::size_t i : samples) {
    const auto& g = grads.samples.at(i);
    for (std::size_t q = 0; q < d; ++q) sum[q] += g[q];
  }
  double obj = 0.0;
  for (std::size_t q = 0; q < d; ++q) {
    const double r = sum[q] / divisor - grads.target[q];
    obj += r * r;
  }
  return obj;
}

std::vector<std::size_t> select_greedy(const GroupGrads& grads, std::size_t k, GreedyDivisor divisor) {
  const std::size_t n = grads.samples.size();
  if (k > n) throw SelectionError("greedy with k=" + std::to_string(k) + " exceeds n=" + std::to_string(n));
  const std::size_t d = grads.target.size();
  std::vector<double> sum(d, 0.0);
  std::vector<char> used(n, 0);
  std::vector<std::size_t> chosen;
  for (std::size_t step = 0; step < k; ++step) {
    const double div = divisor == GreedyDivisor::running ? double(step + 1) : double(k);
    std::size_t best = n;
    double best_obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      double obj = 0.0;
      for (std::size_t q = 0; q < d; ++q) {
        const double r = (sum[q] + grads.samples[i][q]) / div - grads.target[q];
        obj += r * r;
      }
      if (best == n || obj < best_obj) {
        best = i;
        best_obj = obj;
      }
    }
    used[best] = 1;
    chosen.push_back(best);
    for (std::size_t q = 0; q < d; ++q) sum[q] += grads.samples[best][q];
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::uint64_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 r = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    r = r * (n - k + i) / i;
    if (r > std::numeric_limits<std::uint64_t>::max()) return std::numeric_limits<std::uint64_t>::max();
  }
  return static_cast<std::uint64_t>(r);
}

BruteForceResult solve_bruteforce(const GroupGrads& grads, std::size_t k, std::uint64_t cap) {
  const std::size_t n = grads.samples.size();
  if (k < 1 || k > n) throw SelectionError("brute force needs 1 <= k <= n");
  const std::uint64_t total = binomial(n, k);
  if (total > cap) {
    throw SelectionError("brute force over C(" + std::to_string(n) + "," + std::to_string(k) + ")=" +
                         std::to_string(total) + " subsets exceeds the cap " + std::to_string(cap));
  }
  // ||sum_S g / k - t||^2 = (1/k^2) sum_{i,j in S} G_ij - (2/k) sum_{i in S} <g_i, t> + ||t||^2
  const std::size_t d = grads.target.size();
  std::vector<double> gram(n * n), align(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t q = 0; q < d; ++q) s += grads.samples[i][q] * grads.samples[j][q];
      gram[i * n + j] = gram[j * n + i] = s;
    }
    double a = 0.0;
    for (std::size_t q = 0; q < d; ++q) a += grads.samples[i][q] * grads.target[q];
    align[i] = a;
  }
  const double kk = double(k);
  std::vector<std::size_t> cur(k);
  std::iota(cur.begin(), cur.end(), 0);
  std::vector<std::size_t> best;
  double best_val = 0.0;
  while (true) {
    double quad = 0.0, lin = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
      lin += align[cur[a]];
      for (std::size_t b = 0; b < k; ++b) quad += gram[cur[a] * n + cur[b]];
    }
    const double val = quad / (kk * kk) - 2.0 * lin / kk;
    if (best.empty() || val < best_val) {
      best = cur;
      best_val = val;
    }
    std::size_t pos = k;
    while (pos > 0 && cur[pos - 1] == n - k + pos - 1) --pos;
    if (pos == 0) break;
    ++cur[pos - 1];
    for (std::size_t j = pos; j < k; ++j) cur[j] = cur[j - 1] + 1;
  }
  return {best, subset_objective(grads, best, kk)};
}

GroupSelection select_group(const SelectionRule& rule, std::span<const double> scores, std::size_t n,
                            const GroupGrads* grads) {
  if (scores.size() != n) throw DimensionError("score vector length differs from the sample count");
  GroupSelection out;
  switch (rule.kind) {
    case RuleKind::topk:
      rule.validate(n);
      out.samples = select_topk(scores, rule.k);
      break;
    case RuleKind::threshold:
      out.samples = select_threshold(scores, rule.threshold);
      break;
    case RuleKind::greedy:
      rule.validate(n);
      if (!grads) throw ConfigError("greedy selection needs per-sample gradients");
      out.samples = select_greedy(*grads, rule.k, rule.greedy_divisor);
      break;
    case RuleKind::bruteforce: {
      rule.validate(n);
      if (!grads) throw ConfigError("brute-force selection needs per-sample gradients");
      auto r = solve_bruteforce(*grads, rule.k, rule.enumeration_cap);
      out.samples = std::move(r.samples);
      out.objective = r.objective;
      break;
    }
  }
  if (out.samples.empty()) {
    if (rule.empty_policy == EmptyPolicy::skip_group) {
      out.skipped = true;
      return out;
    }
    out.fallback = true;
    out.samples.resize(n);
    std::iota(out.samples.begin(), out.samples.end(), 0);
  }
  out.divisor = double(out.samples.size());
  if (grads && !out.objective) out.objective = subset_objective(*grads, out.samples, out.divisor);
  return out;
}

std::vector<GroupSelection> solve_groupwise(const FeasibleSetSpec& spec, const ScoreTable& table,
                                            std::span<const GroupGrads> grads) {
  const std::size_t p_count = table.groups();
  if (p_count != spec.partition.size()) throw DimensionError("score table and partition disagree on group count");
  if (spec.rule.needs_gradients() && grads.size() != p_count) {
    throw ConfigError(to_string(spec.rule.kind) + " selection needs gradients for every group");
  }
  const std::size_t n = table.samples();
  std::vector<GroupSelection> out;
  for (std::size_t p = 0; p < p_count; ++p) {
    const GroupGrads* g = grads.empty() ? nullptr : &grads[p];
    if (spec.mode == UpdateMode::full_training) {
      GroupSelection all;
      all.samples.resize(n);
      std::iota(all.samples.begin(), all.samples.end(), 0);
      all.divisor = double(n);
      out.push_back(std::move(all));
      continue;
    }
    out.push_back(select_group(spec.rule, table.scores[p], n, g));
  }
  return out;
}

}  // namespace datareg
