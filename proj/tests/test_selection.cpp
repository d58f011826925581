// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <bit>
#include <limits>

#include "datareg/errors.hpp"
#include "datareg/scoring.hpp"
#include "datareg/selection.hpp"
#include "support.hpp"

using namespace datareg;

namespace {

GroupGrads random_group(std::size_t n, std::size_t d, Rng& rng) {
  GroupGrads g;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(d);
    for (double& x : v) x = rng.normal();
    g.samples.push_back(v);
  }
  g.target.resize(d);
  for (double& x : g.target) x = rng.normal();
  return g;
}

double objective(const GroupGrads& g, std::uint32_t mask, double divisor) {
  std::vector<double> u(g.target.size(), 0.0);
  for (std::size_t i = 0; i < g.samples.size(); ++i)
    if (mask >> i & 1u)
      for (std::size_t j = 0; j < u.size(); ++j) u[j] += g.samples[i][j];
  double s = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    const double r = u[j] / divisor - g.target[j];
    s += r * r;
  }
  return s;
}

// Minimum over every subset of size k, by bitmask enumeration.
double enumerate_min(const GroupGrads& g, std::size_t k) {
  double best = std::numeric_limits<double>::infinity();
  const std::uint32_t n = std::uint32_t(g.samples.size());
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask)
    if (std::size_t(std::popcount(mask)) == k) best = std::min(best, objective(g, mask, double(k)));
  return best;
}

GroupGrads restrict_dims(const GroupGrads& g, std::size_t begin, std::size_t end) {
  GroupGrads r;
  for (const auto& s : g.samples) r.samples.emplace_back(s.begin() + begin, s.begin() + end);
  r.target.assign(g.target.begin() + begin, g.target.begin() + end);
  return r;
}

std::vector<double> scores_of(const GroupGrads& g) {
  std::vector<double> s;
  for (const auto& x : g.samples) s.push_back(dt::dotv(x, g.target));
  return s;
}

using Idx = std::vector<std::size_t>;

}  // namespace

TEST(TopK, Examples) {
  const std::vector<double> s{3, 1, 2};
  EXPECT_EQ(select_topk(s, 2), (Idx{0, 2}));
  EXPECT_EQ(select_topk(s, 3), (Idx{0, 1, 2}));
  const std::vector<double> tied{1, 1, 1};
  EXPECT_EQ(select_topk(tied, 2), (Idx{0, 1}));
  EXPECT_THROW(select_topk(s, 4), SelectionError);
}

TEST(Threshold, Examples) {
  const std::vector<double> s{-1, 2, 0};
  EXPECT_EQ(select_threshold(s, 0.0), (Idx{1, 2}));
  EXPECT_EQ(select_threshold(s, -std::numeric_limits<double>::infinity()), (Idx{0, 1, 2}));
  EXPECT_TRUE(select_threshold(s, 5.0).empty());
}

TEST(Threshold, ZeroDropsExactlyNegativeScores) {
  Rng rng(1);
  std::vector<double> s(50);
  for (double& x : s) x = rng.normal();
  s[7] = 0.0;
  for (std::size_t i : select_threshold(s, 0.0)) EXPECT_GE(s[i], 0.0);
  std::size_t negatives = 0;
  for (double x : s) negatives += x < 0.0;
  EXPECT_EQ(select_threshold(s, 0.0).size(), s.size() - negatives);
}

TEST(Greedy, SingleStepEqualsBruteForce) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const GroupGrads g = random_group(6, 4, rng);
    EXPECT_EQ(select_greedy(g, 1), solve_bruteforce(g, 1).samples);
  }
}

TEST(Greedy, NeverBeatsBruteForce) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 4 + rng.below(7), k = 1 + rng.below(std::min<std::size_t>(5, n));
    const GroupGrads g = random_group(n, 5, rng);
    const auto greedy = select_greedy(g, k);
    ASSERT_EQ(greedy.size(), k);
    EXPECT_GE(subset_objective(g, greedy, double(k)), solve_bruteforce(g, k).objective - 1e-12);
  }
}

TEST(Greedy, PicksDuplicatedAlignedPair) {
  GroupGrads g;
  g.target = {1.0, 0.0};
  g.samples = {{0.0, 3.0}, {1.0, 0.0}, {-2.0, 1.0}, {1.0, 0.0}};
  const auto s = select_greedy(g, 2);
  EXPECT_EQ(s, (Idx{1, 3}));
  EXPECT_EQ(subset_objective(g, s, 2.0), solve_bruteforce(g, 2).objective);
}

TEST(Greedy, FixedDivisorVariant) {
  // With divisor k the first pick prefers a sample near k * target.
  GroupGrads g;
  g.target = {1.0};
  g.samples = {{1.0}, {2.0}, {0.0}};
  EXPECT_EQ(select_greedy(g, 2, GreedyDivisor::running), (Idx{0, 1}));
  EXPECT_EQ(select_greedy(g, 2, GreedyDivisor::fixed_k).front(), 1u);
  GroupGrads h;
  h.target = {1.0};
  h.samples = {{1.0}, {2.0}, {2.0}};
  EXPECT_EQ(select_greedy(h, 2, GreedyDivisor::fixed_k), (Idx{0, 1}));
}

TEST(BruteForce, Examples) {
  Rng rng(4);
  const GroupGrads g = random_group(5, 3, rng);
  const auto all = solve_bruteforce(g, 5);
  EXPECT_EQ(all.samples, (Idx{0, 1, 2, 3, 4}));
  EXPECT_NEAR(all.objective, objective(g, 0x1f, 5.0), 1e-14);

  GroupGrads c;
  c.target = {1.0, 2.0};
  c.samples = {{1.5, 2.0}, {0.5, 2.0}, {10.0, 20.0}, {10.0, 20.0}};
  EXPECT_EQ(solve_bruteforce(c, 2).samples, (Idx{0, 1}));
  EXPECT_NEAR(solve_bruteforce(c, 2).objective, 0.0, 1e-15);
}

TEST(BruteForce, MatchesEnumerationAndBeatsTopK) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const GroupGrads g = random_group(8, 3, rng);
    const auto bf = solve_bruteforce(g, 4);
    EXPECT_NEAR(bf.objective, enumerate_min(g, 4), 1e-12);
    const auto top = select_topk(scores_of(g), 4);
    EXPECT_LE(bf.objective, subset_objective(g, top, 4.0) + 1e-12);
  }
}

TEST(BruteForce, LexicographicTies) {
  GroupGrads g;
  g.target = {0.0};
  g.samples = {{1.0}, {-1.0}, {1.0}, {-1.0}};
  EXPECT_EQ(solve_bruteforce(g, 2).samples, (Idx{0, 1}));
}

TEST(BruteForce, CapIsEnforced) {
  Rng rng(6);
  const GroupGrads g = random_group(20, 1, rng);
  EXPECT_THROW(solve_bruteforce(g, 10, 1000), SelectionError);
  EXPECT_EQ(binomial(20, 10), 184756u);
  EXPECT_EQ(binomial(5, 0), 1u);
  EXPECT_EQ(binomial(3, 4), 0u);
}

TEST(Objective, AlignmentDecomposition) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const GroupGrads g = random_group(7, 6, rng);
    const Idx s{1, 3, 4};
    const double k = 3.0;
    std::vector<double> gs(6, 0.0);
    for (std::size_t i : s)
      for (std::size_t j = 0; j < 6; ++j) gs[j] += g.samples[i][j] / k;
    const auto sc = scores_of(g);
    const double align = 2.0 / k * (sc[1] + sc[3] + sc[4]);
    EXPECT_NEAR(dt::dotv(gs, gs) - align + dt::dotv(g.target, g.target), subset_objective(g, s, k), 1e-10);
  }
}

TEST(SelectGroup, EmptyThresholdPolicies) {
  const std::vector<double> s{-1.0, -2.0};
  SelectionRule rule;
  rule.kind = RuleKind::threshold;
  rule.threshold = 0.0;
  const auto fb = select_group(rule, s, 2);
  EXPECT_TRUE(fb.fallback);
  EXPECT_EQ(fb.samples, (Idx{0, 1}));
  EXPECT_EQ(fb.divisor, 2.0);
  rule.empty_policy = EmptyPolicy::skip_group;
  const auto sk = select_group(rule, s, 2);
  EXPECT_TRUE(sk.skipped);
  EXPECT_TRUE(sk.samples.empty());
}

TEST(SelectGroup, RulesNeedingGradientsRequireThem) {
  SelectionRule rule;
  rule.kind = RuleKind::greedy;
  rule.k = 1;
  const std::vector<double> s{1.0, 2.0};
  EXPECT_THROW(select_group(rule, s, 2), ConfigError);
  rule.kind = RuleKind::topk;
  rule.k = 3;
  EXPECT_THROW(rule.validate(2), ConfigError);
}

TEST(SelectGroup, FullCardinalityCollapses) {
  Rng rng(8);
  const GroupGrads g = random_group(5, 3, rng);
  const auto sc = scores_of(g);
  for (RuleKind kind : {RuleKind::topk, RuleKind::greedy, RuleKind::bruteforce}) {
    SelectionRule rule;
    rule.kind = kind;
    rule.k = 5;
    const auto sel = select_group(rule, sc, 5, &g);
    EXPECT_EQ(sel.samples, (Idx{0, 1, 2, 3, 4})) << to_string(kind);
    EXPECT_EQ(sel.divisor, 5.0);
  }
  SelectionRule thr;
  thr.kind = RuleKind::threshold;
  thr.threshold = -std::numeric_limits<double>::infinity();
  EXPECT_EQ(select_group(thr, sc, 5).samples.size(), 5u);
}

TEST(GroupWise, InclusionAndRefinement) {
  // Coordinates [0, 6) split into a coarse pair of groups and a finer triple.
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const GroupGrads g = random_group(7, 6, rng);
    for (std::size_t k = 1; k <= 7; ++k) {
      const double global = solve_bruteforce(g, k).objective;
      const double coarse = solve_bruteforce(restrict_dims(g, 0, 3), k).objective +
                            solve_bruteforce(restrict_dims(g, 3, 6), k).objective;
      const double fine = solve_bruteforce(restrict_dims(g, 0, 3), k).objective +
                          solve_bruteforce(restrict_dims(g, 3, 5), k).objective +
                          solve_bruteforce(restrict_dims(g, 5, 6), k).objective;
      EXPECT_LE(coarse, global + 1e-12);
      EXPECT_LE(fine, coarse + 1e-12);
    }
  }
}

TEST(GroupWise, SolvesEachGroupFromItsScores) {
  const ModelSpec spec = dt::dense_spec({2, 3, 2}, 1);
  ScoreTable table;
  table.partition = Partition::layer_wise(spec);
  table.scores = {{1.0, 3.0, 2.0}, {5.0, 0.0, 4.0}};
  FeasibleSetSpec fs;
  fs.partition = table.partition;
  fs.rule.k = 1;
  const auto sel = solve_groupwise(fs, table);
  ASSERT_EQ(sel.size(), 2u);
  EXPECT_EQ(sel[0].samples, (Idx{1}));
  EXPECT_EQ(sel[1].samples, (Idx{0}));

  ScoreTable one;
  one.partition = Partition::global(spec);
  one.scores = {{1.0, 3.0, 2.0}};
  fs.partition = one.partition;
  fs.rule.k = 2;
  EXPECT_EQ(solve_groupwise(fs, one)[0].samples, select_topk(one.scores[0], 2));
}

TEST(Partition, CanonicalConstructors) {
  const ModelSpec spec = dt::dense_spec({2, 3, 4, 2, 1}, 1);
  const Partition g = Partition::global(spec);
  EXPECT_EQ(g.size(), 1u);
  EXPECT_EQ(g.group_size(0), spec.param_count());
  const Partition lw = Partition::layer_wise(spec);
  EXPECT_EQ(lw.size(), 4u);
  EXPECT_TRUE(lw.is_layer_wise(spec));
  EXPECT_FALSE(g.is_layer_wise(spec));
  const Partition b = Partition::blocks(spec, 2);
  EXPECT_EQ(b.size(), 2u);
  EXPECT_EQ(b.layers_of(1), (Idx{2, 3}));
  EXPECT_EQ(b.groups_on(1), (Idx{0}));
  // Blocks are counted from the output layer, so the short block is at the bottom.
  const Partition odd = Partition::blocks(spec, 3);
  EXPECT_EQ(odd.layers_of(0), (Idx{0}));
  EXPECT_EQ(odd.layers_of(1), (Idx{1, 2, 3}));
  for (const Partition* p : {&g, &lw, &b, &odd}) {
    EXPECT_NO_THROW(p->validate(spec));
    EXPECT_TRUE(p->layer_aligned(spec));
  }
}

TEST(Partition, ValidationRejectsBadGroups) {
  const ModelSpec spec = dt::dense_spec({2, 3}, 1);  // 6 coordinates
  EXPECT_THROW(Partition({{{0, 0, 4}}, {{0, 3, 6}}}).validate(spec), ConfigError);
  EXPECT_THROW(Partition({{{0, 0, 5}}}).validate(spec), ConfigError);
  EXPECT_THROW(Partition({{{0, 0, 6}}, {}}).validate(spec), ConfigError);
  EXPECT_THROW(Partition({{{1, 0, 6}}}).validate(spec), ConfigError);
  const Partition split({{{0, 0, 2}, {0, 4, 6}}, {{0, 2, 4}}});
  EXPECT_NO_THROW(split.validate(spec));
  EXPECT_FALSE(split.layer_aligned(spec));
}
