// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <bit>
#include <limits>

#include "datareg/errors.hpp"
#include "datareg/updates.hpp"
#include "support.hpp"

using namespace datareg;

namespace {

StepConfig subset_cfg(Partition part, RuleKind kind, std::size_t k, double threshold = 0.0) {
  StepConfig cfg;
  cfg.lr = 0.05;
  cfg.spec.partition = std::move(part);
  cfg.spec.rule.kind = kind;
  cfg.spec.rule.k = k;
  cfg.spec.rule.threshold = threshold;
  return cfg;
}

ModelSpec mixed_spec() {
  ModelSpec spec;
  spec.layers = {{LayerKind::dense, 3, 4, 0}, {LayerKind::lora, 4, 4, 2}, {LayerKind::dense, 4, 2, 0}};
  spec.tokens = 2;
  return spec;
}

// Splits every layer into two coordinate halves, pairing the lower half of
// layer l with the upper half of layer l + 1 where possible.
Partition intra_layer_split(const ModelSpec& spec) {
  std::vector<std::vector<Span>> g(2);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t d = spec.trainable_size(l), h = d / 2;
    g[l % 2].push_back({l, 0, h});
    g[(l + 1) % 2].push_back({l, h, d});
  }
  return Partition(g);
}

std::vector<Partition> partitions(const ModelSpec& spec) {
  return {Partition::global(spec), Partition::layer_wise(spec), Partition::blocks(spec, 2), intra_layer_split(spec)};
}

struct Fixture {
  ModelSpec spec;
  Model model;
  Batch batch;

  explicit Fixture(std::uint64_t seed, ModelSpec s = mixed_spec(), std::size_t n = 6, std::size_t m = 2)
      : spec(s), model(make(seed)), batch(make_batch(seed, n, m)) {}

  Model make(std::uint64_t seed) {
    Rng rng(seed);
    return Model(spec, rng, {1.0, 0.5});
  }
  Batch make_batch(std::uint64_t seed, std::size_t n, std::size_t m) {
    Rng rng(seed + 1000);
    return dt::random_batch(spec, n, m, rng);
  }
};

// u restricted to group p, flattened in span order.
std::vector<double> group_part(const Partition& part, std::size_t p, const std::vector<std::vector<double>>& layers) {
  std::vector<double> out;
  for (const Span& s : part.group(p))
    for (std::size_t q = s.begin; q < s.end; ++q) out.push_back(layers[s.layer][q]);
  return out;
}

GroupGrads oracle_group(const Partition& part, std::size_t p, const dt::LibraryGrads& g, std::size_t n) {
  GroupGrads out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v;
    for (const Span& s : part.group(p))
      for (std::size_t q = s.begin; q < s.end; ++q) v.push_back(g.train[s.layer][i][q]);
    out.samples.push_back(v);
  }
  for (const Span& s : part.group(p))
    for (std::size_t q = s.begin; q < s.end; ++q) out.target.push_back(g.target_mean[s.layer][q]);
  return out;
}

void expect_legal(const StepReport& r) {
  const auto v = check_legality(r.ledger.events, r.ledger.reads);
  EXPECT_FALSE(v.has_value()) << (v ? v->describe() : "");
  EXPECT_EQ(replay(r.ledger.events).final_live, 0);
}

}  // namespace

TEST(Standard, ZeroRateLeavesModelUnchanged) {
  Fixture f(1);
  Model before = f.model;
  step_standard(f.model, f.batch, 0.0);
  EXPECT_TRUE(bit_equal(before, f.model));
}

TEST(Standard, SingleLayerAnalyticStep) {
  // One linear layer, squared loss: gradient is (W x - y) x^T.
  Model model(dt::dense_spec({2, 1}, 1), std::vector<LayerParams>{{Tensor(1, 2, {0.5, -1.0}), {}, {}}});
  Batch b;
  b.train = {1, Tensor(2, 1, {2.0, 3.0}), Tensor(1, 1, {1.0})};
  b.target = b.train;
  step_standard(model, b, 0.1);
  const double r = 0.5 * 2.0 - 3.0 - 1.0;
  EXPECT_NEAR(model.params(0).w(0, 0), 0.5 - 0.1 * r * 2.0, 1e-15);
  EXPECT_NEAR(model.params(0).w(0, 1), -1.0 - 0.1 * r * 3.0, 1e-15);
}

TEST(Standard, EqualsMeanOfPerSampleGradients) {
  Fixture f(2);
  const auto g = dt::library_grads(f.model, f.batch);
  const StepReport r = step_standard(f.model, f.batch, 0.1);
  for (std::size_t l = 0; l < f.spec.num_layers(); ++l)
    for (std::size_t q = 0; q < f.spec.trainable_size(l); ++q) {
      double mean = 0.0;
      for (std::size_t i = 0; i < f.batch.n(); ++i) mean += g.train[l][i][q];
      EXPECT_NEAR(r.update.layers[l][q], mean / double(f.batch.n()), 1e-12);
    }
  expect_legal(r);
}

TEST(Standard, EmptyBatchThrows) {
  Fixture f(3);
  Batch b = f.batch;
  b.train = SampleSet{};
  EXPECT_ANY_THROW(step_standard(f.model, b, 0.1));
}

TEST(TargetOnly, MatchesFiniteDifferences) {
  Fixture f(4, dt::dense_spec({3, 4, 2}, 2), 3, 1);
  const auto fd0 = dt::fd_grad(f.model, f.batch.target, 0, 0);
  const StepReport r = step_target_only(f.model, f.batch, 0.1);
  EXPECT_LT(dt::rel_err(r.update.layers[0], fd0), 1e-6);
  expect_legal(r);
}

TEST(TargetOnly, IdenticalBatchesMatchStandard) {
  Fixture f(5);
  Batch b = f.batch;
  b.target = b.train;
  Model a = f.model, c = f.model;
  step_target_only(a, b, 0.1);
  step_standard(c, b, 0.1);
  EXPECT_TRUE(bit_equal(a, c));
}

TEST(FullTraining, EveryScheduleRecoversStandardAtFullCardinality) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Fixture f(10 + seed);
    Model ref = f.model;
    step_standard(ref, f.batch, 0.05);
    for (const Partition& part : partitions(f.spec))
      for (RuleKind kind : {RuleKind::topk, RuleKind::greedy, RuleKind::bruteforce})
        for (Schedule sched : {Schedule::one_pass, Schedule::two_pass}) {
          Model m = f.model;
          StepConfig cfg = subset_cfg(part, kind, f.batch.n());
          cfg.schedule = sched;
          run_step(m, f.batch, cfg);
          EXPECT_TRUE(bit_equal(m, ref)) << part.describe() << " " << to_string(kind);
        }
    Model t = f.model;
    StepConfig thr = subset_cfg(Partition::layer_wise(f.spec), RuleKind::threshold, 0,
                                -std::numeric_limits<double>::infinity());
    run_step(t, f.batch, thr);
    EXPECT_TRUE(bit_equal(t, ref));
    Model ft = f.model;
    StepConfig full;
    full.lr = 0.05;
    full.spec.mode = UpdateMode::full_training;
    run_step(ft, f.batch, full);
    EXPECT_TRUE(bit_equal(ft, ref));
  }
}

TEST(OnePass, EqualsTwoPassForEveryRuleAndPartition) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Fixture f(20 + seed);
    for (const Partition& part : partitions(f.spec))
      for (RuleKind kind : {RuleKind::topk, RuleKind::threshold, RuleKind::greedy, RuleKind::bruteforce}) {
        StepConfig cfg = subset_cfg(part, kind, 3, 0.0);
        Model a = f.model, b = f.model;
        const StepReport one = run_step(a, f.batch, cfg);
        cfg.schedule = Schedule::two_pass;
        const StepReport two = run_step(b, f.batch, cfg);
        EXPECT_TRUE(bit_equal(a, b)) << part.describe() << " " << to_string(kind);
        EXPECT_GT(two.meter.flops, one.meter.flops);
        expect_legal(one);
        expect_legal(two);
      }
  }
}

TEST(OnePass, DegenerateSchedulesAgree) {
  Fixture f(30, dt::dense_spec({4, 3}, 2));
  const StepConfig cfg = subset_cfg(Partition::global(f.spec), RuleKind::topk, 2);
  Model a = f.model, b = f.model, c = f.model;
  step_global_onepass(a, f.batch, cfg);
  StepConfig lw = cfg;
  lw.spec.partition = Partition::layer_wise(f.spec);
  step_layerwise(b, f.batch, lw);
  step_groupwise(c, f.batch, cfg);
  EXPECT_TRUE(bit_equal(a, b));
  EXPECT_TRUE(bit_equal(a, c));
}

TEST(Assembly, GroupUpdatesAreSelectedMeans) {
  Fixture f(40);
  const auto g = dt::library_grads(f.model, f.batch);
  for (const Partition& part : partitions(f.spec)) {
    Model m = f.model;
    const StepReport r = run_step(m, f.batch, subset_cfg(part, RuleKind::topk, 2));
    ASSERT_EQ(r.groups.size(), part.size());
    for (std::size_t p = 0; p < part.size(); ++p) {
      const GroupGrads og = oracle_group(part, p, g, f.batch.n());
      const auto got = group_part(part, p, r.update.layers);
      const auto& sel = r.groups[p].selected;
      ASSERT_EQ(sel.size(), 2u);
      for (std::size_t q = 0; q < got.size(); ++q)
        EXPECT_NEAR(got[q], (og.samples[sel[0]][q] + og.samples[sel[1]][q]) / 2.0, 1e-12);
      std::vector<double> sc;
      for (const auto& s : og.samples) sc.push_back(dt::dotv(s, og.target));
      EXPECT_EQ(sel, select_topk(sc, 2)) << part.describe();
    }
  }
}

TEST(Optimality, BruteForceUpdateMinimizesResidualOverFeasibleSet) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Fixture f(50 + seed, mixed_spec(), 7, 2);
    const auto g = dt::library_grads(f.model, f.batch);
    for (const Partition& part : {Partition::global(f.spec), Partition::layer_wise(f.spec)}) {
      Model m = f.model;
      const StepReport r = run_step(m, f.batch, subset_cfg(part, RuleKind::bruteforce, 3));
      for (std::size_t p = 0; p < part.size(); ++p) {
        const GroupGrads og = oracle_group(part, p, g, f.batch.n());
        const auto u = group_part(part, p, r.update.layers);
        double res = 0.0;
        for (std::size_t q = 0; q < u.size(); ++q) res += (u[q] - og.target[q]) * (u[q] - og.target[q]);
        double best = std::numeric_limits<double>::infinity();
        for (std::uint32_t mask = 0; mask < (1u << 7); ++mask) {
          if (std::popcount(mask) != 3) continue;
          std::vector<std::size_t> s;
          for (std::size_t i = 0; i < 7; ++i)
            if (mask >> i & 1u) s.push_back(i);
          best = std::min(best, subset_objective(og, s, 3.0));
        }
        EXPECT_NEAR(res, best, 1e-10);
      }
    }
  }
}

TEST(GradAccum, MatchesWholeBatchThreshold) {
  Fixture f(60, mixed_spec(), 6, 2);
  StepConfig whole = subset_cfg(Partition::layer_wise(f.spec), RuleKind::threshold, 0, 0.0);
  Model ref = f.model;
  run_step(ref, f.batch, whole);
  for (std::size_t micro : {1, 2, 4, 6}) {
    StepConfig cfg = whole;
    cfg.micro_batch = micro;
    Model m = f.model;
    const StepReport r = step_grad_accum(m, f.batch, cfg);
    EXPECT_TRUE(bit_equal(m, ref)) << "micro=" << micro;
    expect_legal(r);
  }
}

TEST(GradAccum, UnboundedThresholdIsStandard) {
  Fixture f(61);
  StepConfig cfg = subset_cfg(Partition::global(f.spec), RuleKind::threshold, 0,
                              -std::numeric_limits<double>::infinity());
  cfg.micro_batch = 2;
  Model a = f.model, b = f.model;
  step_grad_accum(a, f.batch, cfg);
  step_standard(b, f.batch, cfg.lr);
  EXPECT_TRUE(bit_equal(a, b));
}

TEST(GradAccum, BatchGlobalRuleIsRejected) {
  Fixture f(62);
  StepConfig cfg = subset_cfg(Partition::global(f.spec), RuleKind::topk, 2);
  cfg.micro_batch = 2;
  try {
    step_grad_accum(f.model, f.batch, cfg);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("two_pass"), std::string::npos);
  }
}

TEST(Ledger, EveryStepKindIsLegal) {
  Fixture f(70);
  MesoState meso;
  expect_legal(step_standard(f.model, f.batch, 0.01));
  expect_legal(step_target_only(f.model, f.batch, 0.01));
  for (const Partition& part : partitions(f.spec)) expect_legal(run_step(f.model, f.batch, subset_cfg(part, RuleKind::topk, 2)));
  StepConfig m = subset_cfg(Partition::layer_wise(f.spec), RuleKind::topk, 2);
  m.optimizer = OptimizerKind::meso_adamw;
  m.meso.dims = {2, 2, 0};
  Fixture d(71, dt::dense_spec({4, 4, 3}, 2));
  MesoState st(d.spec, m.meso);
  expect_legal(run_step(d.model, d.batch, m, &st));
}

TEST(Ledger, SkippedSwapIsCaught) {
  Fixture f(72, dt::dense_spec({3, 4, 2}, 2));
  StepConfig cfg = subset_cfg(Partition::layer_wise(f.spec), RuleKind::topk, 2);
  cfg.fault = Fault::skip_swap;
  const StepReport r = run_step(f.model, f.batch, cfg);
  const auto v = check_legality(r.ledger.events, r.ledger.reads);
  ASSERT_TRUE(v.has_value());
  EXPECT_FALSE(v->describe().empty());
}

TEST(Meso, IdentityProjectorMatchesLayerWise) {
  Fixture f(80, dt::dense_spec({3, 4, 2}, 2));
  StepConfig cfg = subset_cfg(Partition::layer_wise(f.spec), RuleKind::topk, 3);
  Model a = f.model, b = f.model;
  const StepReport ref = step_layerwise(a, f.batch, cfg);
  cfg.meso.identity = true;
  MesoState st(f.spec, cfg.meso);
  const StepReport r = step_meso_layerwise(b, f.batch, cfg, st);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_EQ(r.groups[l].selected, ref.groups[l].selected);
    for (std::size_t q = 0; q < ref.update.layers[l].size(); ++q)
      EXPECT_NEAR(r.update.layers[l][q], ref.update.layers[l][q], 1e-10);
  }
}

TEST(Meso, RetainsCompressedGradientsOnly) {
  Fixture f(81, dt::dense_spec({16, 16, 16}, 4), 6, 2);
  StepConfig cfg = subset_cfg(Partition::layer_wise(f.spec), RuleKind::topk, 3);
  cfg.optimizer = OptimizerKind::meso_adamw;
  cfg.meso.dims = {2, 2, 0};
  MesoState st(f.spec, cfg.meso);
  const StepReport meso = step_meso_layerwise(f.model, f.batch, cfg, st);
  const auto cache_peak = [](const StepReport& r) {
    return replay(select_events(r.ledger.events, [](const LedgerEvent& e) { return is_cache_label(e.label); })).peak;
  };
  Fixture g(81, dt::dense_spec({16, 16, 16}, 4), 6, 2);
  const StepReport lw = step_layerwise(g.model, g.batch, subset_cfg(Partition::layer_wise(g.spec), RuleKind::topk, 3));
  EXPECT_EQ(cache_peak(meso), cache_peak(lw));
  EXPECT_LT(replay(meso.ledger.events).peak, replay(lw.ledger.events).peak);
  expect_legal(meso);
}

TEST(Meso, CompressedMeanIsCompressionOfMean) {
  Fixture f(82, dt::dense_spec({4, 5, 3}, 2));
  const auto g = dt::library_grads(f.model, f.batch);
  StepConfig cfg = subset_cfg(Partition::layer_wise(f.spec), RuleKind::topk, 2);
  cfg.meso.dims = {2, 3, 0};
  MesoState st(f.spec, cfg.meso);
  Model m = f.model;
  const StepReport r = step_meso_layerwise(m, f.batch, cfg, st);
  for (std::size_t l = 0; l < 2; ++l) {
    const auto& sel = r.groups[l].selected;
    const LayerSpec& ls = f.spec.layers[l];
    Tensor mean(ls.w_out, ls.w_in);
    for (std::size_t q = 0; q < mean.size(); ++q)
      mean.storage()[q] = (g.train[l][sel[0]][q] + g.train[l][sel[1]][q]) / 2.0;
    const auto want = project_matrix(st.projector(l), mean);
    const Tensor back = project_back(st.projector(l), want);
    for (std::size_t q = 0; q < mean.size(); ++q) EXPECT_NEAR(r.update.layers[l][q], back.data()[q], 1e-10);
  }
}
