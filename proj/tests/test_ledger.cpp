// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "datareg/errors.hpp"
#include "datareg/ledger.hpp"
#include "datareg/scheduler.hpp"
#include "datareg/updates.hpp"
#include "support.hpp"

using namespace datareg;

namespace {

LedgerEvent ev(std::uint64_t seq, EventKind k, TensorId id, std::int64_t entries, std::string phase = "p") {
  return {seq, k, id, entries, std::move(phase), {}};
}

StepConfig subset_cfg(const ModelSpec& spec, Partition part, std::size_t k) {
  StepConfig cfg;
  cfg.spec.partition = std::move(part);
  cfg.spec.rule.kind = RuleKind::topk;
  cfg.spec.rule.k = k;
  (void)spec;
  return cfg;
}

std::int64_t backward_occupancy(const Profile& p, std::size_t layers) {
  std::int64_t s = 0;
  for (std::size_t l = 0; l < layers; ++l) s += p.phase_max.at("backward:" + std::to_string(l));
  return s;
}

}  // namespace

TEST(Replay, AllocRelease) {
  const std::vector<LedgerEvent> e{ev(1, EventKind::alloc, 1, 6), ev(2, EventKind::release, 1, 6)};
  const Profile p = replay(e);
  EXPECT_EQ(p.peak, 6);
  EXPECT_EQ(p.final_live, 0);
  ASSERT_EQ(p.series.size(), 2u);
}

TEST(Replay, PeakIsMaxPrefixSum) {
  const std::vector<LedgerEvent> e{ev(1, EventKind::alloc, 1, 4), ev(2, EventKind::alloc, 2, 3),
                                   ev(3, EventKind::release, 1, 4), ev(4, EventKind::alloc, 3, 2),
                                   ev(5, EventKind::release, 2, 3), ev(6, EventKind::release, 3, 2)};
  std::int64_t live = 0, peak = 0;
  for (const auto& x : e) {
    live += x.kind == EventKind::alloc ? x.entries : -x.entries;
    peak = std::max(peak, live);
  }
  EXPECT_EQ(replay(e).peak, peak);
}

TEST(Replay, IllegalStreamsThrow) {
  EXPECT_THROW(replay(std::vector<LedgerEvent>{ev(1, EventKind::release, 1, 2)}), LifetimeError);
  EXPECT_THROW(replay(std::vector<LedgerEvent>{ev(1, EventKind::alloc, 1, 2), ev(2, EventKind::release, 1, 2),
                                               ev(3, EventKind::release, 1, 2)}),
               LifetimeError);
  EXPECT_THROW(replay(std::vector<LedgerEvent>{ev(2, EventKind::alloc, 1, 2), ev(2, EventKind::alloc, 2, 2)}),
               LifetimeError);
  EXPECT_THROW(replay(std::vector<LedgerEvent>{ev(1, EventKind::alloc, 1, 2), ev(2, EventKind::release, 1, 3)}),
               LifetimeError);
}

TEST(Replay, PureFunction) {
  Rng rng(1);
  const ModelSpec spec = dt::dense_spec({3, 3, 3}, 2);
  Model model(spec, rng);
  const Batch b = dt::random_batch(spec, 3, 1, rng);
  const StepReport r = step_standard(model, b, 0.1);
  const Profile p1 = replay(r.ledger.events), p2 = replay(r.ledger.events);
  EXPECT_EQ(p1.peak, p2.peak);
  EXPECT_EQ(p1.phase_max, p2.phase_max);
  ASSERT_EQ(p1.series.size(), p2.series.size());
}

// Hand enumeration at n=2, T=2, L=2, w=2: the forward pass holds a and e for
// both layers (4 tensors of 2x4), then u (8 entries) and the propagated
// activation gradient (2x4) join.
TEST(Replay, StandardTraceSmallCase) {
  Rng rng(3);
  const ModelSpec spec = dt::dense_spec({2, 2, 2}, 2);
  Model model(spec, rng);
  const Batch b = dt::random_batch(spec, 2, 1, rng);
  const StepReport r = step_standard(model, b, 0.1);
  const std::int64_t forward = 4 * (2 * 4);
  const std::int64_t u = 8, carry = 2 * 4;
  EXPECT_EQ(live_after_phase(r.ledger.events, "forward"), forward);
  EXPECT_EQ(replay(r.ledger.events).peak, forward + u + carry);
  EXPECT_EQ(replay(r.ledger.events).final_live, 0);
  EXPECT_TRUE(unreleased(r.ledger.events).empty());
}

TEST(Legality, StandardTraceIsLegal) {
  Rng rng(4);
  const ModelSpec spec = dt::dense_spec({3, 4, 3}, 2);
  Model model(spec, rng);
  const Batch b = dt::random_batch(spec, 3, 2, rng);
  const StepReport r = step_standard(model, b, 0.1);
  EXPECT_FALSE(check_legality(r.ledger.events, r.ledger.reads).has_value());
}

TEST(Legality, ReadAfterReleaseIsReported) {
  const std::vector<LedgerEvent> e{ev(1, EventKind::alloc, 7, 4), ev(2, EventKind::release, 7, 4)};
  const std::vector<Dependency> reads{{3, "backward:1", 7}};
  const auto v = check_legality(e, reads);
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ(v->consumer, "backward:1");
  EXPECT_EQ(v->id, 7u);
  EXPECT_FALSE(v->describe().empty());
}

TEST(Legality, GlobalOnePassTraceIsLegal) {
  Rng rng(5);
  const ModelSpec spec = dt::dense_spec({3, 4, 4, 3}, 2);
  Model model(spec, rng);
  const Batch b = dt::random_batch(spec, 4, 2, rng);
  const StepReport r = step_global_onepass(model, b, subset_cfg(spec, Partition::global(spec), 2));
  EXPECT_FALSE(check_legality(r.ledger.events, r.ledger.reads).has_value());
  EXPECT_TRUE(unreleased(r.ledger.events).empty());
}

TEST(Ledger, SwapIsEntryNeutral) {
  Rng rng(6);
  const ModelSpec spec = dt::dense_spec({3, 4, 4, 2}, 3);
  Model model(spec, rng);
  const Batch b = dt::random_batch(spec, 3, 2, rng);
  ExecContext ctx;
  ForwardResult fwd = forward(model, b, ctx);
  Backward bw(model, b, fwd, ctx);
  // The carry buffers are allocated up front and released by the last step.
  const std::int64_t carry = 4 * (3 + 2) * 3;
  for (std::size_t l = 3; l-- > 0;) {
    const auto before = ctx.meter().live();
    bw.step(l);
    EXPECT_EQ(ctx.meter().live(), before - (l == 0 ? carry : 0)) << "layer " << l;
  }
}

TEST(Ledger, PhasesFollowSchedule) {
  Rng rng(7);
  const ModelSpec spec = dt::dense_spec({3, 3, 3}, 2);
  Model model(spec, rng);
  const Batch b = dt::random_batch(spec, 3, 1, rng);
  const StepReport r = step_layerwise(model, b, subset_cfg(spec, Partition::layer_wise(spec), 2));
  std::set<std::string> phases;
  for (const auto& e : r.ledger.events) phases.insert(e.phase);
  for (const char* p : {"forward", "backward:1", "backward:0", "scoring:1", "scoring:0", "assembly:1", "assembly:0",
                        "optimizer"}) {
    EXPECT_TRUE(phases.count(p)) << p;
  }
}

TEST(Ledger, PostHocAndInterleavedPeaksAgree) {
  Rng rng(8);
  const ModelSpec spec = dt::dense_spec({4, 4, 4, 4, 4}, 2);
  Model m1(spec, rng);
  Model m2 = m1;
  const Batch b = dt::random_batch(spec, 4, 2, rng);
  const StepReport glob = step_global_onepass(m1, b, subset_cfg(spec, Partition::global(spec), 2));
  const StepReport lw = step_layerwise(m2, b, subset_cfg(spec, Partition::layer_wise(spec), 2));
  const Profile pg = replay(glob.ledger.events), pl = replay(lw.ledger.events);
  // The retained pairs peak identically, with every pair live at the top of
  // the backward sweep; the totals differ only by u, the carry buffer and
  // the scoring workspace.
  const auto caches = [](const LedgerEvent& e) { return is_cache_label(e.label); };
  const std::int64_t pairs = 2 * 6 * 2 * 4 * 4;
  EXPECT_EQ(replay(select_events(glob.ledger.events, caches)).peak, pairs);
  EXPECT_EQ(replay(select_events(lw.ledger.events, caches)).peak, pairs);
  const std::int64_t bookkeeping = 64 + 4 * 6 * 2 + 5 * 16;
  EXPECT_LE(std::abs(pg.peak - pl.peak), bookkeeping);
  EXPECT_GT(backward_occupancy(pg, 4), backward_occupancy(pl, 4));
}

TEST(Ledger, TraceCsvHasHeader) {
  std::ostringstream os;
  const std::vector<LedgerEvent> e{ev(1, EventKind::alloc, 1, 6, "forward"), ev(2, EventKind::release, 1, 6)};
  write_trace_csv(os, e);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "seq,kind,id,entries,phase");
  std::ostringstream ps;
  write_profile_csv(ps, replay(e));
  EXPECT_EQ(ps.str().substr(0, ps.str().find('\n')), "seq,live");
}

TEST(Checkpoint, LayerWiseAlwaysOnePass) {
  const ModelSpec spec = dt::dense_spec({3, 3, 3, 3, 3}, 1);
  for (std::size_t per : {1, 2, 3, 4}) {
    EXPECT_EQ(plan_under_checkpointing(Partition::layer_wise(spec), SegmentPlan::uniform(4, per)).schedule,
              Schedule::one_pass);
  }
}

TEST(Checkpoint, GlobalAcrossSegmentsNeedsTwoPass) {
  const ModelSpec spec = dt::dense_spec({3, 3, 3, 3, 3}, 1);
  const PlanDecision d = plan_under_checkpointing(Partition::global(spec), SegmentPlan::uniform(4, 2));
  EXPECT_EQ(d.schedule, Schedule::two_pass);
  EXPECT_FALSE(d.rationale.empty());
  EXPECT_EQ(plan_under_checkpointing(Partition::global(spec), SegmentPlan::uniform(4, 4)).schedule,
            Schedule::one_pass);
}

TEST(Checkpoint, AlignedBlocksStayOnePass) {
  const ModelSpec spec = dt::dense_spec({3, 3, 3, 3, 3}, 1);
  EXPECT_EQ(plan_under_checkpointing(Partition::blocks(spec, 2), SegmentPlan::uniform(4, 2)).schedule,
            Schedule::one_pass);
  EXPECT_THROW(SegmentPlan({{{0, 2}, {3, 4}}}).validate(4), ConfigError);
}

TEST(Checkpoint, ModeledLayerWisePeakBelowGlobal) {
  const ModelSpec spec = dt::dense_spec({8, 8, 8, 8, 8, 8, 8}, 4);
  const SegmentPlan plan = SegmentPlan::uniform(6, 2);
  const auto lw = model_checkpointed_trace(spec, 8, 1, plan, TraceKind::layerwise);
  const auto gl = model_checkpointed_trace(spec, 8, 1, plan, TraceKind::global_onepass);
  EXPECT_LT(replay(lw.events).peak, replay(gl.events).peak);
  EXPECT_EQ(replay(lw.events).final_live, 0);
  EXPECT_EQ(replay(gl.events).final_live, 0);
}

TEST(Checkpoint, RunStepSwitchesToTwoPass) {
  Rng rng(9);
  const ModelSpec spec = dt::dense_spec({3, 3, 3, 3, 3}, 2);
  Model a(spec, rng);
  Model b = a;
  const Batch batch = dt::random_batch(spec, 4, 2, rng);
  StepConfig cfg = subset_cfg(spec, Partition::global(spec), 2);
  cfg.checkpoint = SegmentPlan::uniform(4, 2);
  const StepReport r = run_step(a, batch, cfg);
  EXPECT_EQ(r.schedule, Schedule::two_pass);
  EXPECT_FALSE(r.schedule_note.empty());
  cfg.checkpoint.reset();
  run_step(b, batch, cfg);
  EXPECT_TRUE(bit_equal(a, b));
}
