// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include "datareg_app/verify.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "datareg/analysis.hpp"
#include "datareg/biasvar.hpp"
#include "datareg/errors.hpp"
#include "datareg/ledger.hpp"
#include "datareg/scheduler.hpp"
#include "datareg/scoring.hpp"
#include "datareg/stats.hpp"
#include "datareg/task.hpp"
#include "kernels.hpp"
#include "oracle.hpp"

namespace datareg::app {

namespace {

using oracle::Mat;
using oracle::Vec;

std::ostringstream stream() {
  std::ostringstream os;
  os << std::setprecision(4);
  return os;
}

ModelSpec dense_spec(std::vector<std::size_t> widths, std::size_t tokens, Activation act = Activation::tanh) {
  ModelSpec s;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) s.layers.push_back({LayerKind::dense, widths[l], widths[l + 1], 0});
  s.activation = act;
  s.tokens = tokens;
  return s;
}

ModelSpec mixed_spec() {
  ModelSpec s;
  s.layers = {{LayerKind::dense, 3, 4, 0}, {LayerKind::lora, 4, 4, 2}, {LayerKind::dense, 4, 2, 0}};
  s.tokens = 2;
  return s;
}

ModelSpec embedding_spec() {
  ModelSpec s;
  s.layers = {{LayerKind::embedding, 10, 4, 0}, {LayerKind::lora, 4, 5, 2}, {LayerKind::dense, 5, 3, 0}};
  s.loss = LossKind::softmax_xent;
  s.tokens = 3;
  return s;
}

// A random architecture from one of three families: plain dense, dense with
// LoRA layers, or a token-input model with an embedding table.
ModelSpec random_spec(Rng& rng) {
  ModelSpec s;
  const std::uint64_t family = rng.below(3);
  const auto width = [&] { return std::size_t(2 + rng.below(6)); };
  std::size_t in = width();
  const std::size_t depth = 2 + rng.below(3);
  std::size_t start = 0;
  if (family == 2) {
    const std::size_t w = width();
    s.layers.push_back({LayerKind::embedding, 4 + rng.below(8), w, 0});
    in = w;
    start = 1;
  }
  for (std::size_t l = start; l < depth; ++l) {
    const std::size_t out = width();
    const bool lora = (family == 1 && l == 0) || (family != 0 && rng.below(3) == 0);
    const std::size_t rank = lora ? 1 + rng.below(std::min(in, out) - 1) : 0;
    s.layers.push_back({lora ? LayerKind::lora : LayerKind::dense, in, out, rank});
    in = out;
  }
  const Activation acts[3] = {Activation::identity, Activation::tanh, Activation::relu};
  s.activation = acts[rng.below(3)];
  s.loss = rng.below(2) ? LossKind::softmax_xent : LossKind::squared;
  s.tokens = 1 + rng.below(4);
  return s;
}

Partition intra_layer_split(const ModelSpec& spec) {
  std::vector<std::vector<Span>> g(2);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t d = spec.trainable_size(l), h = d / 2;
    g[l % 2].push_back({l, 0, h});
    g[(l + 1) % 2].push_back({l, h, d});
  }
  return Partition(g);
}

struct NamedPartition {
  std::string name;
  Partition part;
};

std::vector<NamedPartition> partitions(const ModelSpec& spec) {
  return {{"global", Partition::global(spec)},
          {"layer_wise", Partition::layer_wise(spec)},
          {"blocks2", Partition::blocks(spec, 2)},
          {"intra_split", intra_layer_split(spec)}};
}

struct Instance {
  std::string name;
  Model model;
  Batch batch;
};

std::vector<Instance> equivalence_instances(std::uint64_t seed, std::size_t n, std::size_t m) {
  std::vector<Instance> out;
  const std::pair<std::string, ModelSpec> specs[] = {
      {"dense", dense_spec({4, 6, 5, 3}, 1)}, {"lora", mixed_spec()}, {"embedding", embedding_spec()}};
  for (const auto& [name, spec] : specs) {
    Rng rng(seed + out.size());
    Model model(spec, rng, {1.0, 0.5});
    Batch batch = oracle::random_batch(spec, n, m, rng);
    out.push_back({name, std::move(model), std::move(batch)});
  }
  return out;
}

StepConfig subset_cfg(const Partition& part, RuleKind kind, std::size_t k, double threshold = 0.0) {
  StepConfig cfg;
  cfg.lr = 0.05;
  cfg.spec.partition = part;
  cfg.spec.rule.kind = kind;
  cfg.spec.rule.k = k;
  cfg.spec.rule.threshold = threshold;
  return cfg;
}

// ---------------------------------------------------------------------------

CheckResult scoring_equivalence(const VerifyOptions& opts) {
  CheckResult res;
  Rng rng(opts.seed + 11);
  std::size_t instances = 0, compared = 0, embedding = 0, lora = 0;
  double worst = 0.0;
  for (; instances < 120; ++instances) {
    const ModelSpec spec = random_spec(rng);
    const Model model(spec, rng, {1.0, 0.5});
    const Batch batch = oracle::random_batch(spec, 1 + rng.below(8), 1 + rng.below(4), rng);
    for (const LayerSpec& ls : spec.layers) {
      embedding += ls.kind == LayerKind::embedding;
      lora += ls.kind == LayerKind::lora;
    }
    ExecContext ctx;
    ForwardResult fwd = forward(model, batch, ctx);
    Backward bw(model, batch, fwd, ctx);
    for (std::size_t l = spec.num_layers(); l-- > 0;) {
      bw.step(l);
      const auto d = score_cache(ScoreMethod::direct, model, fwd.caches[l], ctx);
      const auto g = score_cache(ScoreMethod::gip, model, fwd.caches[l], ctx);
      const auto p = score_cache(ScoreMethod::pip, model, fwd.caches[l], ctx);
      worst = std::max({worst, oracle::max_abs_diff(g, d), oracle::max_abs_diff(p, d), oracle::max_abs_diff(g, p)});
      compared += d.size();
    }
  }
  res.pass = worst <= 1e-9 && embedding > 0 && lora > 0;
  auto os = stream();
  os << instances << " instances (" << lora << " lora, " << embedding << " embedding layers), " << compared
     << " layer scores, max |diff| " << worst << " (tol 1e-9)";
  res.detail = os.str();
  return res;
}

CheckResult cost_exactness(const VerifyOptions& opts) {
  CheckResult res;
  using U = std::uint64_t;
  const std::array<std::array<std::size_t, 4>, 20> grid = {{{2, 1, 1, 4},  {2, 1, 4, 4},  {4, 2, 2, 8},  {8, 1, 1, 8},
                                                            {8, 1, 8, 8},  {8, 4, 4, 8},  {1, 1, 3, 5},  {3, 2, 5, 6},
                                                            {16, 1, 2, 4}, {4, 4, 16, 4}, {2, 3, 1, 16}, {8, 2, 4, 16},
                                                            {8, 1, 32, 16}, {5, 5, 7, 12}, {6, 1, 2, 24}, {4, 2, 12, 24},
                                                            {8, 1, 1, 32}, {2, 2, 16, 32}, {8, 8, 8, 32}, {3, 1, 64, 8}}};
  Rng rng(opts.seed + 22);
  std::size_t mismatches = 0;
  std::string first;
  for (const auto& [n, m, t, w] : grid) {
    const U N = n + m;
    const U flops[3] = {2 * N * t * w * w + n * (w * w - 1), 4 * U(n) * m * t * t * w, 2 * N * t * w * w + n * (t * w - 1)};
    const U mem[3] = {(n + 1) * U(w) * w, 2 * U(n) * m * t * t, U(w) * w + U(n) * t * w};
    const ScoreMethod methods[3] = {ScoreMethod::direct, ScoreMethod::gip, ScoreMethod::pip};
    const Factors f(n, m, t, w, rng);
    for (int k = 0; k < 3; ++k) {
      const KernelRun r = run_kernel(methods[k], f, t);
      if (r.flops != flops[k] || U(r.workspace) != mem[k]) {
        ++mismatches;
        if (first.empty()) {
          auto os = stream();
          os << to_string(methods[k]) << " at (n,m,T,w)=(" << n << "," << m << "," << t << "," << w << "): flops "
             << r.flops << " vs " << flops[k] << ", memory " << r.workspace << " vs " << mem[k];
          first = os.str();
        }
      }
    }
    const ProjectorDims dims = (n + t) % 2 ? ProjectorDims{4, 4, 8} : ProjectorDims{4, 4, 0};
    const Projector proj = Projector::gaussian(w, w, dims, opts.seed + n * 31 + t, 0, 0);
    const KernelRun c = run_kernel(ScoreMethod::compressed, f, t, &proj);
    if (U(c.stored) != (n + 1) * U(dims.kappa())) {
      ++mismatches;
      if (first.empty()) first = "compressed memory " + std::to_string(c.stored);
    }
  }
  res.pass = mismatches == 0;
  res.detail = std::to_string(grid.size()) + " cells x 4 methods, " + std::to_string(mismatches) + " mismatches" +
               (first.empty() ? "" : "; first: " + first);
  return res;
}

CheckResult crossovers(const VerifyOptions& opts) {
  CheckResult res;
  Rng rng(opts.seed + 33);
  const std::size_t n = 8;
  auto os = stream();
  bool ok = true;
  // GIP against Direct on a doubling token grid.
  for (std::size_t w : {16, 32, 64})
    for (std::size_t m : {1, 2}) {
      std::size_t flip = 0;
      for (std::size_t t = 1; t <= 4 * w && !flip; t *= 2) {
        const Factors f(n, m, t, w, rng);
        if (run_kernel(ScoreMethod::gip, f, t).flops > run_kernel(ScoreMethod::direct, f, t).flops) flip = m * t;
      }
      const double steps = flip ? std::abs(std::log2(double(flip) / (double(w) / 2))) : 99.0;
      ok = ok && steps <= 1.0;
      os << "gip/direct w=" << w << " m=" << m << ": flip at mT=" << flip << "; ";
    }
  // PIP against Direct on a unit token grid.
  for (std::size_t w : {8, 16, 32}) {
    std::size_t flip = 0;
    for (std::size_t t = 1; t <= 2 * w && !flip; ++t) {
      const Factors f(n, 1, t, w, rng);
      if (run_kernel(ScoreMethod::pip, f, t).flops >= run_kernel(ScoreMethod::direct, f, t).flops) flip = t;
    }
    const bool near = flip && (flip + 1 >= w && flip <= w + 1);
    ok = ok && near;
    os << "pip/direct w=" << w << ": flip at T=" << flip << "; ";
  }
  res.pass = ok;
  res.detail = os.str();
  return res;
}

CheckResult update_equivalence(const VerifyOptions& opts) {
  CheckResult res;
  const std::size_t n = 6, m = 2;
  std::size_t checked = 0, failed = 0;
  std::string first;
  const auto note = [&](bool ok, const std::string& what) {
    ++checked;
    if (!ok) {
      ++failed;
      if (first.empty()) first = what;
    }
  };
  for (std::uint64_t s = 0; s < 3; ++s)
    for (const Instance& inst : equivalence_instances(opts.seed + 100 * s, n, m)) {
      const ModelSpec& spec = inst.model.spec();
      Model ref = inst.model;
      step_standard(ref, inst.batch, 0.05);
      // (a) full cardinality is standard training.
      for (const auto& [pname, part] : partitions(spec))
        for (RuleKind kind : {RuleKind::topk, RuleKind::greedy, RuleKind::bruteforce}) {
          Model x = inst.model;
          run_step(x, inst.batch, subset_cfg(part, kind, n));
          note(bit_equal(x, ref), "k=n " + inst.name + "/" + pname + "/" + to_string(kind));
        }
      // (b) one pass equals two passes.
      for (const auto& [pname, part] : partitions(spec))
        for (RuleKind kind : {RuleKind::topk, RuleKind::threshold, RuleKind::greedy, RuleKind::bruteforce}) {
          StepConfig cfg = subset_cfg(part, kind, 3, 0.0);
          Model one = inst.model, two = inst.model;
          run_step(one, inst.batch, cfg);
          cfg.schedule = Schedule::two_pass;
          run_step(two, inst.batch, cfg);
          note(bit_equal(one, two), "one/two pass " + inst.name + "/" + pname + "/" + to_string(kind));
        }
      // (c) accumulated thresholding equals whole-batch thresholding.
      for (const auto& [pname, part] : partitions(spec))
        for (double thr : {-std::numeric_limits<double>::infinity(), 0.0, 1e-3})
          for (std::size_t micro : {1, 2, 4, 6}) {
            StepConfig cfg = subset_cfg(part, RuleKind::threshold, 1, thr);
            Model whole = inst.model, acc = inst.model;
            run_step(whole, inst.batch, cfg);
            cfg.schedule = Schedule::grad_accum;
            cfg.micro_batch = micro;
            run_step(acc, inst.batch, cfg);
            note(bit_equal(whole, acc), "grad_accum " + inst.name + "/" + pname + " micro=" + std::to_string(micro));
          }
    }
  res.pass = failed == 0;
  res.detail = std::to_string(checked) + " bitwise comparisons, " + std::to_string(failed) + " differ" +
               (first.empty() ? "" : "; first: " + first);
  return res;
}

// Group restriction of a per-layer vector set, flattened in span order.
Vec group_part(const Partition& part, std::size_t p, const std::vector<Vec>& layers) {
  Vec out;
  for (const Span& s : part.group(p))
    for (std::size_t q = s.begin; q < s.end; ++q) out.push_back(layers[s.layer][q]);
  return out;
}

// min over the product of per-group k-subsets of ||u - target||^2, by visiting
// every element of the product set.
double enumerate_optimum(const Partition& part, const oracle::Grads& g, std::size_t n, std::size_t k) {
  std::vector<std::uint32_t> masks;
  for (std::uint32_t s = 0; s < (1u << n); ++s)
    if (std::size_t(std::popcount(s)) == k) masks.push_back(s);
  std::vector<Vec> table(part.size());
  for (std::size_t p = 0; p < part.size(); ++p) {
    const Vec t = group_part(part, p, g.target_mean);
    std::vector<Vec> samples;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<Vec> layers(g.train.size());
      for (std::size_t l = 0; l < layers.size(); ++l) layers[l] = g.train[l][i];
      samples.push_back(group_part(part, p, layers));
    }
    for (std::uint32_t s : masks) {
      Vec mean(t.size(), 0.0);
      for (std::size_t i = 0; i < n; ++i)
        if (s >> i & 1u)
          for (std::size_t q = 0; q < t.size(); ++q) mean[q] += samples[i][q];
      for (double& v : mean) v /= double(k);
      table[p].push_back(oracle::sqdist(mean, t));
    }
  }
  std::vector<std::size_t> digit(part.size(), 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    double total = 0.0;
    for (std::size_t p = 0; p < part.size(); ++p) total += table[p][digit[p]];
    best = std::min(best, total);
    std::size_t p = 0;
    while (p < digit.size() && ++digit[p] == masks.size()) digit[p++] = 0;
    if (p == digit.size()) break;
  }
  return best;
}

CheckResult projection_optimality(const VerifyOptions& opts) {
  CheckResult res;
  const ModelSpec spec = mixed_spec();
  std::size_t instances = 0, not_optimal = 0, gw_above_global = 0, global_above_full = 0;
  double worst_gap = 0.0;
  for (std::uint64_t s = 0; s < 30; ++s) {
    const std::size_t n = 4 + s % 5, k = 1 + s % (n - 1);
    Rng rng(opts.seed + 500 + s);
    const Model model(spec, rng, {1.0, 0.5});
    const Batch batch = oracle::random_batch(spec, n, 2, rng);
    const oracle::Grads g = oracle::library_grads(model, batch);
    double opt_global = 0.0, opt_layer = 0.0;
    for (const auto& [pname, part] : partitions(spec)) {
      Model x = model;
      const StepReport r = run_step(x, batch, subset_cfg(part, RuleKind::bruteforce, k));
      double chosen = 0.0;
      for (std::size_t l = 0; l < spec.num_layers(); ++l) chosen += oracle::sqdist(r.update.layers[l], g.target_mean[l]);
      const double best = enumerate_optimum(part, g, n, k);
      const double gap = std::abs(chosen - best) / std::max(1.0, best);
      worst_gap = std::max(worst_gap, gap);
      not_optimal += gap > 1e-10;
      if (pname == "global") opt_global = best;
      if (pname == "layer_wise") opt_layer = best;
    }
    std::vector<Vec> mean_all(spec.num_layers());
    double full = 0.0;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
      mean_all[l].assign(spec.trainable_size(l), 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t q = 0; q < mean_all[l].size(); ++q) mean_all[l][q] += g.train[l][i][q] / double(n);
      full += oracle::sqdist(mean_all[l], g.target_mean[l]);
    }
    gw_above_global += opt_layer > opt_global * (1 + 1e-12);
    global_above_full += opt_global > full * (1 + 1e-12);
    ++instances;
  }
  res.pass = not_optimal == 0 && gw_above_global == 0 && global_above_full == 0;
  auto os = stream();
  os << instances << " instances x 4 partitions: " << not_optimal << " non-optimal selections (max rel gap "
     << worst_gap << "); group-wise > global in " << gw_above_global << ", global > full-training in "
     << global_above_full;
  res.detail = os.str();
  return res;
}

CheckResult gradient_check(const VerifyOptions& opts) {
  CheckResult res;
  std::vector<std::pair<std::string, ModelSpec>> specs = {
      {"dense/tanh", dense_spec({3, 5, 4, 2}, 2)},
      {"dense/relu", dense_spec({3, 5, 4, 2}, 2, Activation::relu)},
      {"dense/identity", dense_spec({4, 3, 3}, 1, Activation::identity)},
      {"lora", mixed_spec()},
      {"embedding/softmax", embedding_spec()}};
  ModelSpec emb_sq = embedding_spec();
  emb_sq.loss = LossKind::squared;
  specs.push_back({"embedding/squared", emb_sq});
  ModelSpec dense_sm = dense_spec({3, 6, 4}, 3);
  dense_sm.loss = LossKind::softmax_xent;
  specs.push_back({"dense/softmax", dense_sm});
  double worst = 0.0;
  std::string worst_name;
  std::size_t grads = 0;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const auto& [name, spec] = specs[s];
    Rng rng(opts.seed + 700 + s);
    const Model model(spec, rng, {1.0, 0.5});
    const Batch batch = oracle::random_batch(spec, 4, 2, rng);
    ExecContext ctx;
    ForwardResult fwd = forward(model, batch, ctx);
    Backward bw(model, batch, fwd, ctx);
    for (std::size_t l = spec.num_layers(); l-- > 0;) {
      bw.step(l);
      const LayerCache& c = fwd.caches[l];
      for (int side = 0; side < 2; ++side) {
        const SampleSet& set = side ? batch.target : batch.train;
        const Segment& seg = side ? c.target : c.train;
        for (std::size_t i = 0; i < set.count; ++i) {
          const double e = oracle::rel_err(per_sample_grad(model, c, seg, i), oracle::fd_grad(model, set, i, l));
          ++grads;
          if (e > worst) {
            worst = e;
            worst_name = name;
          }
        }
      }
    }
  }
  res.pass = worst < 1e-5;
  auto os = stream();
  os << grads << " per-sample layer gradients over " << specs.size() << " models, max rel err " << worst << " ("
     << worst_name << ", tol 1e-5)";
  res.detail = os.str();
  return res;
}

struct KindRun {
  std::string kind;
  StepReport report;
};

std::vector<KindRun> every_step_kind(std::uint64_t seed, Fault fault) {
  const ModelSpec spec = mixed_spec();
  Rng rng(seed + 900);
  const Model base(spec, rng, {1.0, 0.5});
  const Batch batch = oracle::random_batch(spec, 6, 2, rng);
  std::vector<KindRun> out;
  const auto go = [&](const std::string& kind, StepConfig cfg) {
    cfg.fault = fault;
    Model x = base;
    MesoState state;
    if (cfg.optimizer == OptimizerKind::meso_adamw) state = MesoState(spec, cfg.meso);
    out.push_back({kind, run_step(x, batch, cfg, &state)});
  };
  StepConfig std_cfg;
  std_cfg.spec.mode = UpdateMode::full_training;
  go("standard", std_cfg);
  StepConfig tgt_cfg;
  tgt_cfg.spec.mode = UpdateMode::target_only;
  go("target_only", tgt_cfg);
  go("global_onepass", subset_cfg(Partition::global(spec), RuleKind::topk, 3));
  go("layerwise", subset_cfg(Partition::layer_wise(spec), RuleKind::topk, 3));
  go("groupwise", subset_cfg(intra_layer_split(spec), RuleKind::threshold, 1, 0.0));
  StepConfig two = subset_cfg(Partition::blocks(spec, 2), RuleKind::greedy, 2);
  two.schedule = Schedule::two_pass;
  go("twopass", two);
  StepConfig acc = subset_cfg(Partition::layer_wise(spec), RuleKind::threshold, 1, 0.0);
  acc.schedule = Schedule::grad_accum;
  acc.micro_batch = 2;
  go("grad_accum", acc);
  StepConfig ck = subset_cfg(Partition::global(spec), RuleKind::bruteforce, 2);
  ck.checkpoint = SegmentPlan::uniform(spec.num_layers(), 1);
  go("checkpointed_global", ck);
  StepConfig lw_scored = subset_cfg(Partition::layer_wise(spec), RuleKind::topk, 2);
  lw_scored.method = ScoreMethod::gip;
  go("layerwise_gip", lw_scored);
  // The compressed optimizer runs on dense layers only.
  const ModelSpec dense = dense_spec({3, 4, 4, 2}, 2);
  Rng drng(seed + 901);
  Model dm(dense, drng);
  const Batch db = oracle::random_batch(dense, 6, 2, drng);
  StepConfig meso = subset_cfg(Partition::layer_wise(dense), RuleKind::topk, 3);
  meso.optimizer = OptimizerKind::meso_adamw;
  meso.meso.dims = {2, 2, 0};
  meso.fault = fault;
  MesoState state(dense, meso.meso);
  out.push_back({"meso", run_step(dm, db, meso, &state)});
  return out;
}

std::int64_t cache_live_before(const std::vector<LedgerEvent>& events, const std::string& phase) {
  return live_before_phase(select_events(events, [](const LedgerEvent& e) { return is_cache_label(e.label); }), phase);
}

CheckResult ledger_checks(const VerifyOptions& opts) {
  CheckResult res;
  auto os = stream();
  bool ok = true;
  // (a) every step kind replays legally and frees everything it allocates.
  std::size_t illegal = 0;
  for (const KindRun& k : every_step_kind(opts.seed, opts.fault)) {
    const auto v = check_legality(k.report.ledger.events, k.report.ledger.reads);
    const Profile prof = replay(k.report.ledger.events);
    if (v || prof.final_live != 0) {
      ++illegal;
      os << k.kind << ": " << (v ? v->describe() : "leaks " + std::to_string(prof.final_live) + " entries") << "; ";
    }
  }
  ok = ok && illegal == 0;
  os << "(a) " << illegal << " illegal step kinds; ";
  // (b) occupancy while walking backward.
  struct Shape {
    std::size_t w, layers, t, n, m;
  };
  for (const Shape& sh : {Shape{8, 4, 4, 8, 1}, Shape{6, 3, 2, 5, 2}}) {
    const ModelSpec spec = dense_spec(std::vector<std::size_t>(sh.layers + 1, sh.w), sh.t);
    Rng rng(opts.seed + 950);
    const Model base(spec, rng);
    const Batch batch = oracle::random_batch(spec, sh.n, sh.m, rng);
    Model a = base, b = base, c = base;
    const StepReport stdr = step_standard(a, batch, 0.1);
    StepConfig cfg = subset_cfg(Partition::layer_wise(spec), RuleKind::topk, 2);
    const StepReport lw = step_layerwise(b, batch, cfg);
    cfg.spec.partition = Partition::global(spec);
    const StepReport gl = step_global_onepass(c, batch, cfg);
    const std::int64_t mtw = std::int64_t(sh.m * sh.t * sh.w);
    for (std::size_t l = 0; l < sh.layers; ++l) {
      const std::string ph = "backward:" + std::to_string(l);
      const std::int64_t diff = live_before_phase(lw.ledger.events, ph) - live_before_phase(stdr.ledger.events, ph);
      const std::int64_t bound = std::int64_t(l + 1) * 2 * mtw + mtw;
      if (diff < 0 || diff > bound) {
        ok = false;
        os << "layer-wise excess " << diff << " > " << bound << " at " << ph << "; ";
      }
    }
    // The whole merged-batch cache is live when scoring starts; target
    // segments may go once their layer is scored, training segments stay.
    const std::int64_t all = 2 * std::int64_t((sh.n + sh.m) * sh.t * sh.w * sh.layers);
    const std::int64_t train_all = 2 * std::int64_t(sh.n * sh.t * sh.w * sh.layers);
    const std::int64_t onset = cache_live_before(gl.ledger.events, "scoring:" + std::to_string(sh.layers - 1));
    std::int64_t low = std::numeric_limits<std::int64_t>::max(), train_live = 0;
    std::set<TensorId> train_ids;
    for (const LedgerEvent& e : gl.ledger.events) {
      const bool scoring = e.phase.rfind("scoring:", 0) == 0;
      if (scoring) low = std::min(low, train_live);
      if (e.kind == EventKind::alloc && is_cache_label(e.label) && e.label.rfind("train:", 0) == 0) {
        train_ids.insert(e.id);
        train_live += e.entries;
      } else if (e.kind == EventKind::release && train_ids.erase(e.id)) {
        train_live -= e.entries;
      }
      if (scoring) low = std::min(low, train_live);
    }
    if (onset != all || low != train_all) {
      ok = false;
      os << "global one-pass cache " << onset << " at scoring onset (expected " << all << "), training cache low "
         << low << " (expected " << train_all << "); ";
    }
    os << "(b) w=" << sh.w << " L=" << sh.layers << ": layer-wise excess within bound, global cache " << all
       << " at scoring onset; ";
  }
  // (c) modeled peaks under checkpointing.
  const std::pair<std::vector<std::size_t>, std::size_t> plans[] = {
      {{8, 8, 8, 8, 8}, 2}, {{16, 16, 16, 16, 16, 16, 16}, 2}, {{16, 16, 16, 16, 16, 16, 16}, 3}};
  for (const auto& [widths, per] : plans) {
    const ModelSpec spec = dense_spec(widths, 4);
    const SegmentPlan plan = SegmentPlan::uniform(spec.num_layers(), per);
    const auto lw = replay(model_checkpointed_trace(spec, 8, 1, plan, TraceKind::layerwise).events).peak;
    const auto gl = replay(model_checkpointed_trace(spec, 8, 1, plan, TraceKind::global_onepass).events).peak;
    const bool lower = plan.segments.size() >= 2 && lw < gl;
    ok = ok && lower;
    os << "(c) L=" << spec.num_layers() << " segments=" << plan.segments.size() << ": " << lw << " vs " << gl << "; ";
  }
  res.pass = ok;
  res.detail = os.str();
  return res;
}

CheckResult compression_checks(const VerifyOptions& opts) {
  CheckResult res;
  auto os = stream();
  bool ok = true;
  double worst = 0.0;
  struct Case {
    std::size_t wo, wi;
    ProjectorDims dims;
  };
  const Case cases[] = {{6, 5, {3, 4, 0}}, {8, 8, {4, 4, 8}}, {12, 7, {5, 3, 10}}, {32, 32, {4, 8, 0}}, {16, 32, {4, 4, 12}}};
  for (std::size_t ci = 0; ci < std::size(cases); ++ci) {
    const Case& c = cases[ci];
    Rng rng(opts.seed + 1100 + ci);
    const Projector p = Projector::gaussian(c.wo, c.wi, c.dims, opts.seed + ci, 0, 0);
    const Projector q = Projector::gaussian(c.wo, c.wi, c.dims, opts.seed + ci, 0, 1);
    const Mat dp = oracle::kron_matrix(p), dq = oracle::kron_matrix(q);
    const Tensor b = Tensor::randn(c.wo, 5, rng), a = Tensor::randn(c.wi, 5, rng);
    const std::vector<std::size_t> cols = {0, 2, 3, 4};
    Tensor g(c.wo, c.wi);
    outer_sum_accumulate(g, b, a, cols);
    const Vec gv = oracle::vec_colmajor(g);
    worst = std::max(worst, oracle::max_abs_diff(project_outer_sum(p, b, a, cols), oracle::mul(dp, gv)));
    worst = std::max(worst, oracle::max_abs_diff(project_matrix(p, g), oracle::mul(dp, gv)));
    Vec x(p.kappa());
    for (double& v : x) v = rng.normal();
    worst = std::max(worst, oracle::max_abs_diff(oracle::vec_colmajor(project_back(p, x)), oracle::mul_t(dp, x)));
    const Vec general = oracle::mul(dq, oracle::mul_t(dp, x));
    worst = std::max(worst, oracle::max_abs_diff(project_general(q, p, x), general));
    worst = std::max(worst, oracle::max_abs_diff(refresh_first_moment(x, p, q), general));
    const Mat transfer = oracle::matmul_nt(dq, dp);
    Mat squared = transfer;
    for (auto& row : squared)
      for (double& v : row) v *= v;
    Vec vpos(p.kappa());
    for (double& v : vpos) v = std::abs(rng.normal()) + 0.1;
    Rng unused(0);
    worst = std::max(worst, oracle::max_abs_diff(refresh_second_moment(vpos, p, q, {}, unused), oracle::mul(squared, vpos)));
  }
  ok = worst <= 1e-10;
  os << "factorized vs dense oracles over " << std::size(cases) << " shapes: max |diff| " << worst << " (tol 1e-10); ";
  // One refresh instance, 20 independent probe streams.
  const Projector from = Projector::gaussian(8, 8, {4, 4, 0}, opts.seed, 0, 0);
  const Projector to = Projector::gaussian(8, 8, {4, 4, 0}, opts.seed, 0, 1);
  Rng vrng(opts.seed + 1200);
  Vec v(16);
  for (double& x : v) x = std::abs(vrng.normal()) + 0.1;
  Rng unused(0);
  const Vec exact = refresh_second_moment(v, from, to, {}, unused);
  // Rademacher probes give entry i a variance of sum_{k != i} A_ik^2 / N for
  // A = M diag(v) M^T, which fixes the expected error of this instance.
  const Mat transfer = oracle::matmul_nt(oracle::kron_matrix(to), oracle::kron_matrix(from));
  double off = 0.0, diag = 0.0;
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t k = 0; k < 16; ++k) {
      double a = 0.0;
      for (std::size_t j = 0; j < 16; ++j) a += transfer[i][j] * transfer[k][j] * v[j];
      (i == k ? diag : off) += a * a;
    }
  std::vector<double> errs;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(opts.seed + 1300 + s);
    SecondMomentOptions h;
    h.mode = SecondMomentMode::hutchinson;
    h.probes = 1024;
    errs.push_back(oracle::rel_err(refresh_second_moment(v, from, to, h, rng), exact));
  }
  std::nth_element(errs.begin(), errs.begin() + 10, errs.end());
  ok = ok && errs[10] < 0.05;
  os << "hutchinson median rel err " << errs[10] << " over 20 probe seeds (kappa 16, 1024 probes, tol 0.05; "
     << "predicted rms " << std::sqrt(off / diag / 1024.0) << ")";
  res.pass = ok;
  res.detail = os.str();
  return res;
}

CheckResult theory_checks(const VerifyOptions& opts) {
  CheckResult res;
  auto os = stream();
  bool ok = true;
  SimOptions base;
  base.n = 8;
  base.seed = opts.seed + 1300;
  base.threads = opts.threads;
  // MSE identities for the two closed-form estimators.
  struct Mse {
    double shift, target_var, train_var;
    std::size_t m;
  };
  std::size_t identities = 0, identity_fail = 0;
  for (const Mse& c : {Mse{1.0, 1.0, 0.5, 1}, Mse{2.0, 2.0, 1.0, 4}, Mse{0.0, 4.0, 1.0, 2}}) {
    const PopulationSpec p = shifted_population(16, c.shift, c.target_var, c.train_var);
    SimOptions o = base;
    o.m = c.m;
    o.trials = 100000;
    const auto rs = estimate_all(p, {{SimMethod::full_training, 8, 1}, {SimMethod::target_only, 1, 1}}, o);
    double gap = 0.0;
    for (std::size_t j = 0; j < p.dim; ++j) gap += std::pow(p.train_mean[j] - p.target_mean[j], 2);
    const double full_want = gap + p.train_trace() / 8.0, target_want = p.target_trace() / double(c.m);
    const bool full_ok = std::abs(rs[0].mse - full_want) <= 3 * rs[0].mse_se && std::abs(rs[0].var) <= 1e-9 * full_want;
    const bool target_ok = std::abs(rs[1].mse - target_want) <= 3 * rs[1].mse_se && rs[1].bias == 0.0;
    identities += 2;
    identity_fail += !full_ok + !target_ok;
  }
  ok = ok && identity_fail == 0;
  os << "mse identities " << identities - identity_fail << "/" << identities << " within 3 se at 1e5 trials; ";
  // Variance bounds on a 12-spec grid.
  std::size_t bounds = 0, violated = 0;
  for (double shift : {0.0, 1.0, 2.0})
    for (std::size_t m : {1, 8})
      for (double var : {0.25, 1.0}) {
        PopulationSpec p = shifted_population(16, shift, var, var);
        p.clip = 6.0;
        SimOptions o = base;
        o.m = m;
        o.trials = 2000;
        o.clip = true;
        for (const auto& r : estimate_all(p, {{SimMethod::global, 4, 1}, {SimMethod::groupwise, 4, 2}, {SimMethod::groupwise, 4, 4}}, o)) {
          ++bounds;
          if (!r.bound || r.var > *r.bound + 3 * r.var_se) ++violated;
        }
      }
  ok = ok && violated == 0;
  os << "variance bound violated " << violated << "/" << bounds << "; ";
  // Regime sweep over the target batch size.
  const std::vector<SimMethodSpec> methods = {{SimMethod::full_training, 8, 1},
                                              {SimMethod::global, 4, 1},
                                              {SimMethod::groupwise, 4, 4},
                                              {SimMethod::target_only, 1, 1}};
  const std::vector<std::size_t> ms = {1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64};
  const std::vector<std::string> order = {to_string(SimMethod::full_training), to_string(SimMethod::global),
                                          to_string(SimMethod::groupwise), to_string(SimMethod::target_only)};
  std::vector<std::size_t> gw_wins;
  for (double mismatch : {0.0, 1.0, 2.0}) {
    SimOptions o = base;
    o.trials = 10000;
    const auto rows = sweep_m(shifted_population(16, mismatch, 4.0, 1.0), methods, ms, o, mismatch);
    const auto seq = regime_sequence(rows);
    std::size_t wins = 0;
    for (const auto& r : rows) wins += r.winner == to_string(SimMethod::groupwise);
    gw_wins.push_back(wins);
    os << "mismatch " << mismatch << ": ";
    for (std::size_t i = 0; i < seq.size(); ++i) os << (i ? " -> " : "") << seq[i];
    os << "; ";
    if (mismatch == 0.0) {
      std::size_t pos = 0;
      bool subseq = true;
      for (const auto& s : seq) {
        while (pos < order.size() && order[pos] != s) ++pos;
        subseq = subseq && pos < order.size();
      }
      ok = ok && subseq && !seq.empty() && seq.front() == order.front() && seq.back() == order.back();
    }
  }
  const bool expanding = std::is_sorted(gw_wins.begin(), gw_wins.end()) && gw_wins.back() > gw_wins.front();
  ok = ok && expanding;
  os << "group-wise wins " << gw_wins[0] << "/" << gw_wins[1] << "/" << gw_wins[2];
  res.pass = ok;
  res.detail = os.str();
  return res;
}

CheckResult end_to_end(const VerifyOptions& opts) {
  CheckResult res;
  const ModelSpec spec = dense_spec({8, 16, 16, 4}, 1);
  const char* names[3] = {"full_training", "global", "layer_wise"};
  std::vector<double> finals[3];
  for (std::uint64_t seed = opts.seed; seed < opts.seed + 5; ++seed) {
    TaskSpec ts;
    ts.mismatch = 2.0;
    ts.seed = seed;
    const Task task = make_task(spec, ts);
    for (int arm = 0; arm < 3; ++arm) {
      Rng rng(100 + seed);
      Model model(spec, rng);
      TrainOptions o;
      o.steps = 300;
      o.n = 8;
      o.m = 8;
      o.seed = seed;
      o.eval_every = 0;
      o.step.lr = 0.05;
      o.step.spec.rule.kind = RuleKind::bruteforce;
      o.step.spec.rule.k = 2;
      if (arm == 0) o.step.spec.mode = UpdateMode::full_training;
      o.step.spec.partition = arm == 2 ? Partition::layer_wise(spec) : Partition::global(spec);
      train(model, task, o);
      finals[arm].push_back(mean_loss(model, task.eval, task.tokens));
    }
  }
  double med[3];
  auto os = stream();
  for (int arm = 0; arm < 3; ++arm) {
    std::sort(finals[arm].begin(), finals[arm].end());
    med[arm] = finals[arm][2];
    os << names[arm] << " " << med[arm] << (arm < 2 ? ", " : "");
  }
  res.pass = med[2] <= med[1] && med[1] <= med[0];
  res.detail = "median final target loss over 5 seeds: " + os.str();
  return res;
}

CheckResult case_study(const VerifyOptions& opts) {
  CheckResult res;
  const ModelSpec spec = dense_spec({8, 16, 16, 4}, 1, Activation::relu);
  TaskSpec ts;
  ts.mismatch = 2.0;
  ts.seed = opts.seed;
  const Task task = make_task(spec, ts);
  Rng init(opts.seed + 1);
  Model model(spec, init);
  rescale_adjacent(model, 0, 10.0);
  const std::size_t L = spec.num_layers();
  std::vector<double> rho(L, 0.0), mag(L, 0.0);
  std::vector<std::size_t> counted(L, 0);
  for (std::uint64_t b = 0; b < 50; ++b) {
    Rng rng(opts.seed + 1400 + b);
    const CaseStudy cs = score_layers(model, sample_batch(task, 8, 1, rng));
    for (const auto& st : cs.layers) {
      mag[st.layer] += st.mean_abs;
      if (st.spearman) {
        rho[st.layer] += *st.spearman;
        ++counted[st.layer];
      }
    }
  }
  for (std::size_t l = 0; l < L; ++l) rho[l] = counted[l] ? rho[l] / double(counted[l]) : -1.0;
  const std::size_t dominant = std::size_t(std::max_element(mag.begin(), mag.end()) - mag.begin());
  const double top = *std::max_element(rho.begin(), rho.end());
  const double low = *std::min_element(rho.begin(), rho.end());
  res.pass = rho[dominant] == top && top - low >= 0.3;
  auto os = stream();
  os << "dominant layer " << dominant << "; mean spearman per layer:";
  for (std::size_t l = 0; l < L; ++l) os << " " << rho[l];
  res.detail = os.str();
  return res;
}

}  // namespace

const std::vector<Suite>& suites() {
  static const std::vector<Suite> all = {
      {1, "scoring-equivalence", 60.0, scoring_equivalence},
      {2, "cost-exactness", 0.0, cost_exactness},
      {3, "crossovers", 0.0, crossovers},
      {4, "update-equivalence", 0.0, update_equivalence},
      {5, "projection-optimality", 0.0, projection_optimality},
      {6, "gradient-check", 120.0, gradient_check},
      {7, "ledger", 0.0, ledger_checks},
      {8, "compression", 0.0, compression_checks},
      {9, "theory", 300.0, theory_checks},
      {10, "end-to-end", 600.0, end_to_end},
      {11, "case-study", 0.0, case_study},
  };
  return all;
}

std::vector<CheckResult> run_suites(const std::string& selector, const VerifyOptions& opts,
                                    const std::function<void(const CheckResult&)>& on_result) {
  std::vector<const Suite*> chosen;
  for (const Suite& s : suites())
    if (selector == "all" || selector == s.name || selector == std::to_string(s.id)) chosen.push_back(&s);
  if (chosen.empty()) throw ConfigError("unknown verification suite '" + selector + "'");
  std::vector<CheckResult> out;
  for (const Suite* s : chosen) {
    const auto t0 = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = s->run(opts);
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("threw: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    while (!r.detail.empty() && (r.detail.back() == ' ' || r.detail.back() == ';')) r.detail.pop_back();
    r.id = s->id;
    r.name = s->name;
    r.budget_seconds = s->budget_seconds;
    if (r.budget_seconds > 0 && r.seconds > r.budget_seconds) {
      r.pass = false;
      r.detail += "; over the " + std::to_string(int(r.budget_seconds)) + " s budget";
    }
    if (on_result) on_result(r);
    out.push_back(std::move(r));
  }
  return out;
}

std::string format_result(const CheckResult& r) {
  std::ostringstream os;
  os << (r.pass ? "PASS" : "FAIL") << "  " << std::setw(2) << r.id << " " << std::left << std::setw(22) << r.name
     << std::right << std::fixed << std::setprecision(2) << std::setw(8) << r.seconds << " s  " << r.detail;
  return os.str();
}

}  // namespace datareg::app
