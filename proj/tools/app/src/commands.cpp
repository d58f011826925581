// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include "datareg_app/commands.hpp"

#include <filesystem>
#include <algorithm>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>

#include "datareg/analysis.hpp"
#include "datareg/errors.hpp"
#include "datareg/ledger.hpp"
#include "datareg/stats.hpp"
#include "kernels.hpp"

#ifndef DATAREG_VERSION
#define DATAREG_VERSION "0.0.0"
#endif

namespace datareg::app {

using nlohmann::json;

namespace {

std::ofstream open_csv(const std::string& path, const std::string& header) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << std::setprecision(17) << header << '\n';
  return out;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string csv_optional(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(17) << *v;
  return os.str();
}

void say(const CommandContext& ctx, const std::string& line) {
  if (ctx.log) *ctx.log << line << '\n';
}

json group_json(const GroupReport& g) {
  return {{"group", g.group},   {"selected", g.selected}, {"divisor", g.divisor},
          {"fallback", g.fallback}, {"skipped", g.skipped}, {"objective", optional_number(g.objective)},
          {"update_norm", g.update_norm}};
}

std::vector<std::array<std::size_t, 4>> default_cells() {
  std::vector<std::array<std::size_t, 4>> cells;
  for (std::size_t w : {16, 32, 64})
    for (std::size_t t = 1; t <= 2 * w; t *= 2) cells.push_back({8, 1, t, w});
  return cells;
}

}  // namespace

RunLog::RunLog(const std::string& dir, const std::string& command, const json& config, std::uint64_t seed)
    : dir_(dir), hash_(hex64(app::config_hash(config))) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir_ + "': " + ec.message());
  out_.open(file("run.jsonl"));
  if (!out_) throw ConfigError("cannot write '" + file("run.jsonl") + "'");
  write({{"type", "meta"},
         {"command", command},
         {"version", DATAREG_VERSION},
         {"config_hash", hash_},
         {"seed", seed},
         {"config", config}});
}

void RunLog::write(const json& record) { out_ << record.dump() << '\n'; }

std::string RunLog::file(const std::string& name) const { return (std::filesystem::path(dir_) / name).string(); }

int cmd_train(const RunConfig& cfg, const CommandContext& ctx) {
  RunLog log(cfg.output_dir, "train", cfg.source, cfg.seed);
  const Task task = make_task(cfg.model, cfg.task);
  Rng init(cfg.effective_model_seed());
  Model model(cfg.model, init, cfg.init);
  auto steps_csv = open_csv(log.file("steps.csv"),
                            "step,train_loss,target_loss_before,target_loss_after,update_norm,peak_entries,flops,eval_loss");
  auto eval_csv = open_csv(log.file("eval.csv"), "step,eval_loss");
  const TrainOptions opts = cfg.train_options();
  const double eval0 = mean_loss(model, task.eval, task.tokens);
  log.write({{"type", "eval"}, {"step", 0}, {"eval_loss", eval0}});
  eval_csv << 0 << ',' << eval0 << '\n';
  train(model, task, opts, [&](const StepRecord& r) {
    json groups = json::array();
    for (const GroupReport& g : r.groups) groups.push_back(group_json(g));
    log.write({{"type", "step"},
               {"step", r.step},
               {"train_loss", r.train_loss},
               {"target_loss_before", r.target_loss_before},
               {"target_loss_after", r.target_loss_after},
               {"update_norm", r.update_norm},
               {"peak_entries", r.peak_entries},
               {"flops", r.flops},
               {"eval_loss", optional_number(r.eval_loss)},
               {"schedule_note", r.schedule_note},
               {"groups", groups}});
    steps_csv << r.step << ',' << r.train_loss << ',' << r.target_loss_before << ',' << r.target_loss_after << ','
              << r.update_norm << ',' << r.peak_entries << ',' << r.flops << ',' << csv_optional(r.eval_loss) << '\n';
    if (r.eval_loss) eval_csv << r.step << ',' << *r.eval_loss << '\n';
  });
  const double eval = mean_loss(model, task.eval, task.tokens);
  const double target = mean_loss(model, task.target, task.tokens);
  log.write({{"type", "summary"},
             {"steps", cfg.steps},
             {"initial_eval_loss", eval0},
             {"final_eval_loss", eval},
             {"final_target_pool_loss", target}});
  if (cfg.trace) {
    // One extra step on a copy of the trained model, for the memory trace.
    Model probe = model;
    Rng rng(cfg.seed ^ 0x7472616365ULL);
    const Batch batch = sample_batch(task, cfg.n, cfg.m, rng);
    MesoState state;
    if (opts.step.optimizer == OptimizerKind::meso_adamw) state = MesoState(cfg.model, opts.step.meso);
    const StepReport rep = run_step(probe, batch, opts.step, &state);
    std::ofstream trace(log.file("trace.csv")), profile(log.file("profile.csv"));
    write_trace_csv(trace, rep.ledger.events);
    const Profile prof = replay(rep.ledger.events);
    write_profile_csv(profile, prof);
    const auto v = check_legality(rep.ledger.events, rep.ledger.reads);
    log.write({{"type", "trace"},
               {"kind", rep.kind},
               {"peak", prof.peak},
               {"final_live", prof.final_live},
               {"phase_max", prof.phase_max},
               {"legal", !v.has_value()},
               {"violation", v ? json(v->describe()) : json(nullptr)}});
  }
  std::ostringstream os;
  os << std::setprecision(6) << "train: " << cfg.steps << " steps, eval loss " << eval0 << " -> " << eval
     << "; wrote " << log.file("run.jsonl");
  say(ctx, os.str());
  return kOk;
}

int cmd_bench_scoring(const RunConfig& cfg, const CommandContext& ctx) {
  RunLog log(cfg.output_dir, "bench-scoring", cfg.source, cfg.seed);
  const auto cells = cfg.bench.cells.empty() ? default_cells() : cfg.bench.cells;
  auto csv = open_csv(log.file("bench_scoring.csv"),
                      "n,m,T,w,method,flops,predicted_flops,memory,predicted_memory,scratch,predicted_scratch,match,"
                      "gip_below_direct,pip_below_direct");
  std::size_t mismatches = 0;
  // Flop comparisons per (n, m, w) series, ordered by T, for crossover markers.
  std::map<std::array<std::size_t, 3>, std::vector<std::array<std::uint64_t, 4>>> series;
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    const auto [n, m, t, w] = cells[ci];
    Rng rng(cfg.seed + ci);
    const Factors f(n, m, t, w, rng);
    const Projector proj = Projector::gaussian(w, w, cfg.bench.compressed_dims, cfg.seed, ci, 0);
    const ScoreShape shape{n, m, t, w, w};
    std::map<ScoreMethod, std::uint64_t> flops;
    std::vector<std::string> rows;
    for (ScoreMethod method : {ScoreMethod::direct, ScoreMethod::gip, ScoreMethod::pip, ScoreMethod::compressed}) {
      KernelRun r;
      for (std::size_t rep = 0; rep < cfg.bench.repeats; ++rep)
        r = run_kernel(method, f, t, method == ScoreMethod::compressed ? &proj : nullptr);
      const ScoreCost want = predict_cost(method, shape, cfg.bench.compressed_dims);
      const std::uint64_t memory = method == ScoreMethod::compressed ? std::uint64_t(r.stored) : std::uint64_t(r.workspace);
      const std::uint64_t scratch = std::uint64_t(r.workspace) - memory;
      const bool match = r.flops == want.flops && memory == want.memory && scratch == want.scratch;
      mismatches += !match;
      flops[method] = r.flops;
      std::ostringstream row;
      row << n << ',' << m << ',' << t << ',' << w << ',' << to_string(method) << ',' << r.flops << ',' << want.flops
          << ',' << memory << ',' << want.memory << ',' << scratch << ',' << want.scratch << ',' << (match ? 1 : 0);
      rows.push_back(row.str());
      log.write({{"type", "bench"},
                 {"n", n}, {"m", m}, {"T", t}, {"w", w},
                 {"method", to_string(method)},
                 {"flops", r.flops}, {"predicted_flops", want.flops},
                 {"memory", memory}, {"predicted_memory", want.memory},
                 {"scratch", scratch}, {"predicted_scratch", want.scratch},
                 {"match", match}});
    }
    const bool gip_below = flops[ScoreMethod::gip] < flops[ScoreMethod::direct];
    const bool pip_below = flops[ScoreMethod::pip] < flops[ScoreMethod::direct];
    for (const auto& row : rows) csv << row << ',' << gip_below << ',' << pip_below << '\n';
    series[{n, m, w}].push_back({t, flops[ScoreMethod::direct], flops[ScoreMethod::gip], flops[ScoreMethod::pip]});
  }
  for (auto& [key, pts] : series) {
    std::sort(pts.begin(), pts.end());
    const auto [n, m, w] = key;
    std::optional<std::uint64_t> gip_flip, pip_flip;
    for (const auto& p : pts) {
      if (!gip_flip && p[2] > p[1]) gip_flip = p[0];
      if (!pip_flip && p[3] >= p[1]) pip_flip = p[0];
    }
    log.write({{"type", "crossover"},
               {"n", n}, {"m", m}, {"w", w},
               {"gip_exceeds_direct_at_T", gip_flip ? json(*gip_flip) : json(nullptr)},
               {"gip_exceeds_direct_at_mT", gip_flip ? json(*gip_flip * m) : json(nullptr)},
               {"half_width", double(w) / 2},
               {"pip_reaches_direct_at_T", pip_flip ? json(*pip_flip) : json(nullptr)}});
    std::ostringstream os;
    os << "w=" << w << " n=" << n << " m=" << m << ": GIP > Direct from mT="
       << (gip_flip ? std::to_string(*gip_flip * m) : std::string("-")) << " (w/2=" << w / 2
       << "), PIP >= Direct from T=" << (pip_flip ? std::to_string(*pip_flip) : std::string("-"));
    say(ctx, os.str());
  }
  log.write({{"type", "summary"}, {"cells", cells.size()}, {"mismatches", mismatches}});
  say(ctx, "bench-scoring: " + std::to_string(cells.size()) + " cells, " + std::to_string(mismatches) +
               " measured/predicted mismatches; wrote " + log.file("bench_scoring.csv"));
  return mismatches ? kAssertion : kOk;
}

int cmd_simulate(const RunConfig& cfg, const CommandContext& ctx) {
  RunLog log(cfg.output_dir, "simulate", cfg.source, cfg.seed);
  const SimulateConfig& s = cfg.simulate;
  auto csv = open_csv(log.file("simulate.csv"),
                      "mismatch,m,method,k,groups,trials,mse,mse_se,bias,bias_se,var,var_se,bound,closed_form_mse,winner");
  auto regimes = open_csv(log.file("regimes.csv"), "mismatch,sequence");
  SimOptions opts;
  opts.n = s.n;
  opts.trials = s.trials;
  opts.seed = cfg.seed;
  opts.threads = ctx.threads;
  opts.clip = s.clip.has_value();
  for (double mismatch : s.mismatch) {
    PopulationSpec pop = shifted_population(s.dim, mismatch, s.target_var, s.train_var, s.target_mean);
    if (s.clip) pop.clip = *s.clip;
    double gap = 0.0;
    for (std::size_t j = 0; j < pop.dim; ++j) gap += (pop.train_mean[j] - pop.target_mean[j]) * (pop.train_mean[j] - pop.target_mean[j]);
    const auto rows = sweep_m(pop, s.methods, s.m, opts, mismatch);
    for (const RegimeRow& row : rows) {
      double best = std::numeric_limits<double>::infinity();
      for (const SimResult& r : row.results) best = std::min(best, r.mse);
      for (const SimResult& r : row.results) {
        std::optional<double> closed;
        if (!s.clip && r.method.kind == SimMethod::full_training && r.method.k == s.n) closed = gap + pop.train_trace() / double(s.n);
        if (!s.clip && r.method.kind == SimMethod::target_only) closed = pop.target_trace() / double(row.m);
        const bool winner = r.mse == best;
        csv << mismatch << ',' << row.m << ',' << to_string(r.method.kind) << ',' << r.method.k << ',' << r.method.groups
            << ',' << r.trials << ',' << r.mse << ',' << r.mse_se << ',' << r.bias << ',' << r.bias_se << ',' << r.var
            << ',' << r.var_se << ',' << csv_optional(r.bound) << ',' << csv_optional(closed) << ',' << winner << '\n';
        log.write({{"type", "sim"},
                   {"mismatch", mismatch}, {"m", row.m},
                   {"method", r.method.label()},
                   {"trials", r.trials},
                   {"mse", r.mse}, {"mse_se", r.mse_se},
                   {"bias", r.bias}, {"bias_se", r.bias_se},
                   {"var", r.var}, {"var_se", r.var_se},
                   {"bound", optional_number(r.bound)},
                   {"closed_form_mse", optional_number(closed)},
                   {"winner", winner}});
      }
    }
    const auto seq = regime_sequence(rows);
    std::string joined;
    for (const auto& x : seq) joined += (joined.empty() ? "" : ";") + x;
    regimes << mismatch << ',' << joined << '\n';
    log.write({{"type", "regime"}, {"mismatch", mismatch}, {"sequence", seq}});
    std::ostringstream os;
    os << "mismatch " << mismatch << ": " << joined;
    say(ctx, os.str());
  }
  say(ctx, "simulate: wrote " + log.file("simulate.csv"));
  return kOk;
}

int cmd_case_study(const RunConfig& cfg, const CommandContext& ctx) {
  if (cfg.model.num_layers() < 2) throw ConfigError("case-study needs a model with at least two layers");
  RunLog log(cfg.output_dir, "case-study", cfg.source, cfg.seed);
  const CaseStudyConfig& cs = cfg.case_study;
  const Task task = make_task(cfg.model, cfg.task);
  Rng init(cfg.effective_model_seed());
  Model model(cfg.model, init, cfg.init);
  if (cs.rescale_from) rescale_adjacent(model, *cs.rescale_from, cs.rescale_factor);
  auto scores = open_csv(log.file("scores.csv"), "step,group,sample,method,score");
  auto layers = open_csv(log.file("case_study.csv"), "step,layer,mean_abs,spearman");
  const std::size_t L = cfg.model.num_layers();
  std::vector<double> mag(L, 0.0), rho(L, 0.0);
  std::vector<std::size_t> defined(L, 0);
  const std::string method = to_string(cs.method);
  for (std::size_t b = 0; b < cs.batches; ++b) {
    Rng rng(cfg.seed * 1000003ULL + b);
    const CaseStudy st = score_layers(model, sample_batch(task, cs.n, cs.m, rng), cs.method);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t i = 0; i < st.layer_scores[l].size(); ++i)
        scores << b << ',' << l << ',' << i << ',' << method << ',' << st.layer_scores[l][i] << '\n';
    for (std::size_t i = 0; i < st.global_scores.size(); ++i)
      scores << b << ",global," << i << ',' << method << ',' << st.global_scores[i] << '\n';
    json per_layer = json::array();
    for (const LayerScoreStats& s : st.layers) {
      layers << b << ',' << s.layer << ',' << s.mean_abs << ',' << csv_optional(s.spearman) << '\n';
      per_layer.push_back({{"layer", s.layer}, {"mean_abs", s.mean_abs}, {"spearman", optional_number(s.spearman)}});
      mag[s.layer] += s.mean_abs;
      if (s.spearman) {
        rho[s.layer] += *s.spearman;
        ++defined[s.layer];
      }
    }
    log.write({{"type", "batch"}, {"step", b}, {"layers", per_layer}});
  }
  auto summary = open_csv(log.file("case_study_summary.csv"), "layer,mean_abs,spearman,batches_with_rho");
  json agg = json::array();
  std::ostringstream os;
  os << std::setprecision(4) << "case-study:";
  for (std::size_t l = 0; l < L; ++l) {
    const double m = cs.batches ? mag[l] / double(cs.batches) : 0.0;
    const std::optional<double> r = defined[l] ? std::optional<double>(rho[l] / double(defined[l])) : std::nullopt;
    summary << l << ',' << m << ',' << csv_optional(r) << ',' << defined[l] << '\n';
    agg.push_back({{"layer", l}, {"mean_abs", m}, {"spearman", optional_number(r)}, {"batches_with_rho", defined[l]}});
    os << " layer " << l << " |s|=" << m << " rho=" << (r ? std::to_string(*r) : std::string("null")) << ";";
  }
  log.write({{"type", "summary"}, {"layers", agg}});
  say(ctx, os.str());
  return kOk;
}

int cmd_verify(const std::string& selector, const VerifyOptions& opts, const std::optional<std::string>& out_dir,
               const CommandContext& ctx) {
  std::optional<RunLog> log;
  if (out_dir) log.emplace(*out_dir, "verify", json{{"suite", selector}, {"fault", opts.fault == Fault::skip_swap ? "skip_swap" : "none"}}, opts.seed);
  std::size_t failed = 0;
  run_suites(selector, opts, [&](const CheckResult& r) {
    failed += !r.pass;
    say(ctx, format_result(r));
    if (log)
      log->write({{"type", "check"}, {"id", r.id}, {"name", r.name}, {"pass", r.pass}, {"detail", r.detail}});
  });
  if (log) log->write({{"type", "summary"}, {"failed", failed}});
  return failed ? kAssertion : kOk;
}

}  // namespace datareg::app
