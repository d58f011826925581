// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "datareg/errors.hpp"
#include "datareg_app/commands.hpp"
#include "datareg_app/config.hpp"

using namespace datareg::app;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> precision;
  std::size_t threads = 1;
};

void add_common(CLI::App* sub, Common& c, bool with_config = true) {
  if (with_config) {
    sub->add_option("--config", c.config, "JSON run configuration (defaults built in)");
    sub->add_option("--seed", c.seed, "Master seed; overrides the config");
    sub->add_option("--out", c.out, "Output directory; overrides the config");
  } else {
    sub->add_option("--seed", c.seed, "Seed for the randomized checks");
    sub->add_option("--out", c.out, "Write run.jsonl to this directory");
  }
  sub->add_option("--threads", c.threads, "Worker threads for the simulations")->check(CLI::PositiveNumber);
}

// Overrides are written into the document before parsing so the recorded
// config and its hash describe what actually ran.
RunConfig resolve(const Common& c) {
  nlohmann::json j = c.config.empty() ? default_config() : read_config_json(c.config);
  if (!j.is_object()) throw datareg::ConfigError("config: top level must be an object");
  if (c.seed) j["seed"] = *c.seed;
  if (c.out) j["output_dir"] = *c.out;
  if (c.precision) {
    if (!j.contains("step")) j["step"] = nlohmann::json::object();
    j["step"]["precision"] = *c.precision;
  }
  return parse_config(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data selection by per-layer gradient alignment"};
  app.require_subcommand(1);

  Common train_opts, bench_opts, sim_opts, case_opts, verify_opts;
  auto* train = app.add_subcommand("train", "Train a model with the configured update rule");
  add_common(train, train_opts);
  train->add_option("--precision", train_opts.precision, "Parameter precision")->check(CLI::IsMember({"f64", "f32"}));
  auto* bench = app.add_subcommand("bench-scoring", "Measure scoring cost against the closed forms");
  add_common(bench, bench_opts);
  auto* sim = app.add_subcommand("simulate", "Monte-Carlo bias/variance sweep over target batch sizes");
  add_common(sim, sim_opts);
  auto* cs = app.add_subcommand("case-study", "Per-layer score magnitudes and rank agreement");
  add_common(cs, case_opts);
  auto* verify = app.add_subcommand("verify", "Run the acceptance suites");
  add_common(verify, verify_opts, false);
  std::string suite = "all", fault = "none";
  verify->add_option("suite", suite, "Suite name or number, or 'all'");
  verify->add_option("--fault", fault, "Inject a fault into the update schedules")
      ->check(CLI::IsMember({"none", "skip_swap"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*verify) {
      VerifyOptions vo;
      vo.threads = verify_opts.threads;
      vo.seed = verify_opts.seed.value_or(0);
      vo.fault = fault == "skip_swap" ? datareg::Fault::skip_swap : datareg::Fault::none;
      return cmd_verify(suite, vo, verify_opts.out, CommandContext{vo.threads, &std::cout});
    }
    if (*train) return cmd_train(resolve(train_opts), {train_opts.threads, &std::cout});
    if (*bench) return cmd_bench_scoring(resolve(bench_opts), {bench_opts.threads, &std::cout});
    if (*sim) return cmd_simulate(resolve(sim_opts), {sim_opts.threads, &std::cout});
    if (*cs) return cmd_case_study(resolve(case_opts), {case_opts.threads, &std::cout});
  } catch (const datareg::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return kConfig;
  } catch (const datareg::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  }
  return kConfig;
}
