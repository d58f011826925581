// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Command implementations behind the datareg executable. Each returns the
// process exit status: 0 ok, 1 assertion failure. Configuration problems are
// thrown as ConfigError and mapped to status 2 by the caller.

#include <cstddef>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "datareg_app/config.hpp"
#include "datareg_app/verify.hpp"

namespace datareg::app {

enum ExitCode : int { kOk = 0, kAssertion = 1, kConfig = 2 };

struct CommandContext {
  std::size_t threads = 1;
  std::ostream* log = nullptr;  // progress and summaries; null keeps quiet
};

// A JSON-lines run log. The first record carries the command, version,
// config hash and seed; nothing time-dependent is ever written.
class RunLog {
 public:
  RunLog(const std::string& dir, const std::string& command, const nlohmann::json& config, std::uint64_t seed);
  void write(const nlohmann::json& record);
  std::string file(const std::string& name) const;
  const std::string& config_hash() const noexcept { return hash_; }

 private:
  std::string dir_;
  std::string hash_;
  std::ofstream out_;
};

int cmd_train(const RunConfig& cfg, const CommandContext& ctx);
int cmd_bench_scoring(const RunConfig& cfg, const CommandContext& ctx);
int cmd_simulate(const RunConfig& cfg, const CommandContext& ctx);
int cmd_case_study(const RunConfig& cfg, const CommandContext& ctx);
// The run log is written only when out_dir is given.
int cmd_verify(const std::string& selector, const VerifyOptions& opts, const std::optional<std::string>& out_dir,
               const CommandContext& ctx);

}  // namespace datareg::app
