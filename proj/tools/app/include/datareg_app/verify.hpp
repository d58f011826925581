// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "datareg/updates.hpp"

namespace datareg::app {

struct CheckResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
  double budget_seconds = 0.0;  // 0 means no runtime limit
};

struct VerifyOptions {
  std::size_t threads = 1;
  std::uint64_t seed = 0;
  Fault fault = Fault::none;  // injected into the ledger suite
};

struct Suite {
  int id = 0;
  std::string name;
  double budget_seconds = 0.0;
  std::function<CheckResult(const VerifyOptions&)> run;
};

// The acceptance suites in id order.
const std::vector<Suite>& suites();

// Runs one suite by name or id ("all" runs every suite). Throws ConfigError
// for unknown selectors. Each result records its own wall time and fails when
// the budget is exceeded.
std::vector<CheckResult> run_suites(const std::string& selector, const VerifyOptions& opts,
                                    const std::function<void(const CheckResult&)>& on_result = {});

std::string format_result(const CheckResult& r);

}  // namespace datareg::app
