// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
// Runs every acceptance suite and prints one PASS/FAIL line per criterion.
// Exit status is the number of failing criteria (capped at 1 for ctest).
#include <cstdlib>
#include <iostream>
#include <string>

#include "datareg_app/verify.hpp"

int main(int argc, char** argv) {
  datareg::app::VerifyOptions opts;
  const std::string selector = argc > 1 ? argv[1] : "all";
  if (const char* t = std::getenv("DATAREG_THREADS")) opts.threads = std::strtoul(t, nullptr, 10);
  std::size_t failed = 0;
  datareg::app::run_suites(selector, opts, [&](const datareg::app::CheckResult& r) {
    failed += !r.pass;
    std::cout << format_result(r) << std::endl;
  });
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << failed << " criteria failing" << std::endl;
  return failed ? 1 : 0;
}
