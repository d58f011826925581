// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>

#include "datareg/ledger.hpp"
#include "datareg/meter.hpp"
#include "datareg/tensor.hpp"

namespace datareg {

// Execution context: cost meter, lifetime ledger, current phase label and
// numeric precision. Not thread-safe; use one per thread.
class ExecContext {
 public:
  explicit ExecContext(Precision precision = Precision::f64) : precision_(precision) {}

  CostMeter& meter() noexcept { return meter_; }
  const CostMeter& meter() const noexcept { return meter_; }
  CostMeter* flops() noexcept { return &meter_; }
  Ledger& ledger() noexcept { return ledger_; }
  const Ledger& ledger() const noexcept { return ledger_; }
  Precision precision() const noexcept { return precision_; }

  // The prefix (e.g. "pass2/") is prepended to every phase set afterwards.
  void set_phase(std::string phase) { phase_ = prefix_ + phase; }
  void set_phase_prefix(std::string prefix) { prefix_ = std::move(prefix); }
  const std::string& phase() const noexcept { return phase_; }
  void restore_phase(std::string full) { phase_ = std::move(full); }

  // Registers a live tensor: meter entries grow and an alloc event is logged.
  void track(const Tensor& t, std::string_view label = {});
  // Throws LifetimeError for unknown ids and double releases.
  void release(TensorId id);
  void release(const Tensor& t) { release(t.id()); }
  // Records that `consumer` reads `t` now.
  void read(const Tensor& t, std::string_view consumer);

  bool is_live(TensorId id) const { return live_.count(id) != 0; }
  std::size_t live_tensor_count() const noexcept { return live_.size(); }

 private:
  CostMeter meter_;
  Ledger ledger_;
  std::string phase_ = "init";
  std::string prefix_;
  Precision precision_;
  std::uint64_t seq_ = 0;
  std::unordered_map<TensorId, std::int64_t> live_;
  std::unordered_set<TensorId> released_;
};

// Sets the phase label for the lifetime of the object, restoring it after.
class PhaseScope {
 public:
  PhaseScope(ExecContext& ctx, std::string phase) : ctx_(ctx), saved_(ctx.phase()) {
    ctx_.set_phase(std::move(phase));
  }
  ~PhaseScope() { ctx_.restore_phase(saved_); }
  PhaseScope(const PhaseScope&) = delete;
  PhaseScope& operator=(const PhaseScope&) = delete;

 private:
  ExecContext& ctx_;
  std::string saved_;
};

}  // namespace datareg
