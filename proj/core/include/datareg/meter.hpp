// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace datareg {

struct CostSnapshot {
  std::uint64_t flops = 0;
  std::int64_t live_entries = 0;
  std::int64_t peak_entries = 0;
};

// Counts scalar additions and multiplications and tracks live scalar entries.
class CostMeter {
 public:
  void add_flops(std::uint64_t n) noexcept { flops_ += n; }
  void on_alloc(std::int64_t entries) noexcept;
  // Throws LifetimeError if the count would go negative.
  void on_release(std::int64_t entries);

  std::uint64_t flops() const noexcept { return flops_; }
  std::int64_t live() const noexcept { return live_; }
  std::int64_t peak() const noexcept { return peak_; }
  CostSnapshot snapshot() const noexcept { return {flops_, live_, peak_}; }

  // Restarts peak tracking at the current live count, for measuring the
  // workspace high-water mark of a sub-computation.
  void reset_peak() noexcept { peak_ = live_; }

 private:
  std::uint64_t flops_ = 0;
  std::int64_t live_ = 0;
  std::int64_t peak_ = 0;
};

}  // namespace datareg
