// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "datareg/ledger.hpp"
#include "datareg/net.hpp"
#include "datareg/partition.hpp"

namespace datareg {

enum class Schedule { one_pass, two_pass, grad_accum };

std::string to_string(Schedule s);
Schedule parse_schedule(const std::string& s);

// Activation-checkpoint segments: contiguous half-open layer ranges that
// partition [0, L).
struct SegmentPlan {
  std::vector<std::pair<std::size_t, std::size_t>> segments;
  bool recompute = true;

  // Segments of `per_segment` layers counted from layer 0.
  static SegmentPlan uniform(std::size_t layers, std::size_t per_segment);
  void validate(std::size_t layers) const;
  std::size_t segment_of(std::size_t layer) const;
};

struct PlanDecision {
  Schedule schedule = Schedule::one_pass;
  std::string rationale;
};

// one_pass iff every group's layers fall inside a single segment.
PlanDecision plan_under_checkpointing(const Partition& partition, const SegmentPlan& plan);

enum class TraceKind { standard, global_onepass, layerwise };

// Modeled event trace of one step under checkpointing. Only segment boundary
// activations survive the forward pass; each segment's caches are
// recomputed when the backward sweep reaches it. The layer-wise and standard
// schedules release a layer's pair after it is consumed, while the global
// one-pass schedule must keep every pair until the scoring sweep ends.
Ledger model_checkpointed_trace(const ModelSpec& spec, std::size_t n, std::size_t m, const SegmentPlan& plan,
                                TraceKind kind);

// Live entries just before the first event of `phase`, or -1 if the phase
// never occurs.
std::int64_t live_before_phase(std::span<const LedgerEvent> events, const std::string& phase);
// Live entries right after the last event of `phase`, or -1.
std::int64_t live_after_phase(std::span<const LedgerEvent> events, const std::string& phase);

}  // namespace datareg
