// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "datareg/tensor.hpp"

namespace datareg {

enum class EventKind { alloc, release };

// Phase labels: "forward", "backward:l", "scoring:l", "assembly:l",
// "optimizer", with extra prefixes such as "pass2/" for two-pass runs.
struct LedgerEvent {
  std::uint64_t seq = 0;
  EventKind kind = EventKind::alloc;
  TensorId id = 0;
  std::int64_t entries = 0;
  std::string phase;
  std::string label;
};

// A consumer operation reading a tensor at position `seq` of the shared
// event/read sequence.
struct Dependency {
  std::uint64_t seq = 0;
  std::string consumer;
  TensorId id = 0;
};

struct Ledger {
  std::vector<LedgerEvent> events;
  std::vector<Dependency> reads;
};

struct ProfilePoint {
  std::uint64_t seq = 0;
  std::int64_t live = 0;
};

struct Profile {
  std::vector<ProfilePoint> series;
  std::int64_t peak = 0;
  std::int64_t final_live = 0;
  // Largest live count observed right after an event of each phase.
  std::map<std::string, std::int64_t> phase_max;
};

// Exact live-entry profile. Throws LifetimeError on release-before-alloc,
// double release, mismatched entry counts, or non-increasing seq.
Profile replay(std::span<const LedgerEvent> events);

struct Violation {
  std::string consumer;
  TensorId id = 0;
  std::uint64_t consumer_seq = 0;
  std::string reason;
  std::string describe() const;
};

// First dependency that reads a tensor which is not live at that point, or
// nullopt when every consumer precedes the release of its inputs.
std::optional<Violation> check_legality(std::span<const LedgerEvent> events,
                                        std::span<const Dependency> reads);

// Events of the tensors whose alloc event satisfies `keep`, with their
// releases. Useful for profiling one class of tensors in isolation.
std::vector<LedgerEvent> select_events(std::span<const LedgerEvent> events,
                                       const std::function<bool(const LedgerEvent&)>& keep);
// Retained forward caches and their swapped gradients ("<side>:<l>/a", "/e",
// "/grad_e", "/lora_mid").
bool is_cache_label(const std::string& label);

// Ids allocated but never released.
std::vector<TensorId> unreleased(std::span<const LedgerEvent> events);

void write_trace_csv(std::ostream& out, std::span<const LedgerEvent> events);
void write_profile_csv(std::ostream& out, const Profile& profile);

}  // namespace datareg
