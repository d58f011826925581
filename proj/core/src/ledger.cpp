// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include "datareg/ledger.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include "datareg/errors.hpp"

namespace datareg {

Profile replay(std::span<const LedgerEvent> events) {
  Profile p;
  p.series.reserve(events.size());
  std::unordered_map<TensorId, std::int64_t> live;
  std::unordered_set<TensorId> dead;
  std::int64_t current = 0;
  std::uint64_t last_seq = 0;
  bool first = true;
  for (const LedgerEvent& e : events) {
    if (!first && e.seq <= last_seq) {
      throw LifetimeError("event sequence numbers must increase (seq " + std::to_string(e.seq) + ")");
    }
    first = false;
    last_seq = e.seq;
    if (e.kind == EventKind::alloc) {
      if (live.count(e.id) || dead.count(e.id)) {
        throw LifetimeError("tensor " + std::to_string(e.id) + " allocated twice");
      }
      live.emplace(e.id, e.entries);
      current += e.entries;
    } else {
      auto it = live.find(e.id);
      if (it == live.end()) {
        throw LifetimeError("release of tensor " + std::to_string(e.id) +
                            (dead.count(e.id) ? " after it was released" : " before allocation"));
      }
      if (it->second != e.entries) {
        throw LifetimeError("release of tensor " + std::to_string(e.id) + " with wrong entry count");
      }
      current -= e.entries;
      live.erase(it);
      dead.insert(e.id);
    }
    p.series.push_back({e.seq, current});
    p.peak = std::max(p.peak, current);
    auto& pm = p.phase_max[e.phase];
    pm = std::max(pm, current);
  }
  p.final_live = current;
  return p;
}

std::string Violation::describe() const {
  return "consumer '" + consumer + "' reads tensor " + std::to_string(id) + " at seq " +
         std::to_string(consumer_seq) + ": " + reason;
}

std::optional<Violation> check_legality(std::span<const LedgerEvent> events,
                                        std::span<const Dependency> reads) {
  std::unordered_map<TensorId, std::uint64_t> alloc_at;
  std::unordered_map<TensorId, std::uint64_t> release_at;
  for (const LedgerEvent& e : events) {
    (e.kind == EventKind::alloc ? alloc_at : release_at)[e.id] = e.seq;
  }
  std::vector<Dependency> ordered(reads.begin(), reads.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const Dependency& a, const Dependency& b) { return a.seq < b.seq; });
  for (const Dependency& d : ordered) {
    auto a = alloc_at.find(d.id);
    if (a == alloc_at.end() || a->second > d.seq) {
      return Violation{d.consumer, d.id, d.seq, "tensor not yet allocated"};
    }
    auto r = release_at.find(d.id);
    if (r != release_at.end() && r->second < d.seq) {
      return Violation{d.consumer, d.id, d.seq,
                       "tensor released at seq " + std::to_string(r->second)};
    }
  }
  return std::nullopt;
}

std::vector<TensorId> unreleased(std::span<const LedgerEvent> events) {
  std::vector<TensorId> order;
  std::unordered_set<TensorId> open;
  for (const LedgerEvent& e : events) {
    if (e.kind == EventKind::alloc) {
      order.push_back(e.id);
      open.insert(e.id);
    } else {
      open.erase(e.id);
    }
  }
  std::vector<TensorId> out;
  for (TensorId id : order)
    if (open.count(id)) out.push_back(id);
  return out;
}

std::vector<LedgerEvent> select_events(std::span<const LedgerEvent> events,
                                       const std::function<bool(const LedgerEvent&)>& keep) {
  std::unordered_set<TensorId> ids;
  std::vector<LedgerEvent> out;
  for (const LedgerEvent& e : events) {
    if (e.kind == EventKind::alloc) {
      if (!keep(e)) continue;
      ids.insert(e.id);
      out.push_back(e);
    } else if (ids.count(e.id)) {
      out.push_back(e);
    }
  }
  return out;
}

bool is_cache_label(const std::string& label) {
  const auto slash = label.rfind('/');
  if (slash == std::string::npos) return false;
  const std::string tail = label.substr(slash + 1);
  return tail == "a" || tail == "e" || tail == "grad_e" || tail == "lora_mid";
}

void write_trace_csv(std::ostream& out, std::span<const LedgerEvent> events) {
  // Ids are renumbered by first appearance so exports do not depend on how
  // many tensors the process created earlier.
  std::unordered_map<TensorId, std::size_t> local;
  out << "seq,kind,id,entries,phase\n";
  for (const LedgerEvent& e : events) {
    auto [it, fresh] = local.emplace(e.id, local.size());
    out << e.seq << ',' << (e.kind == EventKind::alloc ? "alloc" : "release") << ',' << it->second
        << ',' << e.entries << ',' << e.phase << '\n';
  }
}

void write_profile_csv(std::ostream& out, const Profile& profile) {
  out << "seq,live\n";
  for (const ProfilePoint& p : profile.series) out << p.seq << ',' << p.live << '\n';
}

}  // namespace datareg
