// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include "datareg/scheduler.hpp"

#include <algorithm>

#include "datareg/errors.hpp"

namespace datareg {

std::string to_string(Schedule s) {
  switch (s) {
    case Schedule::one_pass: return "one_pass";
    case Schedule::two_pass: return "two_pass";
    case Schedule::grad_accum: return "grad_accum";
  }
  return "?";
}

Schedule parse_schedule(const std::string& s) {
  if (s == "one_pass") return Schedule::one_pass;
  if (s == "two_pass") return Schedule::two_pass;
  if (s == "grad_accum") return Schedule::grad_accum;
  throw ConfigError("unknown schedule '" + s + "'");
}

SegmentPlan SegmentPlan::uniform(std::size_t layers, std::size_t per_segment) {
  if (per_segment == 0) throw ConfigError("checkpoint segments need at least one layer");
  SegmentPlan p;
  for (std::size_t b = 0; b < layers; b += per_segment) p.segments.push_back({b, std::min(layers, b + per_segment)});
  return p;
}

void SegmentPlan::validate(std::size_t layers) const {
  std::size_t at = 0;
  for (auto [b, e] : segments) {
    if (b != at || e <= b) throw ConfigError("checkpoint segments must be contiguous and non-empty");
    at = e;
  }
  if (at != layers) throw ConfigError("checkpoint segments must cover every layer");
}

std::size_t SegmentPlan::segment_of(std::size_t layer) const {
  for (std::size_t s = 0; s < segments.size(); ++s)
    if (layer >= segments[s].first && layer < segments[s].second) return s;
  throw ConfigError("layer " + std::to_string(layer) + " is not in any checkpoint segment");
}

PlanDecision plan_under_checkpointing(const Partition& partition, const SegmentPlan& plan) {
  for (std::size_t p = 0; p < partition.size(); ++p) {
    const auto layers = partition.layers_of(p);
    const std::size_t first = plan.segment_of(layers.front());
    for (std::size_t l : layers) {
      const std::size_t s = plan.segment_of(l);
      if (s != first) {
        return {Schedule::two_pass, "group " + std::to_string(p) + " spans checkpoint segments " +
                                        std::to_string(first) + " and " + std::to_string(s) +
                                        "; its caches cannot all be retained, so scores are computed in a "
                                        "first pass and the selected samples re-run"};
      }
    }
  }
  return {Schedule::one_pass, "every group lies within one checkpoint segment"};
}

namespace {

class TraceBuilder {
 public:
  TensorId alloc(std::int64_t entries, const std::string& phase, const std::string& label) {
    const TensorId id = ++next_id_;
    ledger_.events.push_back({++seq_, EventKind::alloc, id, entries, phase, label});
    sizes_[id] = entries;
    return id;
  }
  void release(TensorId id, const std::string& phase) {
    ledger_.events.push_back({++seq_, EventKind::release, id, sizes_.at(id), phase, {}});
  }
  Ledger take() { return std::move(ledger_); }

 private:
  Ledger ledger_;
  std::uint64_t seq_ = 0;
  TensorId next_id_ = 0;
  std::map<TensorId, std::int64_t> sizes_;
};

}  // namespace

Ledger model_checkpointed_trace(const ModelSpec& spec, std::size_t n, std::size_t m, const SegmentPlan& plan,
                                TraceKind kind) {
  spec.validate();
  plan.validate(spec.num_layers());
  const std::size_t L = spec.num_layers();
  const std::int64_t cols = static_cast<std::int64_t>((kind == TraceKind::standard ? n : n + m) * spec.tokens);
  auto width_in = [&](std::size_t l) -> std::int64_t {
    return spec.layers[l].kind == LayerKind::embedding ? 1 : static_cast<std::int64_t>(spec.layers[l].w_in);
  };
  auto width_out = [&](std::size_t l) { return static_cast<std::int64_t>(spec.layers[l].w_out); };
  auto tag = [](const char* p, std::size_t l) { return std::string(p) + ":" + std::to_string(l); };

  TraceBuilder tb;
  std::vector<TensorId> a(L, 0), e(L, 0);
  std::vector<TensorId> boundary(plan.segments.size(), 0);
  for (std::size_t s = 0; s < plan.segments.size(); ++s) {
    const auto [b, end] = plan.segments[s];
    boundary[s] = tb.alloc(width_in(b) * cols, "forward", tag("boundary", b));
    for (std::size_t l = b; l < end; ++l) {
      const TensorId t = tb.alloc(width_out(l) * cols, "forward", tag("transient", l));
      tb.release(t, "forward");
    }
  }
  std::int64_t d = 0;
  std::int64_t carry_rows = 0;
  for (std::size_t l = 0; l < L; ++l) {
    d += static_cast<std::int64_t>(spec.trainable_size(l));
    if (l > 0) carry_rows = std::max(carry_rows, width_in(l));
  }
  const TensorId u = tb.alloc(d, "optimizer", "u");
  TensorId carry = 0;
  if (carry_rows > 0) carry = tb.alloc(carry_rows * cols, tag("backward", L - 1), "carry");

  for (std::size_t s = plan.segments.size(); s-- > 0;) {
    const auto [b, end] = plan.segments[s];
    const std::string rec = tag("recompute", b);
    for (std::size_t l = b; l < end; ++l) {
      a[l] = l == b ? boundary[s] : tb.alloc(width_in(l) * cols, rec, tag("a", l));
      e[l] = tb.alloc(width_out(l) * cols, rec, tag("e", l));
    }
    for (std::size_t l = end; l-- > b;) {
      const std::string ph = tag("backward", l);
      tb.release(e[l], ph);
      e[l] = tb.alloc(width_out(l) * cols, ph, tag("grad_e", l));
      if (kind != TraceKind::global_onepass) {
        const std::string as = tag("assembly", l);
        tb.release(a[l], as);
        tb.release(e[l], as);
      }
    }
  }
  if (carry) tb.release(carry, "backward:0");
  if (kind == TraceKind::global_onepass) {
    for (std::size_t l = L; l-- > 0;) {
      const std::string as = tag("assembly", l);
      tb.release(a[l], as);
      tb.release(e[l], as);
    }
  }
  tb.release(u, "optimizer");
  return tb.take();
}

std::int64_t live_before_phase(std::span<const LedgerEvent> events, const std::string& phase) {
  std::int64_t live = 0;
  for (const LedgerEvent& ev : events) {
    if (ev.phase == phase) return live;
    live += ev.kind == EventKind::alloc ? ev.entries : -ev.entries;
  }
  return -1;
}

std::int64_t live_after_phase(std::span<const LedgerEvent> events, const std::string& phase) {
  std::int64_t live = 0, out = -1;
  for (const LedgerEvent& ev : events) {
    live += ev.kind == EventKind::alloc ? ev.entries : -ev.entries;
    if (ev.phase == phase) out = live;
  }
  return out;
}

}  // namespace datareg
