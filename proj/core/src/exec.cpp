// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include "datareg/exec.hpp"

#include "datareg/errors.hpp"

namespace datareg {

void ExecContext::track(const Tensor& t, std::string_view label) {
  if (live_.count(t.id()) != 0) {
    throw LifetimeError("tensor " + std::to_string(t.id()) + " is already live");
  }
  const auto entries = static_cast<std::int64_t>(t.size());
  live_.emplace(t.id(), entries);
  meter_.on_alloc(entries);
  ledger_.events.push_back({++seq_, EventKind::alloc, t.id(), entries, phase_, std::string(label)});
}

void ExecContext::release(TensorId id) {
  auto it = live_.find(id);
  if (it == live_.end()) {
    if (released_.count(id) != 0) {
      throw LifetimeError("double release of tensor " + std::to_string(id));
    }
    throw LifetimeError("release of unknown tensor " + std::to_string(id));
  }
  const std::int64_t entries = it->second;
  live_.erase(it);
  released_.insert(id);
  meter_.on_release(entries);
  ledger_.events.push_back({++seq_, EventKind::release, id, entries, phase_, {}});
}

void ExecContext::read(const Tensor& t, std::string_view consumer) {
  ledger_.reads.push_back({++seq_, std::string(consumer), t.id()});
}

}  // namespace datareg
