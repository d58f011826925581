// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include "datareg/partition.hpp"

#include <algorithm>
#include <sstream>

#include "datareg/errors.hpp"

namespace datareg {

Partition::Partition(std::vector<std::vector<Span>> groups) : groups_(std::move(groups)) {}

Partition Partition::global(const ModelSpec& spec) {
  std::vector<Span> all;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) all.push_back({l, 0, spec.trainable_size(l)});
  return Partition({all});
}

Partition Partition::layer_wise(const ModelSpec& spec) {
  std::vector<std::vector<Span>> g;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) g.push_back({{l, 0, spec.trainable_size(l)}});
  return Partition(std::move(g));
}

Partition Partition::blocks(const ModelSpec& spec, std::size_t c) {
  if (c == 0) throw ConfigError("block size must be positive");
  std::vector<std::vector<Span>> g;
  const std::size_t L = spec.num_layers();
  for (std::size_t top = L; top > 0;) {
    const std::size_t lo = top >= c ? top - c : 0;
    std::vector<Span> grp;
    for (std::size_t l = lo; l < top; ++l) grp.push_back({l, 0, spec.trainable_size(l)});
    g.push_back(std::move(grp));
    top = lo;
  }
  std::reverse(g.begin(), g.end());
  return Partition(std::move(g));
}

std::vector<std::size_t> Partition::layers_of(std::size_t p) const {
  std::vector<std::size_t> out;
  for (const Span& s : group(p)) out.push_back(s.layer);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::size_t> Partition::groups_on(std::size_t l) const {
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < groups_.size(); ++p) {
    for (const Span& s : groups_[p]) {
      if (s.layer == l) {
        out.push_back(p);
        break;
      }
    }
  }
  return out;
}

bool Partition::layer_aligned(const ModelSpec& spec) const {
  for (const auto& g : groups_)
    for (const Span& s : g)
      if (s.begin != 0 || s.end != spec.trainable_size(s.layer)) return false;
  return true;
}

bool Partition::is_layer_wise(const ModelSpec& spec) const {
  if (groups_.size() != spec.num_layers() || !layer_aligned(spec)) return false;
  for (const auto& g : groups_)
    if (g.size() != 1) return false;
  return true;
}

std::size_t Partition::group_size(std::size_t p) const {
  std::size_t n = 0;
  for (const Span& s : group(p)) n += s.size();
  return n;
}

void Partition::validate(const ModelSpec& spec) const {
  if (groups_.empty()) throw ConfigError("partition has no groups");
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> per_layer(spec.num_layers());
  for (std::size_t p = 0; p < groups_.size(); ++p) {
    if (groups_[p].empty()) throw ConfigError("group " + std::to_string(p) + " is empty");
    for (const Span& s : groups_[p]) {
      if (s.layer >= spec.num_layers()) throw ConfigError("group " + std::to_string(p) + " names a missing layer");
      if (s.begin >= s.end || s.end > spec.trainable_size(s.layer)) {
        throw ConfigError("group " + std::to_string(p) + " has an invalid span on layer " + std::to_string(s.layer));
      }
      per_layer[s.layer].push_back({s.begin, s.end});
    }
  }
  for (std::size_t l = 0; l < per_layer.size(); ++l) {
    auto& v = per_layer[l];
    std::sort(v.begin(), v.end());
    std::size_t at = 0;
    for (auto [b, e] : v) {
      if (b < at) throw ConfigError("groups overlap on layer " + std::to_string(l));
      if (b > at) throw ConfigError("partition leaves coordinates of layer " + std::to_string(l) + " uncovered");
      at = e;
    }
    if (at != spec.trainable_size(l)) {
      throw ConfigError("partition leaves coordinates of layer " + std::to_string(l) + " uncovered");
    }
  }
}

std::string Partition::describe() const {
  std::ostringstream os;
  for (std::size_t p = 0; p < groups_.size(); ++p) {
    if (p) os << " | ";
    for (std::size_t j = 0; j < groups_[p].size(); ++j) {
      const Span& s = groups_[p][j];
      os << (j ? "," : "") << "L" << s.layer << "[" << s.begin << ":" << s.end << ")";
    }
  }
  return os.str();
}

}  // namespace datareg
