// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "datareg/net.hpp"

namespace datareg {

// Half-open coordinate range [begin, end) inside one layer's flat trainable
// coordinates.
struct Span {
  std::size_t layer = 0;
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool operator==(const Span&) const = default;
};

// Disjoint parameter groups covering every trainable coordinate.
class Partition {
 public:
  Partition() = default;
  explicit Partition(std::vector<std::vector<Span>> groups);

  static Partition global(const ModelSpec& spec);
  static Partition layer_wise(const ModelSpec& spec);
  // Consecutive blocks of `c` layers counted from the output layer downward,
  // so that each block resolves as soon as its lowest layer is reached.
  static Partition blocks(const ModelSpec& spec, std::size_t c);

  std::size_t size() const noexcept { return groups_.size(); }
  const std::vector<Span>& group(std::size_t p) const { return groups_.at(p); }
  const std::vector<std::vector<Span>>& groups() const noexcept { return groups_; }

  // Distinct layers touched by group p, ascending.
  std::vector<std::size_t> layers_of(std::size_t p) const;
  // Groups with at least one span on layer l, ascending.
  std::vector<std::size_t> groups_on(std::size_t l) const;
  // True when every group consists of whole layers.
  bool layer_aligned(const ModelSpec& spec) const;
  bool is_layer_wise(const ModelSpec& spec) const;
  std::size_t group_size(std::size_t p) const;

  // Throws ConfigError unless groups are disjoint, non-empty and cover every
  // coordinate of `spec`.
  void validate(const ModelSpec& spec) const;
  std::string describe() const;

 private:
  std::vector<std::vector<Span>> groups_;
};

}  // namespace datareg
