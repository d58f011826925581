// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include "datareg/rng.hpp"

#include <cmath>
#include <numbers>

namespace datareg {

std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t s = mix64(master + Rng::kGamma);
  for (std::uint64_t label : path) {
    s = mix64(s ^ mix64(label + 0xD1B54A32D192ED03ULL));
  }
  return s;
}

std::uint64_t Rng::at(std::uint64_t counter) const noexcept {
  return mix64(seed_ + (counter + 1) * kGamma);
}

std::uint64_t Rng::next_u64() noexcept { return at(counter_++); }

double Rng::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // 1 - uniform() lies in (0, 1], so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double Rng::rademacher() noexcept { return (next_u64() >> 63) ? 1.0 : -1.0; }

std::uint64_t Rng::below(std::uint64_t bound) noexcept {
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = bound * (UINT64_MAX / bound);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % bound;
}

}  // namespace datareg
