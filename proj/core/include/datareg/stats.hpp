// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <vector>

namespace datareg {

// Ranks starting at 1, ties share their average rank.
std::vector<double> average_ranks(std::span<const double> x);

// Spearman rank correlation; nullopt for fewer than two points or when one
// side is constant.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

double mean(std::span<const double> x);
// Standard error of the mean; 0 for fewer than two values.
double standard_error(std::span<const double> x);

}  // namespace datareg
