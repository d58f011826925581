// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace datareg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or width disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Double release, release of an unknown id, or a read after release.
class LifetimeError : public Error {
 public:
  using Error::Error;
};

// Cache used in the wrong phase or layers visited out of order.
class PhaseError : public Error {
 public:
  using Error::Error;
};

// Infeasible cardinality, empty selection, enumeration cap exceeded.
class SelectionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration; the CLI maps this to exit status 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace datareg
