// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace qact {

// Shape or rank mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN or Inf observed where only finite values are allowed.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A quantization group layout that does not fit the tensor it is applied to.
class LayoutError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// API misuse, e.g. running backward twice on the same context.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Bad command line or config file.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace qact
