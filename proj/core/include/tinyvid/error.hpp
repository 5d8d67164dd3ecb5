// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace tinyvid {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not satisfy an op's shape contract. The message names the
/// offending axis.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is missing, unknown or out of range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition (non-scalar backward root,
/// unnormalized embedding, re-adapting an adapted model, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A non-positive value reached a function defined on positive reals.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared where finite values are required. `where` carries
/// the block index or step index at which it was detected, or -1.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, long where = -1)
      : Error(what), where_(where) {}
  long where() const noexcept { return where_; }

 private:
  long where_;
};

/// Reading or writing an artifact file failed.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace tinyvid
