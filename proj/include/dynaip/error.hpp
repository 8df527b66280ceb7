// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace dynaip {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value encountered where a finite one is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent model, encoder, or training configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk container (features, checkpoints, masks, images).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// User-supplied values rejected by validation.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dynaip
