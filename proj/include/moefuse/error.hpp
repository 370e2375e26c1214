// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace moefuse {

/// Base error carrying a machine-readable kind. The CLI prints errors as
/// `error: <kind>: <what>` on stderr and exits nonzero.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// Tensor shape mismatch; the message names the offending shapes.
struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error("shape", w) {}
};

struct IndexError : Error {
  explicit IndexError(const std::string& w) : Error("index", w) {}
};

/// Violated precondition of an operation contract.
struct ContractError : Error {
  explicit ContractError(const std::string& w) : Error("contract", w) {}
};

/// Inconsistent or unsatisfiable configuration.
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config", w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error("io", w) {}
};

/// Malformed input file; the message names the line where parsing failed.
struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error("parse", w) {}
};

/// Training aborted (e.g. non-finite loss); names batch and loss component.
struct TrainError : Error {
  explicit TrainError(const std::string& w) : Error("train", w) {}
};

}  // namespace moefuse
