// Copyright 2026 The lindpo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace lindpo {

/// Argument outside the mathematical domain of an operation (t ∉ [0,1], dt ≤ 0, ...).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// Operation hit a singular coefficient (α(t)=0, σ(t)=0, t below the clamp).
struct SingularityError : std::domain_error {
  using std::domain_error::domain_error;
};

/// Vector or parameter dimensions disagree.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration value or unsupported combination.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Caller violated a precondition (empty batch, non-scalar loss, ...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace lindpo
