#pragma once

#include <stdexcept>
#include <string>

namespace amt {

/// Caller passed a value that violates an operation's precondition
/// (dimension mismatch, off-grid parameter, non-positive propensity, ...).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A snapshot, sidecar, manifest or spec file could not be loaded.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Campaign or oracle configuration is inconsistent.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The system under test failed to produce a usable answer.
class SutError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace amt
