#pragma once

#include <stdexcept>
#include <string>

namespace semmod {

// Violated precondition or shape contract. These indicate caller bugs and
// are never recoverable mid-computation.
struct ContractViolation : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Mathematically degenerate input (zero-norm vector fed to a direction-only
// operation, and similar).
struct DegenerateInput : std::domain_error {
  using std::domain_error::domain_error;
};

// Malformed serialized data. Carries the byte offset at which decoding failed.
struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t byte_offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  std::size_t offset;
};

// Non-finite value encountered where the computation cannot continue.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad run configuration or command usage.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace semmod
