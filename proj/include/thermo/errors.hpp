#pragma once

#include <stdexcept>
#include <string>

namespace thermo {

// Each category maps to one line prefix in the CLI and one exit code.

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct InfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EncodingError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct LengthError : std::length_error {
  using std::length_error::length_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
  std::size_t byte_offset;
};

struct InsufficientDataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace thermo
