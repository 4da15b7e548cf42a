#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace relgraph {

/// Operand shapes do not fit the operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A binary or text file does not follow its declared format.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        message_(what),
        offset_(offset) {}

  const std::string& message() const noexcept { return message_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::string message_;
  std::uint64_t offset_;
};

/// A file could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration values (margins, dropout rate, unknown keys).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke an API contract, e.g. back-propagating through a stale trace.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Input is mathematically degenerate (zero-norm vector, empty score set).
class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Training or evaluation produced a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace relgraph
