#pragma once

#include <stdexcept>
#include <string>

namespace mbatf {

// Caller broke an operation's precondition (shape mismatch, non-scalar loss, ...).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// Input data could not be loaded or is inconsistent.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid run configuration.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mbatf
