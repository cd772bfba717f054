#pragma once

#include <stdexcept>
#include <string>

namespace mutdet {

// Error families map onto the CLI exit codes (see tools/):
//   std::invalid_argument / ConfigError -> 2, DataError -> 3, NumericalError -> 4.

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mutdet
