#pragma once

#include <stdexcept>
#include <string>

namespace tiered {

// Exit codes used by the command-line tool. Library code only throws; the
// mapping happens in tools/.
enum class ExitCode : int { ok = 0, config = 2, data = 3, numerical = 4 };

class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tiered
