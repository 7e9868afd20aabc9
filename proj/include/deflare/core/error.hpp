#pragma once

#include <stdexcept>
#include <string>

namespace deflare {

// Base of every error thrown by the library. `exit_code` is the process status
// the command-line tool reports for this error class.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, int exit_code = 3)
      : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(what, 1) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, 2) {}
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(what, 2) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(what, 2) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what, 3) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what, 3) {}
};

}  // namespace deflare
