#pragma once

#include <stdexcept>
#include <string>

namespace mofelab {

// Error taxonomy mirrors the CLI exit codes: config/usage -> 1, data -> 2,
// numeric -> 3.

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Dimension or shape mismatch between containers that must chain.
class ShapeError : public ConfigError {
 public:
  explicit ShapeError(const std::string& what) : ConfigError(what) {}
};

// Problems with dataset files or empty/malformed data.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values or failed numerical checks.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mofelab
