#pragma once

#include <stdexcept>
#include <string>

namespace autoview {

/// Operand shapes (or other structural preconditions) do not conform.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// A checked forward op produced a non-finite value, or training diverged.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Config or parameter value violating the schema.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Config file missing, unreadable, or syntactically broken.
class ConfigReadError : public ConfigError {
 public:
  explicit ConfigReadError(const std::string& msg) : ConfigError(msg) {}
};

/// Misuse of the autodiff tape (double backward, non-scalar loss, ...).
class GraphStateError : public std::logic_error {
 public:
  explicit GraphStateError(const std::string& msg) : std::logic_error(msg) {}
};

/// I/O failure on run artifacts (checkpoints, metrics, exports).
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace autoview
