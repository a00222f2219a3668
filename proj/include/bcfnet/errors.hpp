#pragma once

#include <stdexcept>
#include <string>

namespace bcfnet {

// Error categories used across the toolkit. Everything derives from
// std::runtime_error so callers can catch broadly; the CLI maps any of
// these to a nonzero exit with the message printed.

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : DataError {
  explicit ParseError(const std::string& msg) : DataError(msg) {}
};

struct SplitError : DataError {
  explicit SplitError(const std::string& msg) : DataError(msg) {}
};

struct GraphError : std::runtime_error {
  explicit GraphError(const std::string& msg) : std::runtime_error(msg) {}
};

struct StateError : std::runtime_error {
  explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : GraphError {
  explicit ShapeError(const std::string& msg) : GraphError(msg) {}
};

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EvalError : std::runtime_error {
  explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace bcfnet
