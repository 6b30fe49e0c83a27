#pragma once

#include <stdexcept>
#include <string>

namespace err {

// Every failure surfaced to the CLI carries a stable machine-parsable class
// string; main() prints "<class>: <what>" and exits nonzero.
class Error : public std::runtime_error {
 public:
  Error(std::string cls, const std::string& what)
      : std::runtime_error(what), class_(std::move(cls)) {}
  const std::string& error_class() const noexcept { return class_; }

 private:
  std::string class_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape-error", what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error("validation-error", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config-error", what) {}
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& what) : Error("training-error", what) {}
};

class MetricError : public Error {
 public:
  explicit MetricError(const std::string& what) : Error("metric-error", what) {}
};

class LengthError : public Error {
 public:
  explicit LengthError(const std::string& what) : Error("length-error", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io-error", what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error("parse-error", what) {}
};

class DependencyError : public Error {
 public:
  explicit DependencyError(const std::string& what) : Error("dependency-error", what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error("usage-error", what) {}
};

class InsufficientDataError : public Error {
 public:
  explicit InsufficientDataError(const std::string& what)
      : Error("insufficient-data-error", what) {}
};

}  // namespace err
