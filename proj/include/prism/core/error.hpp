#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace prism {

/// Broad failure class; the CLI maps each to an exit code.
enum class ErrorKind { config, data, numerical, io };

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Invalid configuration. Carries every offending field found in one pass.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> fields);
  ConfigError(const std::string& field, const std::string& reason);

  const std::vector<std::string>& fields() const noexcept { return fields_; }

 private:
  std::vector<std::string> fields_;
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& message) : Error(ErrorKind::data, message) {}
};

/// Layout descriptor or table schema violates the canonical schema.
class SchemaError : public DataError {
 public:
  explicit SchemaError(const std::string& message) : DataError("schema error: " + message) {}
};

/// A raw tensor could not be turned into valid records.
class AlignmentError : public DataError {
 public:
  explicit AlignmentError(const std::string& message)
      : DataError("alignment error: " + message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error(ErrorKind::io, message) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& message) : Error(ErrorKind::numerical, message) {}
};

}  // namespace prism
