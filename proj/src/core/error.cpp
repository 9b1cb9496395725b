#include "prism/core/error.hpp"

namespace prism {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
      return "config";
    case ErrorKind::data:
      return "data";
    case ErrorKind::numerical:
      return "numerical";
    case ErrorKind::io:
      return "io";
  }
  return "unknown";
}

namespace {

std::string join_fields(const std::vector<std::string>& fields) {
  std::string out = "invalid configuration:";
  for (const auto& f : fields) out += "\n  " + f;
  return out;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> fields)
    : Error(ErrorKind::config, join_fields(fields)), fields_(std::move(fields)) {}

ConfigError::ConfigError(const std::string& field, const std::string& reason)
    : ConfigError(std::vector<std::string>{field + ": " + reason}) {}

}  // namespace prism
