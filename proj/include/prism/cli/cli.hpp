#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prism/core/error.hpp"

namespace prism::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;
inline constexpr int kExitInternal = 1;

int exit_code(ErrorKind kind);

/// {"error": {"kind", "message", "fields"?}} on one line.
std::string error_json(ErrorKind kind, const std::string& message, const std::vector<std::string>& fields = {});

/// Layers a config file and flag overrides on top of defaults.
///
/// Objects merge key by key; any other value replaces the default. Keys the
/// defaults do not know are collected as errors, except top-level sections in
/// `foreign` (they belong to other subcommands and are dropped).
/// Overrides are (JSON pointer, value) pairs applied last.
nlohmann::json resolve_config(const nlohmann::json& defaults, const std::optional<nlohmann::json>& file,
                              const std::vector<std::pair<std::string, nlohmann::json>>& overrides,
                              const std::set<std::string>& foreign);

/// Accumulates config problems so that one run reports all of them.
class Problems {
 public:
  /// Runs f, keeping the fields of any ConfigError it throws, each prefixed
  /// with `section.` when a section is given.
  void check(const std::function<void()>& f, const std::string& section = "");
  void add(const std::string& field, const std::string& reason);
  /// Throws ConfigError with every collected field, if any.
  void raise() const;
  bool empty() const { return fields_.empty(); }

 private:
  std::vector<std::string> fields_;
};

/// Entry point behind the `prism` executable. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace prism::cli
