#include <sstream>

#include "prism/cli/cli.hpp"

namespace prism::cli {

using nlohmann::json;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return kExitConfig;
    case ErrorKind::data:
    case ErrorKind::io: return kExitData;
    case ErrorKind::numerical: return kExitNumerical;
  }
  return kExitInternal;
}

std::string error_json(ErrorKind kind, const std::string& message, const std::vector<std::string>& fields) {
  json e = {{"kind", to_string(kind)}, {"message", message}};
  if (!fields.empty()) e["fields"] = fields;
  return json{{"error", e}}.dump();
}

namespace {

void overlay(json& base, const json& patch, const std::string& where, std::vector<std::string>& unknown) {
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) {
      unknown.push_back(path + ": unknown key");
      continue;
    }
    auto& slot = base[key];
    if (slot.is_object() && !slot.empty() && value.is_object()) {
      overlay(slot, value, path, unknown);
    } else {
      slot = value;
    }
  }
}

}  // namespace

json resolve_config(const json& defaults, const std::optional<json>& file,
                    const std::vector<std::pair<std::string, json>>& overrides, const std::set<std::string>& foreign) {
  json out = defaults;
  std::vector<std::string> problems;
  if (file) {
    if (!file->is_object()) throw ConfigError("config", "file must hold a JSON object");
    json own = json::object();
    for (const auto& [key, value] : file->items()) {
      if (!foreign.count(key)) own[key] = value;
    }
    overlay(out, own, "", problems);
  }
  if (!problems.empty()) throw ConfigError(problems);
  for (const auto& [pointer, value] : overrides) out[json::json_pointer(pointer)] = value;
  return out;
}

void Problems::check(const std::function<void()>& f, const std::string& section) {
  try {
    f();
  } catch (const ConfigError& e) {
    for (const auto& field : e.fields()) fields_.push_back(section.empty() ? field : section + "." + field);
  }
}

void Problems::add(const std::string& field, const std::string& reason) { fields_.push_back(field + ": " + reason); }

void Problems::raise() const {
  if (!fields_.empty()) throw ConfigError(fields_);
}

}  // namespace prism::cli
