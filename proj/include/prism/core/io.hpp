#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

namespace prism {

/// Writes `contents` to `path` through a sibling temp file and a rename, so
/// readers never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);

/// Pretty-printed, key-sorted JSON with a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& value);

}  // namespace prism
