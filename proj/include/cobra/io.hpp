#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace cobra {

/// Parses a JSON file; throws ValidationError naming the file on failure.
nlohmann::json read_json_file(const std::filesystem::path& path, std::string_view what);

/// Writes via a temporary file and rename, so readers never see partial output.
void write_text_file(const std::filesystem::path& path, std::string_view content);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace cobra
