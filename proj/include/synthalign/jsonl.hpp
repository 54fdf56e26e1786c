#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace synthalign::jsonl {

using nlohmann::json;

/// Reads one JSON value per non-blank line. Errors name the file and line.
std::vector<json> read(const std::filesystem::path& path);

/// Overwrites `path` atomically (temp file + rename).
void write(const std::filesystem::path& path, const std::vector<json>& rows);

void append(const std::filesystem::path& path, const json& row);

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& value);

std::string read_text(const std::filesystem::path& path);
void write_text_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace synthalign::jsonl
