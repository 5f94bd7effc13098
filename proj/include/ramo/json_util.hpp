#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

namespace ramo::json_util {

using nlohmann::json;

// Parses a UTF-8 JSON file. Syntax errors become ParseError carrying
// "<file>:<line>:<column>".
json read_file(const std::filesystem::path& path);
json parse_text(std::string_view text, std::string_view origin);

// Writes `doc` with 2-space indent and a trailing newline. Throws IoError.
void write_file(const std::filesystem::path& path, const json& doc);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

// Field accessors that report the JSON path of a bad or missing field.
const json& field(const json& obj, std::string_view key, std::string_view where);
std::string string_field(const json& obj, std::string_view key, std::string_view where);
double number_field(const json& obj, std::string_view key, std::string_view where);
long long integer_field(const json& obj, std::string_view key, std::string_view where);
bool bool_field(const json& obj, std::string_view key, std::string_view where);
const json& array_field(const json& obj, std::string_view key, std::string_view where);

[[noreturn]] void fail(std::string_view where, std::string_view message);

}  // namespace ramo::json_util
