#include "ramo/json_util.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "ramo/error.hpp"

namespace ramo::json_util {

namespace {

std::pair<std::size_t, std::size_t> line_and_column(std::string_view text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, fmt::format("cannot open {}", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorCode::IoError, fmt::format("short write to {}", path.string()));
}

json parse_text(std::string_view text, std::string_view origin) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    // byte is 1-based and points one past the offending character.
    const std::size_t byte = e.byte > 0 ? e.byte - 1 : 0;
    auto [line, col] = line_and_column(text, byte);
    throw Error(ErrorCode::ParseError,
                fmt::format("{}:{}:{}: invalid JSON", origin, line, col));
  }
}

json read_file(const std::filesystem::path& path) {
  return parse_text(read_text(path), path.string());
}

void write_file(const std::filesystem::path& path, const json& doc) {
  write_text(path, doc.dump(2) + "\n");
}

void fail(std::string_view where, std::string_view message) {
  throw Error(ErrorCode::ParseError, fmt::format("{}: {}", where, message));
}

const json& field(const json& obj, std::string_view key, std::string_view where) {
  if (!obj.is_object()) fail(where, "expected an object");
  auto it = obj.find(std::string(key));
  if (it == obj.end()) fail(where, fmt::format("missing field '{}'", key));
  return *it;
}

std::string string_field(const json& obj, std::string_view key, std::string_view where) {
  const json& v = field(obj, key, where);
  if (!v.is_string()) fail(fmt::format("{}.{}", where, key), "expected a string");
  return v.get<std::string>();
}

double number_field(const json& obj, std::string_view key, std::string_view where) {
  const json& v = field(obj, key, where);
  if (!v.is_number()) fail(fmt::format("{}.{}", where, key), "expected a number");
  return v.get<double>();
}

long long integer_field(const json& obj, std::string_view key, std::string_view where) {
  const json& v = field(obj, key, where);
  if (!v.is_number_integer()) fail(fmt::format("{}.{}", where, key), "expected an integer");
  return v.get<long long>();
}

bool bool_field(const json& obj, std::string_view key, std::string_view where) {
  const json& v = field(obj, key, where);
  if (!v.is_boolean()) fail(fmt::format("{}.{}", where, key), "expected true or false");
  return v.get<bool>();
}

const json& array_field(const json& obj, std::string_view key, std::string_view where) {
  const json& v = field(obj, key, where);
  if (!v.is_array()) fail(fmt::format("{}.{}", where, key), "expected an array");
  return v;
}

}  // namespace ramo::json_util
