#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace toolgap::io {

using json = nlohmann::ordered_json;

/// Error raised while reading a stage file; carries the 1-based line number
/// when the problem is tied to one line.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Writes `contents` to a sibling temp file and renames it over `path`.
void write_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

/// Serializes one JSON object per line, in order.
std::string to_jsonl(const std::vector<json>& rows);

/// Parses line-delimited JSON. Blank lines are ignored; a malformed line
/// throws FormatError naming the line.
void for_each_jsonl(const std::filesystem::path& path, const std::function<void(const json&, std::size_t line)>& fn);

}  // namespace toolgap::io
