#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace topicsurv::csv {

struct Row {
  std::size_t line = 0;  // 1-based line number in the source file
  std::vector<std::string> fields;
};

/// Reads a comma-separated file. Blank lines are skipped; fields may be
/// double-quoted. Throws an input error if the file cannot be opened.
std::vector<Row> read(const std::filesystem::path& path);

std::vector<std::string> split_line(std::string_view line);

/// Parses a decimal real; throws an input error naming `where` otherwise.
double parse_double(std::string_view text, const std::string& where);
long long parse_int(std::string_view text, const std::string& where);

/// Shortest decimal string that parses back to exactly `value`.
std::string format_double(double value);

std::string quote_if_needed(const std::string& field);

/// Writes `content` to a sibling temp file and renames it over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace topicsurv::csv
