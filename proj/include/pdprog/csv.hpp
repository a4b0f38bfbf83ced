#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pdprog::csv {

/// Splits one CSV record. Handles double-quoted fields with "" escapes.
std::vector<std::string> split_line(std::string_view line);

/// Quotes a field only when it contains a comma, quote or newline.
std::string escape(std::string_view field);

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);
std::string format_optional(const std::optional<double>& v);

/// Parses a real; empty (or whitespace-only) input yields nullopt.
/// Throws std::invalid_argument on garbage.
std::optional<double> parse_optional_double(std::string_view s);
long long parse_integer(std::string_view s);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line per row
};

/// Reads a whole CSV file. Throws EmptyFile when there is no header row.
Table read_file(const std::string& path);

void write_file(const std::string& path, const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows);

}  // namespace pdprog::csv
