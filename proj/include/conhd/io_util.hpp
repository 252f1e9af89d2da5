#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace conhd {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

double parse_double(std::string_view text);
long long parse_integer(std::string_view text);

/// Splits one CSV line on commas (no quoting; our files never need it).
std::vector<std::string> split_csv_line(std::string_view line);

/// Reads a CSV file with a header row. Returns data rows only; throws
/// IoError when the file cannot be opened and ParseError when the header
/// does not start with `expected_prefix` columns.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
};
CsvTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& expected_prefix);

/// Opens a file for writing or throws IoError.
std::ofstream open_for_write(const std::filesystem::path& path);

}  // namespace conhd
