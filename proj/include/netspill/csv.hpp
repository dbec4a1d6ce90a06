#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace netspill::csv {

// Comma separated, header row required. Lines starting with '#' and blank
// lines are skipped; double-quoted fields may contain commas and "" escapes.
struct Table {
  std::string file;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line;  // 1-based source line per row

  // Index of `name` in the header; throws ParseError naming the file.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
};

Table parse(std::string_view text, const std::string& file);
Table read(const std::filesystem::path& path);

double to_double(std::string_view field, const Table& t, std::size_t row);
// Accepts "", "NA", "NaN" as missing (quiet NaN).
double to_double_or_nan(std::string_view field, const Table& t, std::size_t row);

// Shortest representation that round-trips exactly.
std::string format_double(double v);

std::string escape(std::string_view field);

// Writes `# key=value` provenance lines followed by the header.
void write_preamble(std::ostream& os,
                    const std::vector<std::pair<std::string, std::string>>& provenance,
                    const std::vector<std::string>& header);
void write_row(std::ostream& os, const std::vector<std::string>& fields);

}  // namespace netspill::csv
