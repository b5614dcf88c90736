#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace icl {

// Every CSV the lab writes opens with "# format_version=<n>" ahead of its header row.
inline constexpr int kCsvFormatVersion = 1;

void write_csv_version(std::ostream& out);

struct CsvTable {
  int format_version = 0;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a named column; throws if absent.
  std::size_t column(const std::string& name) const;
};

// Plain comma splitting; the lab never writes quoted fields.
CsvTable read_csv(std::istream& in);
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace icl
