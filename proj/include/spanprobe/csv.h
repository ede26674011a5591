#ifndef SPANPROBE_CSV_H_
#define SPANPROBE_CSV_H_

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace spanprobe {

// Fixed-precision decimal rendering so that CSV outputs are byte-stable.
std::string FormatReal(double value, int digits = 6);

// Quotes a field when it contains a comma, quote or newline.
std::string CsvField(std::string_view text);
std::string CsvRow(std::span<const std::string> fields);

// Minimal reader for the CSVs this toolkit writes (RFC 4180 quoting).
std::vector<std::vector<std::string>> ParseCsv(std::string_view text);
std::vector<std::vector<std::string>> ReadCsvFile(const std::filesystem::path& path);

// Writes via a temporary sibling and renames, so readers never observe a
// partially written file.
void WriteFileAtomically(const std::filesystem::path& path, std::string_view contents);

}  // namespace spanprobe

#endif  // SPANPROBE_CSV_H_
