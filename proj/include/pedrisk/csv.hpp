#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace pedrisk::csv {

// Shortest representation that round-trips to the same double.
[[nodiscard]] std::string format_double(double value);

[[nodiscard]] std::vector<std::string_view> split(std::string_view line, char sep = ',');

// Throws DataError(line) on anything but a complete finite decimal number.
[[nodiscard]] double parse_double(std::string_view field, std::size_t line);
[[nodiscard]] long long parse_int(std::string_view field, std::size_t line);

[[nodiscard]] std::string_view trim(std::string_view s);

// Reads a line, stripping a trailing '\r'. Returns false at EOF.
bool read_line(std::istream& in, std::string& line);

// Reads the header line and throws DataError unless it equals `expected`.
void expect_header(std::istream& in, std::string_view expected);

}  // namespace pedrisk::csv
