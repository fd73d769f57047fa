#include "pedrisk/csv.hpp"

#include <charconv>
#include <cmath>
#include <istream>

#include "pedrisk/errors.hpp"

namespace pedrisk::csv {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (value == 0.0) return "0";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

double parse_double(std::string_view field, std::size_t line) {
  field = trim(field);
  if (field.empty()) throw DataError("empty numeric field", line);
  if (field.front() == '+') field.remove_prefix(1);
  double value = 0.0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size() || !std::isfinite(value)) {
    throw DataError("invalid number '" + std::string(field) + "'", line);
  }
  return value;
}

long long parse_int(std::string_view field, std::size_t line) {
  field = trim(field);
  long long value = 0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (field.empty() || res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
    throw DataError("invalid integer '" + std::string(field) + "'", line);
  }
  return value;
}

bool read_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

void expect_header(std::istream& in, std::string_view expected) {
  std::string line;
  if (!read_line(in, line)) throw DataError("missing header, expected '" + std::string(expected) + "'", 1);
  if (trim(line) != expected) {
    throw DataError("unexpected header '" + line + "', expected '" + std::string(expected) + "'", 1);
  }
}

}  // namespace pedrisk::csv
