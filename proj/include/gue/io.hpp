#pragma once

// CSV input.
//
// Scalar data: one number per line, no header.
// Labeled data: header x1,...,xd,y then one row per observation.
// Vector data: header x1,...,xd (no y column).

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gue/core.hpp"

namespace gue {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline bool parse_number(const std::string& s, double& v) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [p, ec] = std::from_chars(first, s.data() + s.size(), v);
  return ec == std::errc() && p == s.data() + s.size() && std::isfinite(v);
}

inline bool is_blank(const std::string& line) { return line.find_first_not_of(" \t\r") == std::string::npos; }

}  // namespace detail

inline Sample read_csv_sample(std::istream& in, const std::string& source = "<csv>") {
  auto fail = [&](std::size_t line, const std::string& msg) -> Error {
    return Error(ErrorCode::data_error, source + ":" + std::to_string(line) + ": " + msg);
  };
  Sample out;
  std::string line;
  std::size_t lineno = 0;
  std::size_t width = 0;
  DatumKind kind = DatumKind::scalar;
  bool started = false;
  std::vector<double> row;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::is_blank(line)) continue;
    const auto fields = detail::split_csv_line(line);
    if (!started) {
      started = true;
      double v = 0.0;
      if (detail::parse_number(fields[0], v)) {
        if (fields.size() != 1) throw fail(lineno, "multi-column data needs a header x1,...,xd[,y]");
        width = 1;
      } else {
        width = fields.size();
        const bool labeled = fields.back() == "y";
        const std::size_t d = labeled ? width - 1 : width;
        if (d == 0) throw fail(lineno, "header needs at least one feature column x1");
        for (std::size_t j = 0; j < d; ++j) {
          if (fields[j] != "x" + std::to_string(j + 1)) {
            throw fail(lineno, "expected header column 'x" + std::to_string(j + 1) + "', got '" + fields[j] + "'");
          }
        }
        kind = labeled ? DatumKind::labeled : DatumKind::vector;
        continue;
      }
    }
    if (fields.size() != width) {
      throw fail(lineno, "expected " + std::to_string(width) + " field(s), got " + std::to_string(fields.size()));
    }
    row.assign(width, 0.0);
    for (std::size_t j = 0; j < width; ++j) {
      if (!detail::parse_number(fields[j], row[j])) throw fail(lineno, "not a finite number: '" + fields[j] + "'");
    }
    switch (kind) {
      case DatumKind::scalar: out.push_back(Datum::scalar(row[0])); break;
      case DatumKind::labeled:
        out.push_back(Datum::labeled(std::span<const double>(row.data(), width - 1), row.back()));
        break;
      case DatumKind::vector: out.push_back(Datum::vector(std::span<const double>(row.data(), width))); break;
    }
  }
  if (out.empty()) throw Error(ErrorCode::data_error, source + ": no data rows");
  return out;
}

inline Sample load_csv_sample(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open data file " + path);
  return read_csv_sample(in, path);
}

}  // namespace gue
