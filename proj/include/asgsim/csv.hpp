#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "asgsim/common.hpp"

// Minimal CSV I/O for numeric tables. Values are written with %.17g so that
// emitted files round-trip bit-exactly through read_csv/write_csv.

namespace asgsim::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;

  std::size_t rows() const {
    return columns.empty() ? 0 : columns.front().size();
  }

  const std::vector<double>& column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return columns[i];
    throw config_error("csv: missing column '" + name + "'");
  }

  bool has_column(const std::string& name) const {
    for (const auto& h : header)
      if (h == name) return true;
    return false;
  }
};

inline std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write(const std::filesystem::path& path, const Table& t) {
  for (const auto& c : t.columns)
    if (c.size() != t.rows())
      throw std::invalid_argument("csv: ragged columns");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw config_error("csv: cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < t.header.size(); ++i) {
    if (i) os << ',';
    os << t.header[i];
  }
  os << '\n';
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      if (c) os << ',';
      os << format_value(t.columns[c][r]);
    }
    os << '\n';
  }
  if (!os) throw config_error("csv: write failed for " + path.string());
}

inline Table read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw config_error("csv: cannot open " + path.string());
  Table t;
  std::string line;
  if (!std::getline(is, line)) throw config_error("csv: empty file " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) t.header.push_back(cell);
  }
  t.columns.resize(t.header.size());
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      if (c >= t.columns.size())
        throw config_error("csv: too many cells at " + path.string() + ":" +
                           std::to_string(lineno));
      try {
        t.columns[c].push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw config_error("csv: bad number '" + cell + "' at " +
                           path.string() + ":" + std::to_string(lineno));
      }
      ++c;
    }
    if (c != t.columns.size())
      throw config_error("csv: short row at " + path.string() + ":" +
                         std::to_string(lineno));
  }
  return t;
}

}  // namespace asgsim::csv
