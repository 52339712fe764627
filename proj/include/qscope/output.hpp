#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "qscope/common.hpp"

namespace qscope {

/// Round-trip-exact float formatting (17 significant digits).
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

enum class OutputFormat { csv, json_lines };

inline OutputFormat output_format_from_string(const std::string& s) {
  if (s == "csv") return OutputFormat::csv;
  if (s == "json_lines") return OutputFormat::json_lines;
  throw ConfigError("unknown output format '" + s + "'");
}

inline std::string output_extension(OutputFormat f) {
  return f == OutputFormat::csv ? ".csv" : ".jsonl";
}

/// Numeric table with a fixed header; rows are emitted in insertion order.
struct OutputTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  void add_row(std::vector<double> row) {
    if (row.size() != header.size())
      throw Error("row width does not match the header");
    rows.push_back(std::move(row));
  }

  void write(std::ostream& out, OutputFormat format) const {
    if (format == OutputFormat::csv) {
      for (std::size_t i = 0; i < header.size(); ++i)
        out << (i ? "," : "") << header[i];
      out << '\n';
      for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i)
          out << (i ? "," : "") << format_double(row[i]);
        out << '\n';
      }
    } else {
      for (const auto& row : rows) {
        out << '{';
        for (std::size_t i = 0; i < row.size(); ++i)
          out << (i ? "," : "") << '"' << header[i]
              << "\":" << format_double(row[i]);
        out << "}\n";
      }
    }
  }

  void write_file(const std::string& path, OutputFormat format) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write to '" + path + "'");
    write(out, format);
  }
};

/// Parse a table back (both formats); used by the round-trip tests and by
/// anything downstream that wants numeric content without a format switch.
inline OutputTable read_table(std::istream& in, OutputFormat format) {
  OutputTable t;
  std::string line;
  if (format == OutputFormat::csv) {
    if (!std::getline(in, line)) return t;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      auto comma = line.find(',', pos);
      if (comma == std::string::npos) comma = line.size();
      t.header.push_back(line.substr(pos, comma - pos));
      pos = comma + 1;
    }
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<double> row;
      std::size_t p = 0;
      while (p <= line.size()) {
        auto comma = line.find(',', p);
        if (comma == std::string::npos) comma = line.size();
        row.push_back(std::stod(line.substr(p, comma - p)));
        p = comma + 1;
      }
      t.add_row(std::move(row));
    }
  } else {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> keys;
      std::vector<double> vals;
      std::size_t p = 0;
      while ((p = line.find('"', p)) != std::string::npos) {
        auto q = line.find('"', p + 1);
        if (q == std::string::npos) throw Error("malformed json line");
        keys.push_back(line.substr(p + 1, q - p - 1));
        auto colon = line.find(':', q);
        if (colon == std::string::npos) throw Error("malformed json line");
        std::size_t end;
        vals.push_back(std::stod(line.substr(colon + 1), &end));
        p = colon + 1 + end;
      }
      if (t.header.empty()) t.header = keys;
      if (keys != t.header) throw Error("inconsistent json_lines keys");
      t.add_row(std::move(vals));
    }
  }
  return t;
}

inline OutputTable read_table_file(const std::string& path,
                                   OutputFormat format) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return read_table(in, format);
}

}  // namespace qscope
