#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mpgcn/errors.hpp"

namespace mpgcn {

// Minimal CSV support for the flat, unquoted schemas this project uses.

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

class CsvReader {
 public:
  explicit CsvReader(const std::string& path) : path_(path), in_(path) {
    if (!in_) throw IoError("cannot open " + path);
  }

  // Reads the header row and verifies it matches exactly.
  void expect_header(const std::string& header) {
    std::string line;
    if (!std::getline(in_, line)) throw IngestError(path_ + ": empty file, expected header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != header)
      throw IngestError(path_ + ": header mismatch, expected '" + header + "', got '" + line +
                        "'");
  }

  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(in_, line)) {
      if (line.empty() || line == "\r") continue;
      fields = split_csv_line(line);
      return true;
    }
    return false;
  }

 private:
  std::string path_;
  std::ifstream in_;
};

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : path_(path), out_(path) {
    if (!out_) throw IoError("cannot open " + path + " for writing");
  }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << '\n';
  }

  void raw(const std::string& line) { out_ << line << '\n'; }

  void close() {
    out_.close();
    if (!out_) throw IoError("failed writing " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

// Round-trip-exact double formatting for artifacts that later stages re-read.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace mpgcn
