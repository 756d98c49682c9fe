#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "harlab/errors.hpp"

namespace harlab::harness::detail {

/// Line-oriented reader for comma-separated files with a mandatory header.
/// Fields may be double-quoted; embedded newlines are not supported.
class CsvReader {
 public:
  explicit CsvReader(const std::filesystem::path& path) : path_(path), in_(path) {
    if (!in_) throw DataError(fmt::format("{}: cannot open file", path.string()));
    if (!next()) throw DataError(fmt::format("{}:1: missing header row", path.string()));
    header_ = fields_;
  }

  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::string>& fields() const { return fields_; }
  std::size_t line() const { return line_; }

  /// Advances to the next nonblank row. False at end of file.
  bool next() {
    std::string raw;
    while (std::getline(in_, raw)) {
      ++line_;
      if (!raw.empty() && raw.back() == '\r') raw.pop_back();
      if (line_ == 1 && raw.size() >= 3 && raw.compare(0, 3, "\xEF\xBB\xBF") == 0) raw.erase(0, 3);
      if (raw.find_first_not_of(" \t") == std::string::npos) continue;
      split(raw);
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& message) const {
    throw DataError(fmt::format("{}:{}: {}", path_.string(), line_, message));
  }

  double number(std::size_t col) const {
    std::string_view s = fields_.at(col);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
      fail(fmt::format("column '{}': '{}' is not a finite number", header_.at(col), fields_.at(col)));
    }
    return v;
  }

  long long integer(std::size_t col) const {
    const std::string& s = fields_.at(col);
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || v < 0) {
      fail(fmt::format("column '{}': '{}' is not a non-negative integer", header_.at(col), s));
    }
    return v;
  }

 private:
  void split(const std::string& raw) {
    fields_.clear();
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const char c = raw[i];
      if (quoted) {
        if (c == '"' && i + 1 < raw.size() && raw[i + 1] == '"') {
          cur += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cur += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        fields_.push_back(trim(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (quoted) fail("unterminated quoted field");
    fields_.push_back(trim(cur));
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
  }

  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t line_ = 0;
  std::vector<std::string> header_;
  std::vector<std::string> fields_;
};

/// Quotes a field when it contains a comma or quote.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("{}: cannot open for writing", path.string()));
  return out;
}

}  // namespace harlab::harness::detail
