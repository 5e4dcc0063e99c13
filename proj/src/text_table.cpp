#include "p2pgrid/text_table.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "p2pgrid/errors.hpp"

namespace p2pgrid {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

std::string strip_comment(const std::string& line) {
  const auto hash = line.find('#');
  return trim(hash == std::string::npos ? line : line.substr(0, hash));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char c : line) {
    if (c == ',' || std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) fields.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) fields.push_back(std::move(current));
  return fields;
}

std::pair<std::string, std::string> split_key_value(const std::string& line, const std::string& source,
                                                    int line_no) {
  const auto eq = line.find('=');
  if (eq != std::string::npos) {
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ParseError(source, line_no, "malformed key/value pair");
    return {key, value};
  }
  const auto fields = split_fields(line);
  if (fields.size() != 2) throw ParseError(source, line_no, "expected 'key = value'");
  return {fields[0], fields[1]};
}

double parse_number(const std::string& field, const std::string& source, int line_no) {
  double value = 0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    if (field == "inf" || field == "+inf") return std::numeric_limits<double>::infinity();
    throw ParseError(source, line_no, "'" + field + "' is not a number");
  }
  if (std::isnan(value)) throw ParseError(source, line_no, "NaN is not allowed");
  return value;
}

Eigen::Index parse_index(const std::string& field, const std::string& source, int line_no) {
  long long value = 0;
  const auto* last = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), last, value);
  if (ec != std::errc() || ptr != last || value < 0) {
    throw ParseError(source, line_no, "'" + field + "' is not a non-negative integer");
  }
  return static_cast<Eigen::Index>(value);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open for reading");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  out << contents;
  if (!out) throw IoError(path, "write failed");
}

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (value == 0) return "0";  // no "-0"
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", value);
  return buf;
}

TextTable& TextTable::add_row(std::vector<std::string> row) {
  if (row.size() != header_.size()) throw Error("table row width does not match header");
  rows_.push_back(std::move(row));
  return *this;
}

std::string TextTable::str() const {
  std::string out;
  auto emit = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out.push_back(',');
      out += cells[i];
    }
    out.push_back('\n');
  };
  emit(header_);
  for (const auto& row : rows_) emit(row);
  return out;
}

}  // namespace p2pgrid
