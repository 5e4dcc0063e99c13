#pragma once

// Helpers for the delimited text formats (network, peer roster, output tables).

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace p2pgrid {

/// Drops everything from the first '#' and trims whitespace.
std::string strip_comment(const std::string& line);

/// Splits on whitespace and commas; empty fields are skipped.
std::vector<std::string> split_fields(const std::string& line);

/// "key = value" or "key value".
std::pair<std::string, std::string> split_key_value(const std::string& line, const std::string& source,
                                                    int line_no);

double parse_number(const std::string& field, const std::string& source, int line_no);
Eigen::Index parse_index(const std::string& field, const std::string& source, int line_no);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& contents);

/// Four significant digits, locale independent.
std::string format_number(double value);

/// A delimited output table with a fixed header.
class TextTable {
 public:
  explicit TextTable(std::vector<std::string> header) : header_(std::move(header)) {}

  TextTable& add_row(std::vector<std::string> row);
  std::size_t num_rows() const { return rows_.size(); }
  std::string str() const;
  void write(const std::string& path) const { write_text_file(path, str()); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace p2pgrid
