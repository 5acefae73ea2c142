#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "homophily/model.hpp"

namespace homophily {

/// Malformed input; the message carries the source and line number.
class CsvError : public InputError {
 public:
  using InputError::InputError;
};

/// A required column is missing; the message names it.
class SchemaError : public InputError {
 public:
  using InputError::InputError;
};

struct CsvTable {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  /// 1-based file line of each row.
  std::vector<int> lines;

  /// Throws SchemaError when the column is absent.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
  void require(const std::vector<std::string>& names) const;

  int get_int(std::size_t row, std::size_t col) const;
  long long get_long(std::size_t row, std::size_t col) const;
  double get_double(std::size_t row, std::size_t col) const;
  /// Accepts 0/1 and true/false.
  bool get_bool(std::size_t row, std::size_t col) const;
  const std::string& get(std::size_t row, std::size_t col) const { return rows[row][col]; }
};

/// Comma-separated, header row first, no quoting. Blank lines are skipped.
CsvTable read_csv(std::istream& in, std::string source = "<input>");
CsvTable read_csv_file(const std::string& path);

/// Formats doubles with 17 significant digits so values round-trip.
std::string format_double(double v);

class CsvWriter {
 public:
  CsvWriter(std::ostream& out, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& fields);

 private:
  std::ostream& out_;
  std::size_t width_;
};

}  // namespace homophily
