#include "homophily/csv.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

#include <fmt/core.h>

namespace homophily {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

template <typename T>
T parse_number(const CsvTable& t, std::size_t row, std::size_t col, const char* kind) {
  const std::string& s = t.rows[row][col];
  T value{};
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (s.empty() || ec != std::errc() || ptr != end)
    throw CsvError(fmt::format("{}:{}: column '{}': expected {}, got '{}'", t.source,
                               t.lines[row], t.header[col], kind, s));
  return value;
}

}  // namespace

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == name) return c;
  throw SchemaError(fmt::format("{}: missing column '{}'", source, name));
}

bool CsvTable::has_column(std::string_view name) const {
  for (const auto& h : header)
    if (h == name) return true;
  return false;
}

void CsvTable::require(const std::vector<std::string>& names) const {
  for (const auto& n : names) column(n);
}

int CsvTable::get_int(std::size_t row, std::size_t col) const {
  return parse_number<int>(*this, row, col, "an integer");
}

long long CsvTable::get_long(std::size_t row, std::size_t col) const {
  return parse_number<long long>(*this, row, col, "an integer");
}

double CsvTable::get_double(std::size_t row, std::size_t col) const {
  return parse_number<double>(*this, row, col, "a number");
}

bool CsvTable::get_bool(std::size_t row, std::size_t col) const {
  const std::string& s = rows[row][col];
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw CsvError(fmt::format("{}:{}: column '{}': expected 0/1, got '{}'", source,
                             lines[row], header[col], s));
}

CsvTable read_csv(std::istream& in, std::string source) {
  CsvTable t;
  t.source = std::move(source);
  std::string line;
  int number = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.find('"') != std::string::npos)
      throw CsvError(fmt::format("{}:{}: quoted fields are not supported", t.source, number));
    auto fields = split(line);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size())
      throw CsvError(fmt::format("{}:{}: expected {} fields, found {}", t.source, number,
                                 t.header.size(), fields.size()));
    t.rows.push_back(std::move(fields));
    t.lines.push_back(number);
  }
  if (in.bad()) throw std::runtime_error(fmt::format("{}: read error", t.source));
  return t;
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path));
  return read_csv(in, path);
}

std::string format_double(double v) { return fmt::format("{:.17g}", v); }

CsvWriter::CsvWriter(std::ostream& out, const std::vector<std::string>& header)
    : out_(out), width_(header.size()) {
  row(header);
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  if (fields.size() != width_)
    throw std::logic_error(fmt::format("csv row has {} fields, header has {}",
                                       fields.size(), width_));
  for (std::size_t k = 0; k < fields.size(); ++k) {
    if (k) out_ << ',';
    out_ << fields[k];
  }
  out_ << '\n';
}

}  // namespace homophily
