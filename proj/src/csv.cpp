#include "hosar/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "hosar/error.hpp"

namespace hosar::csv {

std::string format(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

double parse(std::string_view text, const std::string& where) {
  const std::string_view t = trim(text);
  if (t == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (t == "inf") return std::numeric_limits<double>::infinity();
  if (t == "-inf") return -std::numeric_limits<double>::infinity();
  double value = 0;
  const char* first = t.data();
  if (!t.empty() && t.front() == '+') ++first;
  const auto res = std::from_chars(first, t.data() + t.size(), value);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw Error(ErrorCode::Parse, where + ": cannot parse '" + std::string(t) + "' as a number");
  }
  return value;
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "' for reading");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!trim(line).empty()) lines.push_back(line);
  }
  if (in.bad()) throw Error(ErrorCode::Io, "read error on '" + path + "'");
  return lines;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  out << content;
  out.flush();
  if (!out) throw Error(ErrorCode::Io, "write error on '" + path + "'");
}

MatrixXd read_matrix(const std::string& path, bool has_header) {
  const auto lines = read_lines(path);
  const std::size_t first = has_header ? 1 : 0;
  if (lines.size() <= first) throw Error(ErrorCode::Parse, path + ": no data rows");
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = first; i < lines.size(); ++i) rows.push_back(split(lines[i]));
  const std::size_t cols = rows.front().size();
  MatrixXd m(static_cast<Index>(rows.size()), static_cast<Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::string where = path + ":" + std::to_string(r + first + 1);
    if (rows[r].size() != cols) {
      throw Error(ErrorCode::Parse, where + ": expected " + std::to_string(cols) + " fields, got " + std::to_string(rows[r].size()));
    }
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Index>(r), static_cast<Index>(c)) = parse(rows[r][c], where);
  }
  return m;
}

void write_matrix(const std::string& path, const MatrixXd& m, const std::vector<std::string>& header) {
  std::ostringstream out;
  if (!header.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
    out << '\n';
  }
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << format(m(r, c));
    out << '\n';
  }
  write_text(path, out.str());
}

VectorXd read_vector(const std::string& path, bool has_header) {
  const MatrixXd m = read_matrix(path, has_header);
  if (m.cols() != 1) throw Error(ErrorCode::Parse, path + ": expected a single column");
  return m.col(0);
}

void write_vector(const std::string& path, const VectorXd& v, const std::string& header) {
  write_matrix(path, v, header.empty() ? std::vector<std::string>{} : std::vector<std::string>{header});
}

std::string labelled_table(const std::string& corner, const std::vector<std::string>& columns,
                           const std::vector<std::string>& rows, const MatrixXd& cells) {
  std::ostringstream out;
  out << corner;
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  for (Index r = 0; r < cells.rows(); ++r) {
    out << rows[static_cast<std::size_t>(r)];
    for (Index c = 0; c < cells.cols(); ++c) out << ',' << format(cells(r, c));
    out << '\n';
  }
  return out.str();
}

}  // namespace hosar::csv
