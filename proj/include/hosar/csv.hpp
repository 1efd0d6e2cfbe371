#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "hosar/types.hpp"

namespace hosar::csv {

/// Shortest decimal string that parses back to exactly `x`.
std::string format(double x);

/// Full-string parse; throws Parse naming `where` on failure.
double parse(std::string_view text, const std::string& where);

std::vector<std::string> split(std::string_view line, char sep = ',');
std::string_view trim(std::string_view s);

/// Non-empty lines of a text file, trailing '\r' removed.
std::vector<std::string> read_lines(const std::string& path);

void write_text(const std::string& path, const std::string& content);

/// Numeric matrix with an optional header line.
MatrixXd read_matrix(const std::string& path, bool has_header);
void write_matrix(const std::string& path, const MatrixXd& m, const std::vector<std::string>& header = {});

VectorXd read_vector(const std::string& path, bool has_header);
void write_vector(const std::string& path, const VectorXd& v, const std::string& header = {});

/// Table with a leading label column: header `corner,col1,...` and rows `label,v1,...`.
std::string labelled_table(const std::string& corner, const std::vector<std::string>& columns,
                           const std::vector<std::string>& rows, const MatrixXd& cells);

}  // namespace hosar::csv
