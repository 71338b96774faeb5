#include "prevalid/datagen.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace prevalid {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t start = 0;
    while (start < cell.size() && cell[start] == ' ') ++start;
    out.push_back(cell.substr(start));
  }
  return out;
}

// Column index suffix for names like "x3"; returns 0 on mismatch.
long column_number(const std::string& name, char prefix) {
  if (name.size() < 2 || name[0] != prefix) return 0;
  char* end = nullptr;
  const long k = std::strtol(name.c_str() + 1, &end, 10);
  return (end && *end == '\0' && k >= 1) ? k : 0;
}

}  // namespace

void write_dataset_csv(const Dataset& data, const std::string& path) {
  data.validate();
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  out << "y";
  for (Index c = 1; c <= data.e(); ++c) out << ",x" << c;
  for (Index c = 1; c <= data.p(); ++c) out << ",z" << c;
  out << '\n';
  char buf[64];
  for (Index i = 0; i < data.n(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", data.y(i));
    out << buf;
    for (Index c = 1; c <= data.e(); ++c) {
      std::snprintf(buf, sizeof buf, ",%.17g", data.X(i, c));
      out << buf;
    }
    for (Index c = 0; c < data.p(); ++c) {
      std::snprintf(buf, sizeof buf, ",%.17g", data.Z(i, c));
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path);
}

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::Io, path + ": missing header row");
  const auto header = split_csv_line(line);

  long y_col = -1;
  std::vector<long> x_cols, z_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& h = header[c];
    if (h == "y") {
      y_col = static_cast<long>(c);
    } else if (long k = column_number(h, 'x')) {
      if (static_cast<long>(x_cols.size()) < k) x_cols.resize(k, -1);
      x_cols[k - 1] = static_cast<long>(c);
    } else if (long k2 = column_number(h, 'z')) {
      if (static_cast<long>(z_cols.size()) < k2) z_cols.resize(k2, -1);
      z_cols[k2 - 1] = static_cast<long>(c);
    } else {
      throw Error(ErrorCode::Io, path + ": unexpected column '" + h + "'");
    }
  }
  if (y_col < 0) throw Error(ErrorCode::Io, path + ": no 'y' column");
  for (long c : x_cols)
    if (c < 0) throw Error(ErrorCode::Io, path + ": x columns are not contiguous from x1");
  for (long c : z_cols)
    if (c < 0) throw Error(ErrorCode::Io, path + ": z columns are not contiguous from z1");
  if (z_cols.empty()) throw Error(ErrorCode::Io, path + ": no z columns");

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw Error(ErrorCode::Io, path + ":" + std::to_string(line_no) + ": wrong number of fields");
    std::vector<double> row(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      char* end = nullptr;
      errno = 0;
      row[c] = std::strtod(cells[c].c_str(), &end);
      if (cells[c].empty() || *end != '\0' || errno == ERANGE)
        throw Error(ErrorCode::Io, path + ":" + std::to_string(line_no) + ": bad number '" + cells[c] + "'");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::Io, path + ": no data rows");

  const Index n = static_cast<Index>(rows.size());
  Dataset data;
  data.y.resize(n);
  data.X.resize(n, static_cast<Index>(x_cols.size()) + 1);
  data.Z.resize(n, static_cast<Index>(z_cols.size()));
  for (Index i = 0; i < n; ++i) {
    data.y(i) = rows[i][y_col];
    data.X(i, 0) = 1.0;
    for (std::size_t c = 0; c < x_cols.size(); ++c) data.X(i, c + 1) = rows[i][x_cols[c]];
    for (std::size_t c = 0; c < z_cols.size(); ++c) data.Z(i, c) = rows[i][z_cols[c]];
  }
  data.validate();
  return data;
}

}  // namespace prevalid
