#include "bregiot/io.hpp"

#include "bregiot/errors.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

namespace bregiot {

namespace {

bool has_extension(const std::string& path, const std::string& ext) {
  return path.size() > ext.size() && path.compare(path.size() - ext.size(), ext.size(), ext) == 0;
}

void require_extension(const std::string& path, const std::string& ext) {
  if (!has_extension(path, ext)) {
    throw IoError("unsupported file extension (expected " + ext + "): " + path);
  }
}

// strtod rather than stod: stod rejects subnormals as out of range.
bool parse_double(const std::string& cell, double& out) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  if (end == begin) return false;
  for (; *end; ++end) {
    if (*end != ' ' && *end != '\t') return false;
  }
  return true;
}

}  // namespace

Matrix read_matrix(const std::string& path) {
  require_extension(path, ".csv");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);

  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) {
      double value = 0.0;
      if (!parse_double(cell, value)) {
        throw IoError(path + ":" + std::to_string(line_no) + ": malformed number '" + cell + "'");
      }
      row.push_back(value);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw IoError(path + ":" + std::to_string(line_no) + ": ragged row");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) return Matrix(0, 0);

  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

void write_matrix(const std::string& path, const Matrix& m) {
  require_extension(path, ".csv");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  char buf[32];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      if (j) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

void write_report(const std::string& path, const nlohmann::json& report) {
  require_extension(path, ".json");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << report.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

nlohmann::json read_report(const std::string& path) {
  require_extension(path, ".json");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
}

nlohmann::json to_json(const SolveReport& report) {
  return {
      {"iterations", report.iterations},
      {"termination", to_string(report.reason)},
      {"wall_seconds", report.wall_seconds},
      {"objective", report.objective},
      {"residual", report.residual},
      {"step_sizes", report.step_sizes},
  };
}

nlohmann::json to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json to_json(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Matrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw IoError("matrix json must be an array of rows");
  const auto n = static_cast<Eigen::Index>(j.size());
  const auto m = n ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Matrix out(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != m) throw IoError("ragged matrix json");
    for (Eigen::Index k = 0; k < m; ++k) out(i, k) = j[i][k].get<double>();
  }
  return out;
}

}  // namespace bregiot
