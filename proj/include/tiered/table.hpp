#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"

namespace tiered {

/// Observed data O = (W, X, A, Y). Covariates are stored row-major.
struct ObservationTable {
  std::vector<std::string> covariate_names;  // e.g. {"w1", "w2"}
  std::vector<double> w;                     // rows() * covariates()
  std::vector<int> x;
  std::vector<int> a;
  std::vector<double> y;

  std::size_t rows() const { return y.size(); }
  std::size_t covariates() const { return covariate_names.size(); }
  double cov(std::size_t row, std::size_t j) const { return w[row * covariates() + j]; }

  std::optional<std::size_t> covariate_index(std::string_view name) const {
    for (std::size_t j = 0; j < covariate_names.size(); ++j)
      if (covariate_names[j] == name) return j;
    return std::nullopt;
  }

  void push_back(std::span<const double> wrow, int xi, int ai, double yi) {
    w.insert(w.end(), wrow.begin(), wrow.end());
    x.push_back(xi);
    a.push_back(ai);
    y.push_back(yi);
  }

  /// Rows at `idx`, in that order.
  ObservationTable subset(std::span<const std::size_t> idx) const {
    ObservationTable out;
    out.covariate_names = covariate_names;
    const std::size_t p = covariates();
    out.w.reserve(idx.size() * p);
    for (std::size_t i : idx) {
      out.push_back(std::span<const double>(w.data() + i * p, p), x[i], a[i], y[i]);
    }
    return out;
  }

  /// Sorted distinct stratum ids.
  std::vector<int> strata() const {
    std::vector<int> s(x.begin(), x.end());
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
  }

  std::vector<std::size_t> rows_in_stratum(int stratum) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < rows(); ++i)
      if (x[i] == stratum) idx.push_back(i);
    return idx;
  }
};

/// Potential outcomes of simulated units. Kept apart from ObservationTable so
/// estimators have no way to read them.
struct OracleOutcomes {
  std::vector<double> y0;
  std::vector<double> y1;
};

namespace csv {

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, std::size_t line, const std::string& col) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    throw DataError("line " + std::to_string(line) + ": column '" + col +
                    "' is not a finite number: '" + s + "'");
  return v;
}

/// Shortest round-trip decimal form.
inline std::string format(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace csv

/// Reads a CSV with columns x, a, y and any number of covariate columns whose
/// names start with 'w'. Other columns (for instance y0, y1) are ignored.
inline ObservationTable read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV input");
  const auto header = csv::split(line);
  std::map<std::string, std::size_t> where;
  for (std::size_t j = 0; j < header.size(); ++j) where[header[j]] = j;
  for (const char* required : {"x", "a", "y"})
    if (!where.count(required))
      throw DataError(std::string("missing required column '") + required + "'");

  ObservationTable t;
  std::vector<std::size_t> wcols;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (!header[j].empty() && header[j][0] == 'w') {
      t.covariate_names.push_back(header[j]);
      wcols.push_back(j);
    }
  }
  std::vector<double> wrow(wcols.size());
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = csv::split(line);
    if (cells.size() != header.size())
      throw DataError("line " + std::to_string(lineno) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(cells.size()));
    for (std::size_t j = 0; j < wcols.size(); ++j)
      wrow[j] = csv::parse_double(cells[wcols[j]], lineno, header[wcols[j]]);
    const double xv = csv::parse_double(cells[where["x"]], lineno, "x");
    const double av = csv::parse_double(cells[where["a"]], lineno, "a");
    const double yv = csv::parse_double(cells[where["y"]], lineno, "y");
    if (xv != std::floor(xv)) throw DataError("line " + std::to_string(lineno) + ": stratum x must be an integer code");
    if (av != 0.0 && av != 1.0) throw DataError("line " + std::to_string(lineno) + ": exposure a must be 0 or 1");
    t.push_back(wrow, static_cast<int>(xv), static_cast<int>(av), yv);
  }
  if (t.rows() == 0) throw DataError("CSV has a header but no rows");
  return t;
}

inline ObservationTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_csv(in);
}

/// Writes covariates, x, a, y (and y0, y1 when oracle outcomes are given).
inline void write_csv(std::ostream& out, const ObservationTable& t,
                      const OracleOutcomes* oracle = nullptr) {
  for (const auto& name : t.covariate_names) out << name << ',';
  out << "x,a,y";
  if (oracle) out << ",y0,y1";
  out << '\n';
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < t.covariates(); ++j) out << csv::format(t.cov(i, j)) << ',';
    out << t.x[i] << ',' << t.a[i] << ',' << csv::format(t.y[i]);
    if (oracle) out << ',' << csv::format(oracle->y0[i]) << ',' << csv::format(oracle->y1[i]);
    out << '\n';
  }
}

}  // namespace tiered
