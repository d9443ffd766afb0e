#pragma once

// Matrix Market reader/writer: `array` (dense, column-major) and
// `coordinate` (sparse, 1-based) formats, real field, general or symmetric.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "rbm/error.hpp"
#include "rbm/linalg.hpp"

namespace rbm::mm {

namespace detail {

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

struct Header {
  bool coordinate = false;
  bool symmetric = false;
  bool skew = false;
};

inline Header parse_banner(const std::string& path, const std::string& line) {
  std::istringstream in(line);
  std::string banner, object, format, field, symmetry;
  in >> banner >> object >> format >> field >> symmetry;
  if (banner != "%%MatrixMarket") throw ParseError(path, 1, "missing %%MatrixMarket banner");
  if (lower(object) != "matrix") throw ParseError(path, 1, "object must be 'matrix'");
  Header h;
  const std::string fmt = lower(format);
  if (fmt == "coordinate")
    h.coordinate = true;
  else if (fmt != "array")
    throw ParseError(path, 1, "format must be 'coordinate' or 'array'");
  const std::string fld = lower(field);
  if (fld != "real" && fld != "double" && fld != "integer")
    throw ParseError(path, 1, "unsupported field '" + field + "'");
  const std::string sym = lower(symmetry);
  if (sym == "symmetric")
    h.symmetric = true;
  else if (sym == "skew-symmetric")
    h.skew = true;
  else if (sym != "general" && !sym.empty())
    throw ParseError(path, 1, "unsupported symmetry '" + symmetry + "'");
  return h;
}

/// Reads the next non-comment, non-blank line; returns false at EOF.
inline bool next_data_line(std::istream& in, std::string& line, std::size_t& lineno) {
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '%') continue;
    return true;
  }
  return false;
}

}  // namespace detail

/// Reads either format into CSR.
inline CsrMatrix read_sparse(const std::filesystem::path& file) {
  const std::string path = file.string();
  std::ifstream in(file);
  if (!in) throw ParseError(path, 0, "cannot open file");
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError(path, 1, "empty file");
  ++lineno;
  const auto h = detail::parse_banner(path, line);
  if (!detail::next_data_line(in, line, lineno)) throw ParseError(path, lineno, "missing size line");
  std::istringstream sz(line);
  long long rows = 0, cols = 0, nnz = 0;
  if (h.coordinate) {
    if (!(sz >> rows >> cols >> nnz)) throw ParseError(path, lineno, "bad size line");
  } else {
    if (!(sz >> rows >> cols)) throw ParseError(path, lineno, "bad size line");
    nnz = rows * cols;
  }
  if (rows < 0 || cols < 0 || nnz < 0) throw ParseError(path, lineno, "negative dimension");
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(h.coordinate ? nnz * (h.symmetric || h.skew ? 2 : 1) : nnz));
  if (h.coordinate) {
    for (long long k = 0; k < nnz; ++k) {
      if (!detail::next_data_line(in, line, lineno))
        throw ParseError(path, lineno, "expected " + std::to_string(nnz) + " entries, got " + std::to_string(k));
      std::istringstream e(line);
      long long i = 0, j = 0;
      double v = 0;
      if (!(e >> i >> j >> v)) throw ParseError(path, lineno, "bad entry line");
      if (i < 1 || i > rows || j < 1 || j > cols) throw ParseError(path, lineno, "index out of range");
      if (!std::isfinite(v)) throw ParseError(path, lineno, "non-finite value");
      t.emplace_back(i - 1, j - 1, v);
      if ((h.symmetric || h.skew) && i != j) t.emplace_back(j - 1, i - 1, h.skew ? -v : v);
    }
  } else {
    // array: column-major; symmetric stores the lower triangle only
    for (long long j = 0; j < cols; ++j) {
      for (long long i = (h.symmetric || h.skew) ? j : 0; i < rows; ++i) {
        if (!detail::next_data_line(in, line, lineno)) throw ParseError(path, lineno, "truncated array data");
        std::istringstream e(line);
        double v = 0;
        if (!(e >> v)) throw ParseError(path, lineno, "bad value");
        if (!std::isfinite(v)) throw ParseError(path, lineno, "non-finite value");
        if (v != 0.0) {
          t.emplace_back(i, j, v);
          if ((h.symmetric || h.skew) && i != j) t.emplace_back(j, i, h.skew ? -v : v);
        }
      }
    }
  }
  CsrMatrix m(rows, cols);
  m.setFromTriplets(t.begin(), t.end());
  return pruned(std::move(m));
}

inline Matrix read_dense(const std::filesystem::path& file) { return to_dense(read_sparse(file)); }

/// Reads an N×1 (or 1×N) matrix as a vector.
inline Vector read_vector(const std::filesystem::path& file) {
  const Matrix m = read_dense(file);
  if (m.cols() == 1) return m.col(0);
  if (m.rows() == 1) return m.row(0).transpose();
  throw ParseError(file.string(), 0, "expected a vector (N×1 or 1×N matrix)");
}

inline void write_dense(const std::filesystem::path& file, const Matrix& m) {
  std::ofstream out(file);
  if (!out) throw ParseError(file.string(), 0, "cannot open file for writing");
  out << "%%MatrixMarket matrix array real general\n";
  out << m.rows() << ' ' << m.cols() << '\n';
  out << std::setprecision(17);
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) out << m(i, j) << '\n';
}

inline void write_sparse(const std::filesystem::path& file, const CsrMatrix& m) {
  std::ofstream out(file);
  if (!out) throw ParseError(file.string(), 0, "cannot open file for writing");
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << m.rows() << ' ' << m.cols() << ' ' << m.nonZeros() << '\n';
  out << std::setprecision(17);
  for (Index i = 0; i < m.outerSize(); ++i)
    for (CsrMatrix::InnerIterator it(m, i); it; ++it)
      out << (it.row() + 1) << ' ' << (it.col() + 1) << ' ' << it.value() << '\n';
}

}  // namespace rbm::mm
