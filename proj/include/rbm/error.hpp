#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rbm {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Raised when a pivot vanishes to working precision during LU factorization.
class FactorizationError : public Error {
 public:
  FactorizationError(std::size_t pivot, double magnitude)
      : Error("LU factorization: pivot " + std::to_string(pivot) +
              " is singular to working precision (|u_kk| = " +
              std::to_string(magnitude) + ")"),
        pivot_(pivot) {}

  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

/// Raised by iterative eigen/singular value routines that hit their cap.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double last_estimate, double gap)
      : Error(what + ": no convergence (last estimate " +
              std::to_string(last_estimate) + ", relative gap " +
              std::to_string(gap) + ")"),
        last_(last_estimate),
        gap_(gap) {}

  double last_estimate() const noexcept { return last_; }
  double gap() const noexcept { return gap_; }

 private:
  double last_;
  double gap_;
};

/// Probability tables that violate normalization or positivity of inclusion.
class TableError : public Error {
 public:
  using Error::Error;
};

/// Parse and I/O failures carrying the offending file and line.
class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& msg)
      : Error(file + ":" + std::to_string(line) + ": " + msg) {}
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

}  // namespace rbm
