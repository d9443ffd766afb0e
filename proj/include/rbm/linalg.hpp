#pragma once

// Dense/sparse storage, LU solves, spectral norms and the matrix exponential.
// Storage is Eigen; everything else in the library talks to these aliases.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "rbm/error.hpp"

namespace rbm {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using CsrMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Triplet = Eigen::Triplet<double>;

inline Matrix to_dense(const CsrMatrix& m) { return Matrix(m); }

/// Converts to CSR, dropping entries with |a| <= drop_below.
inline CsrMatrix to_csr(const Matrix& m, double drop_below = 0.0) {
  std::vector<Triplet> t;
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      if (std::abs(m(i, j)) > drop_below) t.emplace_back(i, j, m(i, j));
  CsrMatrix out(m.rows(), m.cols());
  out.setFromTriplets(t.begin(), t.end());
  return out;
}

/// Removes stored zeros so that the CSR invariant "no structural zeros" holds.
inline CsrMatrix pruned(CsrMatrix m) {
  m.prune(0.0, 0.0);
  m.makeCompressed();
  return m;
}

inline CsrMatrix sparse_identity(Index n) {
  CsrMatrix id(n, n);
  id.setIdentity();
  return id;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline bool all_finite(const CsrMatrix& m) {
  for (Index k = 0; k < m.nonZeros(); ++k)
    if (!std::isfinite(m.valuePtr()[k])) return false;
  return true;
}

/// Max absolute entry; used to scale pivot and symmetry tolerances.
inline double max_abs(const Matrix& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// LU

/// Partial-pivoting LU of a square dense matrix. Immutable after construction,
/// so concurrent solves against one instance are safe.
class LuFactors {
 public:
  LuFactors() = default;

  Index dim() const noexcept { return dim_; }

  Vector solve(const Vector& b) const {
    if (b.size() != dim_) throw DimensionError("LuFactors::solve: rhs length mismatch");
    return lu_.solve(b);
  }

  Matrix solve(const Matrix& b) const {
    if (b.rows() != dim_) throw DimensionError("LuFactors::solve: rhs rows mismatch");
    return lu_.solve(b);
  }

  /// Solves mᵀ x = b.
  Vector solve_transpose(const Vector& b) const {
    if (b.size() != dim_) throw DimensionError("LuFactors::solve_transpose: rhs length mismatch");
    return lu_.transpose().solve(b);
  }

  /// Solves in place for a contiguous block (used by the CN steppers).
  template <class Derived>
  void solve_in_place(Eigen::MatrixBase<Derived>& b) const {
    b = lu_.solve(b).eval();
  }
  template <class Derived>
  void solve_transpose_in_place(Eigen::MatrixBase<Derived>& b) const {
    b = lu_.transpose().solve(b).eval();
  }

  const Eigen::PartialPivLU<Matrix>& eigen() const noexcept { return lu_; }

 private:
  friend LuFactors lu_factorize(const Matrix& m);
  Eigen::PartialPivLU<Matrix> lu_;
  Index dim_ = 0;
};

/// Factorizes a square matrix with partial pivoting. A pivot with
/// |u_kk| <= n·eps·max|m| raises FactorizationError naming k (0-based).
inline LuFactors lu_factorize(const Matrix& m) {
  if (m.rows() != m.cols()) throw DimensionError("lu_factorize: matrix is not square");
  LuFactors f;
  f.dim_ = m.rows();
  if (f.dim_ == 0) return f;
  f.lu_.compute(m);
  const double scale = std::max(max_abs(m), std::numeric_limits<double>::min());
  const double floor = static_cast<double>(m.rows()) * std::numeric_limits<double>::epsilon() * scale;
  const Matrix& packed = f.lu_.matrixLU();
  for (Index k = 0; k < m.rows(); ++k) {
    const double piv = std::abs(packed(k, k));
    if (!(piv > floor)) throw FactorizationError(static_cast<std::size_t>(k), piv);
  }
  return f;
}

inline LuFactors lu_factorize(const CsrMatrix& m) { return lu_factorize(to_dense(m)); }

// ---------------------------------------------------------------------------
// Norms

struct PowerIterationOptions {
  double tol = 1e-10;
  int max_iter = 50000;
  std::uint64_t seed = 0x9E3779B97F4A7C15ULL;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Deterministic start vector with entries in [0.5, 1.5).
inline Vector positive_start(Index n, std::uint64_t seed) {
  Vector v(n);
  std::uint64_t s = seed;
  for (Index i = 0; i < n; ++i)
    v[i] = 0.5 + static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53;
  return v / v.norm();
}

}  // namespace detail

/// Largest singular value of the linear map given by `apply` (x ↦ Mx) and
/// `apply_t` (y ↦ Mᵀy), by power iteration on MᵀM.
template <class Apply, class ApplyT>
double largest_singular_value(Apply&& apply, ApplyT&& apply_t, Index cols,
                              const PowerIterationOptions& opt = {}) {
  if (cols == 0) throw DimensionError("operator_norm: empty operator");
  Vector v = detail::positive_start(cols, opt.seed);
  double sigma = 0.0;
  double gap = std::numeric_limits<double>::infinity();
  for (int it = 0; it < opt.max_iter; ++it) {
    const Vector w = apply(v);
    const double next = w.norm();
    if (next == 0.0) {
      // v lies in the null space; only possible on the first step for a zero map
      // or by exact cancellation. Retry from a canonical direction once.
      if (it == 0) {
        Vector z = apply_t(Vector(apply(Vector::Ones(cols))));
        if (z.norm() == 0.0) return 0.0;
        v = z / z.norm();
        continue;
      }
      return sigma;
    }
    Vector z = apply_t(w);
    const double zn = z.norm();
    gap = std::abs(next - sigma) / next;
    sigma = next;
    if (zn == 0.0) return sigma;
    v = z / zn;
    if (it > 0 && gap <= opt.tol) return std::max(sigma, std::sqrt(zn));
  }
  throw ConvergenceError("operator_norm", sigma, gap);
}

/// Spectral norm max_{|x|=1} |Mx| for dense or CSR storage.
template <class M>
double operator_norm(const M& m, const PowerIterationOptions& opt = {}) {
  if (m.rows() == 0 || m.cols() == 0) throw DimensionError("operator_norm: empty matrix");
  return largest_singular_value([&](const Vector& x) -> Vector { return m * x; },
                                [&](const Vector& y) -> Vector { return m.transpose() * y; },
                                m.cols(), opt);
}

template <class M>
double operator_norm(const M& m, double tol) {
  PowerIterationOptions opt;
  opt.tol = tol;
  return operator_norm(m, opt);
}

// ---------------------------------------------------------------------------
// Symmetric part and dissipativity

/// λ_max((m + mᵀ)/2). The eigen solver is direct; `tol` is accepted for the
/// contract but the result is accurate to working precision.
inline double symmetric_part_max_eigenvalue(const Matrix& m, double /*tol*/ = 1e-12) {
  if (m.rows() != m.cols()) throw DimensionError("symmetric_part_max_eigenvalue: not square");
  if (m.rows() == 0) throw DimensionError("symmetric_part_max_eigenvalue: empty matrix");
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw ConvergenceError("symmetric_part_max_eigenvalue", std::numeric_limits<double>::quiet_NaN(),
                           std::numeric_limits<double>::quiet_NaN());
  return es.eigenvalues().maxCoeff();
}

inline double symmetric_part_max_eigenvalue(const CsrMatrix& m, double tol = 1e-12) {
  return symmetric_part_max_eigenvalue(to_dense(m), tol);
}

/// Dissipativity tolerance: λ_max(sym) <= 1e-8 · max(1, ‖m‖).
inline constexpr double kDissipativityRelTol = 1e-8;

struct DissipativityReport {
  bool dissipative;
  double lambda_max;  ///< exact value, or the Gershgorin bound when that already certifies
};

/// Checks ⟨x, m x⟩_D <= 0 where ⟨x, y⟩_D = xᵀ diag(d) y (Euclidean if no d).
/// A Gershgorin bound on the symmetric part certifies most stencil parts
/// without an eigen solve; the direct solve runs only when it is inconclusive.
inline DissipativityReport check_dissipative(const CsrMatrix& m,
                                             const std::optional<Vector>& weights = std::nullopt) {
  if (m.rows() != m.cols()) throw DimensionError("check_dissipative: not square");
  const Index n = m.rows();
  CsrMatrix dm = m;
  if (weights) {
    if (weights->size() != n) throw DimensionError("check_dissipative: weight length mismatch");
    dm = weights->asDiagonal() * m;
  }
  const CsrMatrix sym = 0.5 * (CsrMatrix(dm.transpose()) + dm);
  const double norm_bound = std::max(1.0, operator_norm(dm));
  const double tol = kDissipativityRelTol * norm_bound;
  double gersh = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < n; ++i) {
    double diag = 0.0, off = 0.0;
    for (CsrMatrix::InnerIterator it(sym, i); it; ++it) {
      if (it.col() == i)
        diag += it.value();
      else
        off += std::abs(it.value());
    }
    gersh = std::max(gersh, diag + off);
  }
  if (n == 0) return {true, 0.0};
  if (gersh <= tol) return {true, gersh};
  const double lam = symmetric_part_max_eigenvalue(to_dense(dm));
  return {lam <= tol, lam};
}

// ---------------------------------------------------------------------------
// Matrix exponential: scaling and squaring with diagonal Padé approximants of
// degree 3, 5, 7, 9 or 13, chosen from the 1-norm (Higham 2005 thresholds).

namespace detail {

inline double one_norm(const Matrix& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().colwise().sum().maxCoeff();
}

inline void pade_odd_even(const Matrix& a, int degree, Matrix& u, Matrix& v) {
  const Index n = a.rows();
  const Matrix id = Matrix::Identity(n, n);
  const Matrix a2 = a * a;
  switch (degree) {
    case 3: {
      const double b[] = {120., 60., 12., 1.};
      u = a * (b[3] * a2 + b[1] * id);
      v = b[2] * a2 + b[0] * id;
      return;
    }
    case 5: {
      const double b[] = {30240., 15120., 3360., 420., 30., 1.};
      const Matrix a4 = a2 * a2;
      u = a * (b[5] * a4 + b[3] * a2 + b[1] * id);
      v = b[4] * a4 + b[2] * a2 + b[0] * id;
      return;
    }
    case 7: {
      const double b[] = {17297280., 8648640., 1995840., 277200., 25200., 1512., 56., 1.};
      const Matrix a4 = a2 * a2;
      const Matrix a6 = a4 * a2;
      u = a * (b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id);
      v = b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
      return;
    }
    case 9: {
      const double b[] = {17643225600., 8821612800., 2075673600., 302702400., 30270240.,
                          2162160.,     110880.,     3960.,       90.,       1.};
      const Matrix a4 = a2 * a2;
      const Matrix a6 = a4 * a2;
      const Matrix a8 = a6 * a2;
      u = a * (b[9] * a8 + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id);
      v = b[8] * a8 + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
      return;
    }
    default: {
      const double b[] = {64764752532480000., 32382376266240000., 7771770303897600.,
                          1187353796428800.,  129060195264000.,   10559470521600.,
                          670442572800.,      33522128640.,       1323241920.,
                          40840800.,          960960.,            16380.,
                          182.,               1.};
      const Matrix a4 = a2 * a2;
      const Matrix a6 = a4 * a2;
      const Matrix inner_u = a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2);
      u = a * (inner_u + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id);
      const Matrix inner_v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2);
      v = inner_v + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
      return;
    }
  }
}

}  // namespace detail

/// e^m for a square matrix.
inline Matrix matrix_exponential(const Matrix& m) {
  if (m.rows() != m.cols()) throw DimensionError("matrix_exponential: not square");
  const Index n = m.rows();
  if (n == 0) return m;
  if (!m.allFinite()) throw Error("matrix_exponential: non-finite input");
  constexpr std::pair<int, double> kThetas[] = {
      {3, 1.495585217958292e-2}, {5, 2.539398330063230e-1}, {7, 9.504178996162932e-1},
      {9, 2.097847961257068e0}};
  constexpr double kTheta13 = 5.371920351148152;

  const double norm1 = detail::one_norm(m);
  Matrix u, v;
  int squarings = 0;
  bool done = false;
  for (const auto& [deg, theta] : kThetas) {
    if (norm1 <= theta) {
      detail::pade_odd_even(m, deg, u, v);
      done = true;
      break;
    }
  }
  if (!done) {
    if (norm1 > kTheta13)
      squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / kTheta13))));
    const Matrix scaled = m * std::ldexp(1.0, -squarings);
    detail::pade_odd_even(scaled, 13, u, v);
  }
  Matrix r = (v - u).partialPivLu().solve(v + u);
  for (int s = 0; s < squarings; ++s) r = (r * r).eval();
  return r;
}

inline Matrix matrix_exponential(const CsrMatrix& m) { return matrix_exponential(to_dense(m)); }

}  // namespace rbm
