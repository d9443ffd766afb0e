#pragma once

// Crank–Nicolson integration of E ẋ = 𝒜(t) x + B u for a fixed operator or a
// random schedule, and the exact discrete adjoint of that recursion.

#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/SparseLU>

#include "rbm/error.hpp"
#include "rbm/linalg.hpp"
#include "rbm/sampling.hpp"
#include "rbm/splitting.hpp"

namespace rbm {

struct LtiSystem {
  std::optional<CsrMatrix> E;  ///< identity when absent
  CsrMatrix A;
  Matrix B;
  Vector x0;

  Index dim() const noexcept { return A.rows(); }
  Index inputs() const noexcept { return B.cols(); }

  void validate() const {
    const Index n = A.rows();
    if (A.cols() != n) throw DimensionError("LtiSystem: A must be square");
    if (B.rows() != n) throw DimensionError("LtiSystem: B has " + std::to_string(B.rows()) + " rows, expected " + std::to_string(n));
    if (x0.size() != n) throw DimensionError("LtiSystem: x0 has wrong length");
    if (E) {
      if (E->rows() != n || E->cols() != n) throw DimensionError("LtiSystem: E has wrong dimension");
      const Matrix e = to_dense(*E);
      if ((e - e.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, max_abs(e)))
        throw Error("LtiSystem: E must be symmetric");
      Eigen::LLT<Matrix> llt(e);
      if (llt.info() != Eigen::Success) throw Error("LtiSystem: E must be positive definite");
    }
  }
};

/// Values at the grid nodes, one column per node.
struct ControlSignal {
  TimeGrid grid;
  Matrix values;  ///< q × (K+1)

  static ControlSignal zero(const TimeGrid& g, Index q) {
    return {g, Matrix::Zero(q, static_cast<Index>(g.intervals() + 1))};
  }

  /// ⟨u, v⟩ in L² by the trapezoid rule.
  double dot(const ControlSignal& o) const {
    const Vector w = grid.trapezoid_weights();
    double s = 0.0;
    for (Index k = 0; k < values.cols(); ++k) s += w(k) * values.col(k).dot(o.values.col(k));
    return s;
  }
  double l2_norm() const { return std::sqrt(dot(*this)); }
};

struct Trajectory {
  TimeGrid grid;
  Matrix states;  ///< N × (K+1)
};

struct AdjointTrajectory {
  TimeGrid grid;
  Matrix multipliers;  ///< z_0..z_K of the discrete recursion; z_0 = 0
  Matrix costates;     ///< φ_k in the trapezoid-weighted inner product
};

// ---------------------------------------------------------------------------
// Step factorizations

namespace detail {

/// Solver for E − (h/2)𝒜. With E = I only the principal block on the rows and
/// columns touched by 𝒜 is factored; the remainder is the identity.
class StepSolver {
 public:
  StepSolver(const std::optional<CsrMatrix>& E, const CsrMatrix& op, double h) {
    const Index n = op.rows();
    if (E) {
      active_.resize(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) active_[static_cast<std::size_t>(i)] = i;
    } else {
      std::vector<char> touched(static_cast<std::size_t>(n), 0);
      for (Index i = 0; i < op.outerSize(); ++i)
        for (CsrMatrix::InnerIterator it(op, i); it; ++it)
          if (it.value() != 0.0) touched[static_cast<std::size_t>(it.row())] = touched[static_cast<std::size_t>(it.col())] = 1;
      for (Index i = 0; i < n; ++i)
        if (touched[static_cast<std::size_t>(i)]) active_.push_back(i);
    }
    const Index m = static_cast<Index>(active_.size());
    full_ = (m == n);
    if (m == 0) return;
    std::vector<Index> pos(static_cast<std::size_t>(n), -1);
    for (Index a = 0; a < m; ++a) pos[static_cast<std::size_t>(active_[static_cast<std::size_t>(a)])] = a;
    std::vector<Triplet> t;
    for (Index i = 0; i < op.outerSize(); ++i)
      for (CsrMatrix::InnerIterator it(op, i); it; ++it)
        t.emplace_back(pos[static_cast<std::size_t>(it.row())], pos[static_cast<std::size_t>(it.col())], -0.5 * h * it.value());
    if (E) {
      for (Index i = 0; i < E->outerSize(); ++i)
        for (CsrMatrix::InnerIterator it(*E, i); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
    } else {
      for (Index a = 0; a < m; ++a) t.emplace_back(a, a, 1.0);
    }
    Eigen::SparseMatrix<double> block(m, m);
    block.setFromTriplets(t.begin(), t.end());
    const double density = static_cast<double>(block.nonZeros()) / (static_cast<double>(m) * static_cast<double>(m));
    if (m > 400 && density < 0.05) {
      sparse_ = std::make_unique<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
      sparse_->analyzePattern(block);
      sparse_->factorize(block);
      if (sparse_->info() != Eigen::Success) throw Error("step matrix is singular: " + sparse_->lastErrorMessage());
    } else {
      dense_ = lu_factorize(Matrix(block));
    }
  }

  std::size_t active_size() const noexcept { return active_.size(); }

  void solve_in_place(Vector& b) const { apply(b, false); }
  void solve_transpose_in_place(Vector& b) const { apply(b, true); }

 private:
  void apply(Vector& b, bool transpose) const {
    if (active_.empty()) return;
    if (full_) {
      b = run(b, transpose);
      return;
    }
    const Index m = static_cast<Index>(active_.size());
    Vector sub(m);
    for (Index a = 0; a < m; ++a) sub(a) = b(active_[static_cast<std::size_t>(a)]);
    sub = run(sub, transpose);
    for (Index a = 0; a < m; ++a) b(active_[static_cast<std::size_t>(a)]) = sub(a);
  }

  Vector run(const Vector& v, bool transpose) const {
    if (dense_) return transpose ? dense_->solve_transpose(v) : dense_->solve(v);
    return transpose ? Vector(sparse_->transpose().solve(v)) : Vector(sparse_->solve(v));
  }

  std::vector<Index> active_;
  bool full_ = false;
  std::optional<LuFactors> dense_;
  std::unique_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>> sparse_;
};

}  // namespace detail

/// Operators, their transposes and one factorization per (operator, distinct
/// step size). Immutable once built; shared by concurrent solves.
class StepOperators {
 public:
  StepOperators(const LtiSystem& sys, std::vector<CsrMatrix> ops, const TimeGrid& grid,
                std::optional<std::vector<std::size_t>> used = std::nullopt)
      : E_(sys.E), ops_(std::move(ops)) {
    sys.validate();
    for (const auto& op : ops_)
      if (op.rows() != sys.dim() || op.cols() != sys.dim())
        throw DimensionError("StepOperators: operator dimension does not match the system");
    ops_t_.reserve(ops_.size());
    for (const auto& op : ops_) ops_t_.push_back(CsrMatrix(op.transpose()));
    for (std::size_t k = 1; k <= grid.intervals(); ++k) {
      const double h = grid.step(k);
      std::size_t j = 0;
      while (j < hs_.size() && std::abs(hs_[j] - h) > 1e-12 * hs_[j]) ++j;
      if (j == hs_.size()) hs_.push_back(h);
      h_index_.push_back(j);
    }
    grid_ = grid;
    std::vector<char> want(ops_.size(), used ? 0 : 1);
    if (used)
      for (auto w : *used) want.at(w) = 1;
    solvers_.resize(ops_.size() * hs_.size());
    for (std::size_t w = 0; w < ops_.size(); ++w) {
      if (!want[w]) continue;
      for (std::size_t j = 0; j < hs_.size(); ++j) {
        try {
          solvers_[w * hs_.size() + j] = std::make_shared<detail::StepSolver>(E_, ops_[w], hs_[j]);
        } catch (const FactorizationError& e) {
          throw Error("step matrix for subset " + std::to_string(w + 1) + " is singular: " + e.what());
        }
      }
    }
  }

  const TimeGrid& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return ops_.size(); }
  const CsrMatrix& op(std::size_t w) const { return ops_.at(w); }
  const CsrMatrix& op_transpose(std::size_t w) const { return ops_t_.at(w); }
  const std::optional<CsrMatrix>& mass() const noexcept { return E_; }

  /// Step size used on interval k (1-based).
  double step(std::size_t k) const { return hs_[h_index_.at(k - 1)]; }

  const detail::StepSolver& solver(std::size_t w, std::size_t k) const {
    const auto& s = solvers_.at(w * hs_.size() + h_index_.at(k - 1));
    if (!s) throw Error("StepOperators: subset " + std::to_string(w + 1) + " was not factored");
    return *s;
  }

 private:
  std::optional<CsrMatrix> E_;
  std::vector<CsrMatrix> ops_;
  std::vector<CsrMatrix> ops_t_;
  std::vector<double> hs_;
  std::vector<std::size_t> h_index_;
  TimeGrid grid_;
  std::vector<std::shared_ptr<detail::StepSolver>> solvers_;
};

/// Which operator acts on each interval.
struct OperatorSource {
  std::shared_ptr<const StepOperators> ops;
  std::vector<std::size_t> indices;  ///< per interval

  const TimeGrid& grid() const { return ops->grid(); }
};

inline OperatorSource original_source(const LtiSystem& sys, const TimeGrid& grid) {
  auto ops = std::make_shared<const StepOperators>(sys, std::vector<CsrMatrix>{sys.A}, grid);
  return {ops, std::vector<std::size_t>(grid.intervals(), 0)};
}

inline std::shared_ptr<const StepOperators> make_step_operators(const LtiSystem& sys,
                                                                const std::vector<SubsetOperator>& ops,
                                                                const TimeGrid& grid) {
  std::vector<CsrMatrix> mats;
  mats.reserve(ops.size());
  for (const auto& o : ops) mats.push_back(o.matrix);
  return std::make_shared<const StepOperators>(sys, std::move(mats), grid);
}

inline OperatorSource scheduled_source(std::shared_ptr<const StepOperators> ops, const Schedule& s) {
  if (!(s.grid == ops->grid())) throw DimensionError("schedule grid differs from the operator grid");
  check_schedule(s, ops->size());
  return {std::move(ops), s.indices};
}

// ---------------------------------------------------------------------------
// Solvers

namespace detail {

inline void check_source(const OperatorSource& src, const TimeGrid& g) {
  if (!src.ops) throw Error("operator source is empty");
  if (!(src.grid() == g)) throw DimensionError("control grid differs from the operator grid");
  if (src.indices.size() != g.intervals()) throw DimensionError("operator source length does not match the grid");
}

/// y = E x + (h/2)·op·x.
inline Vector explicit_half(const StepOperators& ops, const CsrMatrix& op, const Vector& x, double h) {
  Vector y = ops.mass() ? Vector(*ops.mass() * x) : x;
  y.noalias() += (0.5 * h) * (op * x);
  return y;
}

inline Vector explicit_half_transpose(const StepOperators& ops, std::size_t w, const Vector& z, double h) {
  Vector y = ops.mass() ? Vector(ops.mass()->transpose() * z) : z;
  y.noalias() += (0.5 * h) * (ops.op_transpose(w) * z);
  return y;
}

}  // namespace detail

/// Forward recursion with initial state `x0` (defaults to the system's).
inline Trajectory solve_forward(const LtiSystem& sys, const ControlSignal& u, const OperatorSource& src,
                                const std::optional<Vector>& x0 = std::nullopt) {
  detail::check_source(src, u.grid);
  if (u.values.rows() != sys.inputs()) throw DimensionError("control dimension does not match B");
  const std::size_t K = u.grid.intervals();
  if (static_cast<std::size_t>(u.values.cols()) != K + 1) throw DimensionError("control has wrong number of nodes");
  const auto& ops = *src.ops;
  Trajectory x{u.grid, Matrix(sys.dim(), static_cast<Index>(K + 1))};
  x.states.col(0) = x0 ? *x0 : sys.x0;
  if (x.states.rows() != x.states.col(0).size()) throw DimensionError("initial state has wrong length");
  const bool has_input = sys.B.size() > 0 && !sys.B.isZero(0.0);
  Vector v;
  for (std::size_t k = 1; k <= K; ++k) {
    const std::size_t w = src.indices[k - 1];
    const double h = ops.step(k);
    v = detail::explicit_half(ops, ops.op(w), x.states.col(static_cast<Index>(k - 1)), h);
    if (has_input)
      v.noalias() += (0.5 * h) * (sys.B * (u.values.col(static_cast<Index>(k - 1)) + u.values.col(static_cast<Index>(k))));
    ops.solver(w, k).solve_in_place(v);
    x.states.col(static_cast<Index>(k)) = v;
  }
  return x;
}

/// Target state x_d evaluated on the grid.
using TargetFn = std::function<Vector(double)>;

/// Exact adjoint of the forward recursion for the state cost
/// ½ Σ_k w_k (x_k − x_d)ᵀ Q (x_k − x_d) with trapezoid weights w_k.
inline AdjointTrajectory solve_adjoint(const LtiSystem& sys, const CsrMatrix& Q, const Trajectory& x,
                                       const TargetFn& x_d, const OperatorSource& src) {
  detail::check_source(src, x.grid);
  const Index n = sys.dim();
  if (Q.rows() != n || Q.cols() != n) throw DimensionError("Q has wrong dimension");
  if (x.states.rows() != n) throw DimensionError("trajectory has wrong state dimension");
  const std::size_t K = x.grid.intervals();
  const auto& ops = *src.ops;
  const Vector w = x.grid.trapezoid_weights();
  AdjointTrajectory adj{x.grid, Matrix::Zero(n, static_cast<Index>(K + 1)), Matrix::Zero(n, static_cast<Index>(K + 1))};
  auto residual = [&](std::size_t k) -> Vector {
    Vector r = x.states.col(static_cast<Index>(k));
    if (x_d) r -= x_d(x.grid.node(k));
    return r;
  };
  Vector rhs;
  for (std::size_t k = K; k >= 1; --k) {
    rhs = w(static_cast<Index>(k)) * (Q * residual(k));
    if (k < K)
      rhs += detail::explicit_half_transpose(ops, src.indices[k], adj.multipliers.col(static_cast<Index>(k + 1)), ops.step(k + 1));
    ops.solver(src.indices[k - 1], k).solve_transpose_in_place(rhs);
    adj.multipliers.col(static_cast<Index>(k)) = rhs;
  }
  for (std::size_t k = 0; k <= K; ++k) {
    Vector phi = Vector::Zero(n);
    if (k >= 1) phi += ops.step(k) * adj.multipliers.col(static_cast<Index>(k));
    if (k + 1 <= K) phi += ops.step(k + 1) * adj.multipliers.col(static_cast<Index>(k + 1));
    adj.costates.col(static_cast<Index>(k)) = phi / (2.0 * w(static_cast<Index>(k)));
  }
  return adj;
}

// ---------------------------------------------------------------------------
// Errors and bounds

struct ErrorTrajectory {
  Vector pointwise;   ///< |x_h(t_k) − x(t_k)|
  double max = 0.0;
  double relative_max = 0.0;  ///< max / max_k |x(t_k)|
};

inline ErrorTrajectory error_trajectory(const Trajectory& xh, const Trajectory& x) {
  if (!(xh.grid == x.grid)) throw DimensionError("error_trajectory: grids differ");
  if (xh.states.rows() != x.states.rows()) throw DimensionError("error_trajectory: dimensions differ");
  ErrorTrajectory e;
  e.pointwise = (xh.states - x.states).colwise().norm().transpose();
  e.max = e.pointwise.size() ? e.pointwise.maxCoeff() : 0.0;
  const double ref = x.states.colwise().norm().maxCoeff();
  e.relative_max = ref > 0.0 ? e.max / ref : e.max;
  return e;
}

/// Norm in the inner product diag(d), Euclidean when d is absent.
inline double weighted_norm(const Vector& x, const std::optional<Vector>& d) {
  if (!d) return x.norm();
  return std::sqrt((d->array() * x.array().square()).sum());
}

/// |x₀| + |Bu|_{L¹}; bounds every state of a dissipative CN trajectory.
inline double uniform_state_bound(const LtiSystem& sys, const ControlSignal& u,
                                  const std::optional<Vector>& weights = std::nullopt) {
  const Vector w = u.grid.trapezoid_weights();
  double l1 = 0.0;
  for (Index k = 0; k < u.values.cols(); ++k) l1 += w(k) * weighted_norm(sys.B * u.values.col(k), weights);
  return weighted_norm(sys.x0, weights) + l1;
}

// ---------------------------------------------------------------------------
// CSV

inline void write_trajectory_csv(const std::filesystem::path& file, const TimeGrid& grid, const Matrix& values,
                                 const std::string& prefix) {
  std::ofstream out(file);
  if (!out) throw ParseError(file.string(), 0, "cannot open file for writing");
  out << "t";
  for (Index i = 0; i < values.rows(); ++i) out << ',' << prefix << '_' << i + 1;
  out << '\n' << std::setprecision(17);
  for (Index k = 0; k < values.cols(); ++k) {
    out << grid.node(static_cast<std::size_t>(k));
    for (Index i = 0; i < values.rows(); ++i) out << ',' << values(i, k);
    out << '\n';
  }
}

inline void write_csv(const std::filesystem::path& file, const Trajectory& x) {
  write_trajectory_csv(file, x.grid, x.states, "x");
}

inline void write_csv(const std::filesystem::path& file, const ControlSignal& u) {
  write_trajectory_csv(file, u.grid, u.values, "u");
}

}  // namespace rbm
