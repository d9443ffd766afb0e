#pragma once

// Discrete LQ cost, its exact gradient and gradient descent with exact line
// search.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <vector>

#include "rbm/dynamics.hpp"
#include "rbm/error.hpp"
#include "rbm/linalg.hpp"

namespace rbm {

/// J(u) = ½∫ (x − x_d)ᵀQ(x − x_d) + uᵀRu dt, discretized by the trapezoid rule.
struct CostSpec {
  CsrMatrix Q;
  Matrix R;
  TargetFn x_d;  ///< zero when empty
  double T = 1.0;

  void validate(const LtiSystem& sys) const {
    if (Q.rows() != sys.dim() || Q.cols() != sys.dim()) throw DimensionError("CostSpec: Q has wrong dimension");
    if (R.rows() != sys.inputs() || R.cols() != sys.inputs()) throw DimensionError("CostSpec: R has wrong dimension");
  }
};

inline double alpha_convexity_constant(const CostSpec& spec) {
  const Matrix& R = spec.R;
  if (R.rows() != R.cols() || R.rows() == 0) throw DimensionError("alpha_convexity_constant: R must be square");
  if ((R - R.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, max_abs(R)))
    throw Error("alpha_convexity_constant: R must be symmetric");
  const double a = Eigen::SelfAdjointEigenSolver<Matrix>(R, Eigen::EigenvaluesOnly).eigenvalues()(0);
  if (!(a > 0.0)) throw Error("alpha_convexity_constant: R is not positive definite (min eigenvalue " + std::to_string(a) + ")");
  return a;
}

namespace detail {

inline double cost_of(const CostSpec& spec, const Trajectory& x, const ControlSignal& u, bool with_target = true) {
  const Vector w = x.grid.trapezoid_weights();
  double s = 0.0;
  for (Index k = 0; k < x.states.cols(); ++k) {
    Vector r = x.states.col(k);
    if (with_target && spec.x_d) r -= spec.x_d(x.grid.node(static_cast<std::size_t>(k)));
    const Vector uk = u.values.col(k);
    s += w(k) * (r.dot(spec.Q * r) + uk.dot(spec.R * uk));
  }
  return 0.5 * s;
}

inline ControlSignal gradient_of(const LtiSystem& sys, const CostSpec& spec, const ControlSignal& u,
                                 const Trajectory& x, const OperatorSource& src) {
  const AdjointTrajectory adj = solve_adjoint(sys, spec.Q, x, spec.x_d, src);
  ControlSignal g{u.grid, spec.R * u.values};
  g.values.noalias() += sys.B.transpose() * adj.costates;
  return g;
}

}  // namespace detail

inline double cost(const LtiSystem& sys, const CostSpec& spec, const ControlSignal& u, const OperatorSource& src) {
  spec.validate(sys);
  return detail::cost_of(spec, solve_forward(sys, u, src), u);
}

/// Gradient in the trapezoid-weighted L² inner product: R u + Bᵀφ at each node.
inline ControlSignal gradient(const LtiSystem& sys, const CostSpec& spec, const ControlSignal& u,
                              const OperatorSource& src) {
  spec.validate(sys);
  return detail::gradient_of(sys, spec, u, solve_forward(sys, u, src), src);
}

struct MinimizeOptions {
  double tol = 1e-6;
  std::size_t max_iter = 10000;
  double grad_floor = 1e-14;
};

struct OptResult {
  ControlSignal control;
  double cost = 0.0;
  std::size_t iterations = 0;
  std::vector<double> cost_history;
  std::vector<double> grad_norm_history;
  bool converged = false;
};

inline OptResult minimize(const LtiSystem& sys, const CostSpec& spec, const OperatorSource& src,
                          std::optional<ControlSignal> u_init = std::nullopt, const MinimizeOptions& opt = {}) {
  spec.validate(sys);
  (void)alpha_convexity_constant(spec);
  OptResult res;
  res.control = u_init ? *u_init : ControlSignal::zero(src.grid(), sys.inputs());
  Trajectory x = solve_forward(sys, res.control, src);
  double J = detail::cost_of(spec, x, res.control);
  res.cost_history.push_back(J);
  const Vector zero_state = Vector::Zero(sys.dim());
  while (res.iterations < opt.max_iter) {
    const ControlSignal g = detail::gradient_of(sys, spec, res.control, x, src);
    const double gg = g.dot(g);
    res.grad_norm_history.push_back(std::sqrt(gg));
    if (std::sqrt(gg) < opt.grad_floor) {
      res.converged = true;
      break;
    }
    const Trajectory y = solve_forward(sys, g, src, zero_state);
    const double curvature = 2.0 * detail::cost_of(spec, y, g, false);
    if (!(curvature > 0.0)) throw Error("minimize: nonpositive curvature along the gradient");
    const double beta = gg / curvature;
    res.control.values -= beta * g.values;
    x.states -= beta * y.states;
    const double J_new = detail::cost_of(spec, x, res.control);
    ++res.iterations;
    res.cost_history.push_back(J_new);
    const double rel = J == 0.0 ? 0.0 : std::abs(J - J_new) / std::abs(J);
    J = J_new;
    if (rel < opt.tol) {
      res.converged = true;
      break;
    }
  }
  res.cost = J;
  return res;
}

/// (2/α)·J(0): every minimizer satisfies |u*|²_{L²} ≤ this.
inline double coercivity_bound(const LtiSystem& sys, const CostSpec& spec, const OperatorSource& src) {
  const double a = alpha_convexity_constant(spec);
  return 2.0 / a * cost(sys, spec, ControlSignal::zero(src.grid(), sys.inputs()), src);
}

inline void write_history_csv(const std::filesystem::path& file, const OptResult& r) {
  std::ofstream out(file);
  if (!out) throw ParseError(file.string(), 0, "cannot open file for writing");
  out << "iteration,cost,gradient_norm\n" << std::setprecision(17);
  for (std::size_t i = 0; i < r.cost_history.size(); ++i) {
    out << i << ',' << r.cost_history[i] << ',';
    if (i < r.grad_norm_history.size()) out << r.grad_norm_history[i];
    out << '\n';
  }
}

}  // namespace rbm
