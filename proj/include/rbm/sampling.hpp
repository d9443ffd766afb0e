#pragma once

// Time grids, random schedules ω = (ω_1..ω_K), the piecewise-constant
// operator 𝒜_h(ω,t), the evolution operator S_h(ω,t,s) and exhaustive
// expectations over all schedules for small K.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rbm/error.hpp"
#include "rbm/linalg.hpp"
#include "rbm/splitting.hpp"

namespace rbm {

class TimeGrid {
 public:
  TimeGrid() = default;

  /// Nodes must start at 0 and increase strictly.
  explicit TimeGrid(std::vector<double> nodes) : nodes_(std::move(nodes)) {
    if (nodes_.size() < 2) throw Error("TimeGrid: need at least two nodes");
    if (nodes_.front() != 0.0) throw Error("TimeGrid: first node must be 0");
    for (std::size_t k = 1; k < nodes_.size(); ++k)
      if (!(nodes_[k] > nodes_[k - 1])) throw Error("TimeGrid: nodes must increase strictly");
  }

  std::size_t intervals() const noexcept { return nodes_.size() - 1; }
  double horizon() const noexcept { return nodes_.back(); }
  double node(std::size_t k) const { return nodes_.at(k); }
  const std::vector<double>& nodes() const noexcept { return nodes_; }

  /// h_k = t_k − t_{k−1}, k = 1..K.
  double step(std::size_t k) const { return nodes_.at(k) - nodes_.at(k - 1); }

  double max_step() const {
    double h = 0.0;
    for (std::size_t k = 1; k < nodes_.size(); ++k) h = std::max(h, step(k));
    return h;
  }

  /// Interval k (1-based) with t ∈ [t_{k−1}, t_k).
  std::size_t interval_of(double t) const {
    if (!(t >= 0.0 && t < horizon())) throw Error("TimeGrid: time " + std::to_string(t) + " outside [0, T)");
    const auto it = std::upper_bound(nodes_.begin(), nodes_.end(), t);
    return static_cast<std::size_t>(it - nodes_.begin());
  }

  /// Trapezoid quadrature weights w_0..w_K.
  Vector trapezoid_weights() const {
    const std::size_t K = intervals();
    Vector w = Vector::Zero(static_cast<Index>(K + 1));
    for (std::size_t k = 1; k <= K; ++k) {
      w(static_cast<Index>(k - 1)) += 0.5 * step(k);
      w(static_cast<Index>(k)) += 0.5 * step(k);
    }
    return w;
  }

  bool operator==(const TimeGrid&) const = default;

 private:
  std::vector<double> nodes_{0.0, 1.0};
};

inline TimeGrid uniform_grid(double T, std::size_t K) {
  if (!(T > 0.0)) throw Error("uniform_grid: horizon must be positive");
  if (K == 0) throw Error("uniform_grid: interval count must be at least 1");
  std::vector<double> nodes(K + 1);
  for (std::size_t k = 0; k <= K; ++k) nodes[k] = static_cast<double>(k) * T / static_cast<double>(K);
  nodes.back() = T;
  return TimeGrid(std::move(nodes));
}

// ---------------------------------------------------------------------------
// Random streams

struct SeedSpec {
  std::uint64_t master = 0;
  std::uint64_t realization = 0;
};

/// One independent 64-bit stream per (master, realization).
class Rng {
 public:
  explicit Rng(SeedSpec s) {
    std::seed_seq seq{static_cast<std::uint32_t>(s.master), static_cast<std::uint32_t>(s.master >> 32),
                      static_cast<std::uint32_t>(s.realization), static_cast<std::uint32_t>(s.realization >> 32),
                      0x52424dU};
    engine_.seed(seq);
  }

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Child seed for nested experiment levels.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t salt) {
  std::uint64_t s = master ^ (0x9e3779b97f4a7c15ULL * (salt + 1));
  return detail::splitmix64(s);
}

// ---------------------------------------------------------------------------
// Schedules

struct Schedule {
  TimeGrid grid;
  std::vector<std::size_t> indices;  ///< ω_k for interval k = 1..K stored at k−1
};

/// Inverse-CDF categorical draw in table order.
inline std::size_t draw_subset(const SubsetTable& table, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  const auto& p = table.probabilities();
  for (std::size_t w = 0; w + 1 < p.size(); ++w) {
    acc += p[w];
    if (u < acc) return w;
  }
  return p.size() - 1;
}

inline Schedule draw_schedule(const TimeGrid& grid, const SubsetTable& table, SeedSpec seed) {
  Rng rng(seed);
  Schedule s{grid, std::vector<std::size_t>(grid.intervals())};
  for (auto& w : s.indices) w = draw_subset(table, rng);
  return s;
}

inline Schedule constant_schedule(const TimeGrid& grid, std::size_t id) {
  return {grid, std::vector<std::size_t>(grid.intervals(), id)};
}

inline void check_schedule(const Schedule& s, std::size_t op_count) {
  if (s.indices.size() != s.grid.intervals()) throw DimensionError("schedule length does not match the grid");
  for (auto w : s.indices)
    if (w >= op_count) throw Error("schedule references subset " + std::to_string(w + 1) + " which does not exist");
}

/// 𝒜_h(ω, t) on the half-open interval containing t.
inline const CsrMatrix& operator_at(const Schedule& s, const std::vector<SubsetOperator>& ops, double t) {
  check_schedule(s, ops.size());
  return ops[s.indices[s.grid.interval_of(t) - 1]].matrix;
}

/// S_h(ω, t, s): ordered product of exp(𝒜_{ω_k}·|[t_{k−1}, t_k) ∩ [s, t]|).
inline Matrix evolution_operator(const Schedule& sch, const std::vector<SubsetOperator>& ops, double t, double s) {
  check_schedule(sch, ops.size());
  const double T = sch.grid.horizon();
  if (s > t) throw Error("evolution_operator: requires s <= t");
  if (s < 0.0 || t > T) throw Error("evolution_operator: times outside [0, T]");
  const Index n = ops.empty() ? 0 : ops.front().matrix.rows();
  Matrix S = Matrix::Identity(n, n);
  for (std::size_t k = 1; k <= sch.grid.intervals(); ++k) {
    const double a = std::max(s, sch.grid.node(k - 1));
    const double b = std::min(t, sch.grid.node(k));
    if (!(b > a)) continue;
    S = matrix_exponential(Matrix(to_dense(ops[sch.indices[k - 1]].matrix) * (b - a))) * S;
  }
  return S;
}

/// Σ_ω p(ω)·f(ω) over every schedule on the grid. f receives the index vector.
template <class F>
auto enumerate_expectation(const TimeGrid& grid, const SubsetTable& table, F&& f) {
  const std::size_t K = grid.intervals();
  const std::size_t W = table.size();
  double count = 1.0;
  for (std::size_t k = 0; k < K; ++k) count *= static_cast<double>(W);
  if (count > 1e6)
    throw Error("enumerate_expectation: " + std::to_string(W) + "^" + std::to_string(K) +
                " schedules exceed the enumeration limit of 1e6; use Monte Carlo sampling instead");
  std::vector<std::size_t> idx(K, 0);
  auto weight = [&] {
    double p = 1.0;
    for (auto w : idx) p *= table.probability(w);
    return p;
  };
  using R = std::decay_t<decltype(f(idx))>;
  R acc = f(idx) * weight();
  while (true) {
    std::size_t k = 0;
    while (k < K && ++idx[k] == W) idx[k++] = 0;
    if (k == K) break;
    acc += f(idx) * weight();
  }
  return acc;
}

// ---------------------------------------------------------------------------
// CSV

/// Columns k, t_start, t_end, subset_id (both 1-based).
inline void write_schedule_csv(const std::filesystem::path& file, const Schedule& s) {
  std::ofstream out(file);
  if (!out) throw ParseError(file.string(), 0, "cannot open file for writing");
  out << "k,t_start,t_end,subset_id\n" << std::setprecision(17);
  for (std::size_t k = 1; k <= s.grid.intervals(); ++k)
    out << k << ',' << s.grid.node(k - 1) << ',' << s.grid.node(k) << ',' << s.indices[k - 1] + 1 << '\n';
}

inline Schedule read_schedule_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ParseError(file.string(), 0, "cannot open file");
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError(file.string(), 1, "empty file");
  std::vector<double> nodes{0.0};
  std::vector<std::size_t> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    std::size_t k = 0, id = 0;
    double a = 0, b = 0;
    if (!(row >> k >> a >> b >> id)) throw ParseError(file.string(), lineno, "expected k,t_start,t_end,subset_id");
    if (k != ids.size() + 1) throw ParseError(file.string(), lineno, "intervals out of order");
    if (a != nodes.back()) throw ParseError(file.string(), lineno, "t_start does not match previous t_end");
    if (id == 0) throw ParseError(file.string(), lineno, "subset ids are 1-based");
    nodes.push_back(b);
    ids.push_back(id - 1);
  }
  return {TimeGrid(std::move(nodes)), std::move(ids)};
}

}  // namespace rbm
