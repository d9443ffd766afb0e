#pragma once

// Benchmark systems with their decompositions and subset tables: the 1D and
// 3D Neumann heat equations, the block splitting of symmetric diagonally
// dominant matrices and the interacting-particle batch mapping.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rbm/dynamics.hpp"
#include "rbm/error.hpp"
#include "rbm/linalg.hpp"
#include "rbm/matrix_market.hpp"
#include "rbm/optimizer.hpp"
#include "rbm/sampling.hpp"
#include "rbm/splitting.hpp"

namespace rbm {

struct Model {
  LtiSystem sys;
  CostSpec cost;
  Decomposition decomposition;
  SubsetTable table;
};

// ---------------------------------------------------------------------------
// 1D heat equation

enum class Heat1dCase { i, ii, iii, iv };

/// `domain`: the grid spans [−L, L]. `half_domain`: the grid spans
/// [−L/2, L/2], i.e. Δξ = L/(N−1).
enum class Heat1dSpacing { domain, half_domain };

struct Heat1dConfig {
  std::size_t N = 61;
  double L = 1.5;
  double T = 0.5;
  Heat1dCase which = Heat1dCase::i;
  Heat1dSpacing spacing = Heat1dSpacing::domain;
};

inline std::size_t heat1d_part_count(Heat1dCase c) {
  switch (c) {
    case Heat1dCase::i: return 2;
    case Heat1dCase::ii: return 3;
    default: return 4;
  }
}

inline Heat1dCase parse_heat1d_case(const std::string& s) {
  if (s == "i" || s == "1") return Heat1dCase::i;
  if (s == "ii" || s == "2") return Heat1dCase::ii;
  if (s == "iii" || s == "3") return Heat1dCase::iii;
  if (s == "iv" || s == "4") return Heat1dCase::iv;
  throw Error("unknown heat-1D case '" + s + "' (expected i, ii, iii or iv)");
}

inline std::string to_string(Heat1dCase c) {
  switch (c) {
    case Heat1dCase::i: return "i";
    case Heat1dCase::ii: return "ii";
    case Heat1dCase::iii: return "iii";
    default: return "iv";
  }
}

inline double heat1d_half_length(const Heat1dConfig& cfg) {
  return cfg.spacing == Heat1dSpacing::domain ? cfg.L : 0.5 * cfg.L;
}

inline Model build_heat1d(const Heat1dConfig& cfg) {
  const std::size_t M = heat1d_part_count(cfg.which);
  if (cfg.N < 3) throw Error("build_heat1d: need N >= 3");
  const std::size_t n = cfg.N - 1;
  if (n % M != 0)
    throw Error("build_heat1d: N-1 = " + std::to_string(n) + " is not divisible by M = " + std::to_string(M));
  if (!(cfg.L > 0.0) || !(cfg.T > 0.0)) throw Error("build_heat1d: L and T must be positive");
  const Index N = static_cast<Index>(cfg.N);
  const double ell = heat1d_half_length(cfg);
  const double dx = 2.0 * ell / static_cast<double>(n);
  const double c = 1.0 / (dx * dx);

  auto element = [&](std::size_t i) {
    // Ã_i couples nodes i−1 and i (1-based i)
    double b[2][2] = {{-1, 1}, {1, -1}};
    if (i == 1) b[0][0] = -2, b[0][1] = 2;
    if (i == n) b[1][0] = 2, b[1][1] = -2;
    std::vector<Triplet> t;
    const Index a = static_cast<Index>(i - 1);
    for (int r = 0; r < 2; ++r)
      for (int s = 0; s < 2; ++s) t.emplace_back(a + r, a + s, c * b[r][s]);
    return t;
  };

  std::vector<CsrMatrix> parts;
  std::vector<Triplet> all;
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<Triplet> t;
    for (std::size_t i = n * m / M + 1; i <= n * (m + 1) / M; ++i) {
      auto e = element(i);
      t.insert(t.end(), e.begin(), e.end());
    }
    all.insert(all.end(), t.begin(), t.end());
    CsrMatrix p(N, N);
    p.setFromTriplets(t.begin(), t.end());
    parts.push_back(pruned(std::move(p)));
  }
  CsrMatrix A(N, N);
  A.setFromTriplets(all.begin(), all.end());

  Vector xi(N), weights(N);
  for (Index k = 0; k < N; ++k) {
    xi(k) = -ell + dx * static_cast<double>(k);
    weights(k) = (k == 0 || k == N - 1) ? 0.5 * dx : dx;
  }
  const double eps = 1e-12 * ell;
  Matrix B = Matrix::Zero(N, 1);
  for (Index k = 0; k < N; ++k)
    if (xi(k) >= -ell / 3.0 - eps && xi(k) <= eps) B(k, 0) = 1.0;
  Vector x0(N);
  for (Index k = 0; k < N; ++k) x0(k) = std::exp(-xi(k) * xi(k)) + xi(k) * xi(k) * std::exp(-ell * ell);

  // trapezoid rule on [−ℓ, 0]
  std::vector<Triplet> q;
  Index last = -1;
  for (Index k = 0; k < N; ++k)
    if (xi(k) <= eps) last = k;
  for (Index k = 0; k <= last; ++k) q.emplace_back(k, k, 100.0 * ((k == 0 || k == last) ? 0.5 * dx : dx));
  CsrMatrix Q(N, N);
  Q.setFromTriplets(q.begin(), q.end());

  Model model;
  model.sys = {std::nullopt, A, B, x0};
  model.cost = {Q, Matrix::Identity(1, 1), {}, cfg.T};
  model.decomposition = make_decomposition(std::move(parts), A, weights);
  switch (cfg.which) {
    case Heat1dCase::iv: model.table = make_subset_table(4, {{{0, 2}, 0.5}, {{1, 3}, 0.5}}); break;
    default: model.table = uniform_singletons(M);
  }
  return model;
}

// ---------------------------------------------------------------------------
// 3D heat equation

struct Heat3dConfig {
  std::size_t nodes = 16;  ///< per axis
  double L = 0.75;
  double T = 2.0;
  std::size_t M = 8;
  std::size_t P = 1;
  std::uint64_t grouping_seed = 0;
};

/// Seeded Fisher–Yates shuffle.
template <class T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
  Rng rng({seed, 0x67726f7570ULL});
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
    std::swap(v[i - 1], v[std::min(j, i - 1)]);
  }
}

inline Model build_heat3d(const Heat3dConfig& cfg) {
  const std::size_t n = cfg.nodes;
  if (n < 2) throw Error("build_heat3d: need at least 2 nodes per axis");
  if (cfg.P < 1 || cfg.P > cfg.M) throw Error("build_heat3d: need 1 <= P <= M");
  const Index N = static_cast<Index>(n * n * n);
  const double dx = 2.0 * cfg.L / static_cast<double>(n - 1);
  const double c = 1.0 / (dx * dx);
  auto id = [n](std::size_t i, std::size_t j, std::size_t k) { return static_cast<Index>(i + n * (j + n * k)); };
  auto boundary = [n](std::size_t i) { return i == 0 || i + 1 == n; };
  auto w1 = [&](std::size_t i) { return boundary(i) ? 0.5 * dx : dx; };

  struct Pair {
    Index p, q;
    double apq, aqp;
  };
  std::vector<Pair> pairs;
  std::vector<Triplet> at;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t idx[3] = {i, j, k};
        for (int axis = 0; axis < 3; ++axis) {
          if (idx[axis] + 1 >= n) continue;
          std::size_t nb[3] = {i, j, k};
          ++nb[axis];
          const Index p = id(i, j, k), q = id(nb[0], nb[1], nb[2]);
          // ghost-node Neumann condition doubles the coupling toward the interior
          const double apq = c * (boundary(idx[axis]) ? 2.0 : 1.0);
          const double aqp = c * (boundary(nb[axis]) ? 2.0 : 1.0);
          pairs.push_back({p, q, apq, aqp});
        }
      }
  for (const auto& pr : pairs) {
    at.emplace_back(pr.p, pr.q, pr.apq);
    at.emplace_back(pr.p, pr.p, -pr.apq);
    at.emplace_back(pr.q, pr.p, pr.aqp);
    at.emplace_back(pr.q, pr.q, -pr.aqp);
  }
  CsrMatrix A(N, N);
  A.setFromTriplets(at.begin(), at.end());

  seeded_shuffle(pairs, cfg.grouping_seed);
  std::vector<std::vector<Triplet>> groups(cfg.M);
  for (std::size_t g = 0; g < pairs.size(); ++g) {
    const auto& pr = pairs[g];
    auto& t = groups[g % cfg.M];
    t.emplace_back(pr.p, pr.q, pr.apq);
    t.emplace_back(pr.p, pr.p, -pr.apq);
    t.emplace_back(pr.q, pr.p, pr.aqp);
    t.emplace_back(pr.q, pr.q, -pr.aqp);
  }
  std::vector<CsrMatrix> parts;
  for (auto& t : groups) {
    CsrMatrix p(N, N);
    p.setFromTriplets(t.begin(), t.end());
    parts.push_back(std::move(p));
  }

  Vector weights(N), x0(N);
  Matrix B = Matrix::Zero(N, 1);
  std::vector<Triplet> q;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < n; ++i) {
        const Index p = id(i, j, k);
        weights(p) = w1(i) * w1(j) * w1(k);
        const double x = -cfg.L + dx * static_cast<double>(i);
        const double y = -cfg.L + dx * static_cast<double>(j);
        const double z = -cfg.L + dx * static_cast<double>(k);
        x0(p) = std::exp(-(x * x + y * y + z * z) / (8.0 * cfg.L * cfg.L));
        if (k + 1 == n) B(p, 0) = 2.0 / dx;
        if (i == 0) q.emplace_back(p, p, 2000.0 * w1(j) * w1(k));
      }
  CsrMatrix Q(N, N);
  Q.setFromTriplets(q.begin(), q.end());

  Model model;
  model.sys = {std::nullopt, A, B, x0};
  model.cost = {Q, Matrix::Constant(1, 1, 2.0), {}, cfg.T};
  model.decomposition = make_decomposition(std::move(parts), A, weights);
  model.table = uniform_subsets_of_size(cfg.M, cfg.P);
  return model;
}

// ---------------------------------------------------------------------------
// Block splitting of symmetric diagonally dominant matrices

/// Part index of block pair (p, q), q ≥ p, 0-based, row-major.
inline std::size_t block_pair_index(std::size_t p, std::size_t q, std::size_t P) {
  return p * P - p * (p - 1) / 2 + (q - p);
}

inline void check_symmetric_dominant(const Matrix& A) {
  if (A.rows() != A.cols()) throw DimensionError("matrix must be square");
  const double tol = 1e-12 * std::max(1.0, max_abs(A));
  for (Index i = 0; i < A.rows(); ++i)
    for (Index j = i + 1; j < A.cols(); ++j)
      if (std::abs(A(i, j) - A(j, i)) > tol)
        throw Error("matrix is not symmetric at (" + std::to_string(i + 1) + ", " + std::to_string(j + 1) + ")");
  for (Index i = 0; i < A.rows(); ++i) {
    const double off = A.row(i).cwiseAbs().sum() - std::abs(A(i, i));
    if (!(-A(i, i) > off))
      throw Error("matrix is not strictly diagonally dominant with negative diagonal in row " + std::to_string(i + 1));
  }
}

inline std::pair<Decomposition, SubsetTable> build_block_split(const CsrMatrix& A_in, std::size_t P) {
  const Matrix A = to_dense(A_in);
  check_symmetric_dominant(A);
  const Index N = A.rows();
  if (P == 0 || static_cast<std::size_t>(N) % P != 0)
    throw Error("build_block_split: block count " + std::to_string(P) + " does not divide N = " + std::to_string(N));
  std::vector<std::size_t> block(static_cast<std::size_t>(N));
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t i = p * static_cast<std::size_t>(N) / P; i < (p + 1) * static_cast<std::size_t>(N) / P; ++i) block[i] = p;
  const std::size_t M = P * (P + 1) / 2;
  std::vector<std::vector<Triplet>> t(M);
  for (Index i = 0; i < N; ++i) {
    const std::size_t bi = block[static_cast<std::size_t>(i)];
    const double off = A.row(i).cwiseAbs().sum() - std::abs(A(i, i));
    t[block_pair_index(bi, bi, P)].emplace_back(i, i, A(i, i) + off);
    for (Index j = i + 1; j < N; ++j) {
      const double a = A(i, j);
      if (a == 0.0) continue;
      const std::size_t bj = block[static_cast<std::size_t>(j)];
      auto& dst = t[block_pair_index(std::min(bi, bj), std::max(bi, bj), P)];
      dst.emplace_back(i, i, -std::abs(a));
      dst.emplace_back(i, j, a);
      dst.emplace_back(j, i, a);
      dst.emplace_back(j, j, -std::abs(a));
    }
  }
  std::vector<CsrMatrix> parts;
  for (auto& tm : t) {
    CsrMatrix p(N, N);
    p.setFromTriplets(tm.begin(), tm.end());
    parts.push_back(std::move(p));
  }
  return {make_decomposition(std::move(parts), to_csr(A)), uniform_singletons(M)};
}

/// Dense symmetric matrix with negative diagonal and strict row dominance.
inline Matrix random_dominant_matrix(std::size_t N, std::uint64_t seed, double density = 1.0) {
  Rng rng({seed, 0x646f6dULL});
  Matrix A = Matrix::Zero(static_cast<Index>(N), static_cast<Index>(N));
  for (Index i = 0; i < A.rows(); ++i)
    for (Index j = i + 1; j < A.cols(); ++j)
      if (rng.uniform() < density) A(i, j) = A(j, i) = 2.0 * rng.uniform() - 1.0;
  for (Index i = 0; i < A.rows(); ++i) A(i, i) = -(A.row(i).cwiseAbs().sum() + 0.1 + rng.uniform());
  return A;
}

// ---------------------------------------------------------------------------
// Interacting particles

struct ParticleConfig {
  std::size_t N = 4;
  std::size_t P = 2;
  std::optional<Matrix> coefficients;  ///< a_ij, default 1/(1+|i−j|)
};

/// N!/((P!)^{N/P}(N/P)!) as a double.
inline double particle_partition_count(std::size_t N, std::size_t P) {
  double lg = std::lgamma(static_cast<double>(N) + 1.0) -
              static_cast<double>(N / P) * std::lgamma(static_cast<double>(P) + 1.0) -
              std::lgamma(static_cast<double>(N / P) + 1.0);
  return std::round(std::exp(lg));
}

/// Every partition of {0..N−1} into batches of size P, canonically ordered.
inline std::vector<std::vector<std::vector<std::size_t>>> enumerate_batch_partitions(std::size_t N, std::size_t P) {
  if (P < 1 || N % P != 0) throw Error("batch size " + std::to_string(P) + " does not divide N = " + std::to_string(N));
  if (particle_partition_count(N, P) > 1e5)
    throw Error("particle partition count exceeds the enumeration limit of 1e5");
  std::vector<std::vector<std::vector<std::size_t>>> out;
  std::vector<std::vector<std::size_t>> cur;
  std::vector<char> used(N, 0);
  std::vector<std::size_t> batch;
  // recursive: the smallest free index opens a new batch
  std::function<void()> open;
  std::function<void(std::size_t)> fill = [&](std::size_t from) {
    if (batch.size() == P) {
      cur.push_back(batch);
      open();
      cur.pop_back();
      return;
    }
    for (std::size_t j = from; j < N; ++j) {
      if (used[j]) continue;
      used[j] = 1;
      batch.push_back(j);
      fill(j + 1);
      batch.pop_back();
      used[j] = 0;
    }
  };
  open = [&] {
    std::size_t first = 0;
    while (first < N && used[first]) ++first;
    if (first == N) {
      out.push_back(cur);
      return;
    }
    const auto saved = batch;
    batch.clear();
    used[first] = 1;
    batch.push_back(first);
    fill(first + 1);
    used[first] = 0;
    batch = saved;
  };
  open();
  return out;
}

/// Part index of ordered pair (i, j), i ≠ j.
inline std::size_t particle_pair_index(std::size_t i, std::size_t j, std::size_t N) {
  return i * (N - 1) + (j < i ? j : j - 1);
}

inline std::pair<Decomposition, SubsetTable> build_particles(const ParticleConfig& cfg) {
  const std::size_t N = cfg.N, P = cfg.P;
  if (P < 2) throw Error("build_particles: batch size must be at least 2");
  if (N % P != 0) throw Error("build_particles: batch size does not divide N");
  Matrix a(static_cast<Index>(N), static_cast<Index>(N));
  if (cfg.coefficients) {
    a = *cfg.coefficients;
    if (a.rows() != static_cast<Index>(N) || a.cols() != static_cast<Index>(N))
      throw DimensionError("build_particles: coefficient matrix must be N x N");
  } else {
    for (Index i = 0; i < a.rows(); ++i)
      for (Index j = 0; j < a.cols(); ++j) a(i, j) = 1.0 / (1.0 + std::abs(static_cast<double>(i - j)));
  }
  const auto partitions = enumerate_batch_partitions(N, P);
  const Index n = static_cast<Index>(N);
  std::vector<CsrMatrix> parts(N * (N - 1), CsrMatrix(n, n));
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      if (i == j) continue;
      const double v = a(static_cast<Index>(i), static_cast<Index>(j)) / static_cast<double>(N - 1);
      std::vector<Triplet> t;
      t.emplace_back(static_cast<Index>(i), static_cast<Index>(j), v);
      t.emplace_back(static_cast<Index>(i), static_cast<Index>(i), -v);
      parts[particle_pair_index(i, j, N)].setFromTriplets(t.begin(), t.end());
    }
  SubsetSpec spec;
  const double p = 1.0 / static_cast<double>(partitions.size());
  for (const auto& part : partitions) {
    std::vector<std::size_t> ids;
    for (const auto& b : part)
      for (auto i : b)
        for (auto j : b)
          if (i != j) ids.push_back(particle_pair_index(i, j, N));
    spec.push_back({std::move(ids), p});
  }
  auto d = make_decomposition(std::move(parts));
  return {std::move(d), make_subset_table(N * (N - 1), std::move(spec))};
}

/// Partitions containing each ordered pair in a common batch, as exact counts.
inline std::vector<std::uint64_t> particle_inclusion_counts(std::size_t N, std::size_t P) {
  const auto partitions = enumerate_batch_partitions(N, P);
  std::vector<std::uint64_t> counts(N * (N - 1), 0);
  for (const auto& part : partitions)
    for (const auto& b : part)
      for (auto i : b)
        for (auto j : b)
          if (i != j) ++counts[particle_pair_index(i, j, N)];
  return counts;
}

// ---------------------------------------------------------------------------
// Systems from files

struct SystemFiles {
  std::optional<std::filesystem::path> E;
  std::filesystem::path A;
  std::filesystem::path B;
  std::optional<std::filesystem::path> x0;
  std::optional<std::filesystem::path> coordinates;  ///< CSV with one ξ per line
  double beta = 0.4;
  double L = 5.0;
  std::optional<std::filesystem::path> Q;
  std::optional<std::filesystem::path> R;
  double T = 1.0;
};

inline std::vector<double> read_coordinates_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ParseError(file.string(), 0, "cannot open file");
  std::vector<double> xs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream row(line.substr(0, line.find(',')));
    double v;
    if (!(row >> v)) {
      if (xs.empty() && lineno == 1) continue;  // header
      throw ParseError(file.string(), lineno, "expected a coordinate value");
    }
    xs.push_back(v);
  }
  return xs;
}

struct LoadedSystem {
  LtiSystem sys;
  std::optional<CostSpec> cost;
};

/// Loads E, A, B and the initial state. Without an x0 file the profile
/// e^{−β²ξ²} − e^{−β²L²} is evaluated on the coordinate file.
inline LoadedSystem load_system(const SystemFiles& f) {
  LoadedSystem out;
  auto& s = out.sys;
  s.A = mm::read_sparse(f.A);
  s.B = mm::read_dense(f.B);
  if (f.E) s.E = mm::read_sparse(*f.E);
  if (f.x0) {
    s.x0 = mm::read_vector(*f.x0);
  } else if (f.coordinates) {
    const auto xs = read_coordinates_csv(*f.coordinates);
    s.x0.resize(static_cast<Index>(xs.size()));
    const double b2 = f.beta * f.beta;
    for (std::size_t k = 0; k < xs.size(); ++k)
      s.x0(static_cast<Index>(k)) = std::exp(-b2 * xs[k] * xs[k]) - std::exp(-b2 * f.L * f.L);
  } else {
    s.x0 = Vector::Zero(s.A.rows());
  }
  s.validate();
  if (f.Q || f.R) {
    CostSpec c;
    c.Q = f.Q ? mm::read_sparse(*f.Q) : CsrMatrix(s.dim(), s.dim());
    c.R = f.R ? mm::read_dense(*f.R) : Matrix(Matrix::Identity(s.inputs(), s.inputs()));
    c.T = f.T;
    c.validate(s);
    out.cost = std::move(c);
  }
  return out;
}

}  // namespace rbm
