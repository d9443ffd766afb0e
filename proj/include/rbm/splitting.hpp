#pragma once

// Decompositions A = Σ A_m, subset probability tables with inclusion
// probabilities π_m, assembled subset operators Σ_{m∈S} A_m/π_m and the
// variance functionals measuring their spread around A.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "rbm/error.hpp"
#include "rbm/linalg.hpp"

namespace rbm {

/// A = Σ parts. Optional positive weights d define the inner product
/// ⟨x, y⟩_D = xᵀ diag(d) y in which the parts are dissipative (Euclidean if
/// absent).
struct Decomposition {
  CsrMatrix A;
  std::vector<CsrMatrix> parts;
  std::optional<Vector> inner_product_weights;

  Index dim() const noexcept { return A.rows(); }
  std::size_t part_count() const noexcept { return parts.size(); }
};

/// Builds a decomposition, checking dimensions and Σ parts = A within
/// 1e-10·‖A‖. If `A` is omitted it is taken as the sum of the parts.
inline Decomposition make_decomposition(std::vector<CsrMatrix> parts,
                                        std::optional<CsrMatrix> A = std::nullopt,
                                        std::optional<Vector> weights = std::nullopt) {
  if (parts.empty()) throw DimensionError("make_decomposition: no parts");
  const Index n = parts.front().rows();
  CsrMatrix sum(n, n);
  for (std::size_t m = 0; m < parts.size(); ++m) {
    if (parts[m].rows() != n || parts[m].cols() != n)
      throw DimensionError("make_decomposition: part " + std::to_string(m + 1) + " has wrong dimension");
    if (!all_finite(parts[m])) throw Error("make_decomposition: part " + std::to_string(m + 1) + " is not finite");
    parts[m] = pruned(std::move(parts[m]));
    sum += parts[m];
  }
  Decomposition d;
  if (A) {
    if (A->rows() != n || A->cols() != n) throw DimensionError("make_decomposition: A has wrong dimension");
    const double scale = std::max(operator_norm(*A), std::numeric_limits<double>::min());
    const CsrMatrix diff = *A - sum;
    const double resid = diff.nonZeros() == 0 ? 0.0 : operator_norm(diff);
    if (resid > 1e-10 * scale)
      throw Error("make_decomposition: parts do not sum to A (residual " + std::to_string(resid) + ")");
    d.A = pruned(std::move(*A));
  } else {
    d.A = pruned(std::move(sum));
  }
  if (weights) {
    if (weights->size() != n) throw DimensionError("make_decomposition: weight length mismatch");
    if ((weights->array() <= 0.0).any()) throw Error("make_decomposition: inner-product weights must be positive");
  }
  d.parts = std::move(parts);
  d.inner_product_weights = std::move(weights);
  return d;
}

// ---------------------------------------------------------------------------
// Subset tables

/// Supported subsets S_ω (0-based, sorted part indices) with probabilities
/// p_ω > 0 and derived inclusion probabilities π_m.
class SubsetTable {
 public:
  std::size_t part_count() const noexcept { return part_count_; }
  std::size_t size() const noexcept { return subsets_.size(); }
  const std::vector<std::vector<std::size_t>>& subsets() const noexcept { return subsets_; }
  const std::vector<double>& probabilities() const noexcept { return probs_; }
  const std::vector<double>& inclusion() const noexcept { return pis_; }

  const std::vector<std::size_t>& subset(std::size_t w) const { return subsets_.at(w); }
  double probability(std::size_t w) const { return probs_.at(w); }
  double pi(std::size_t m) const { return pis_.at(m); }

 private:
  friend SubsetTable make_subset_table(std::size_t, std::vector<std::pair<std::vector<std::size_t>, double>>);
  std::size_t part_count_ = 0;
  std::vector<std::vector<std::size_t>> subsets_;
  std::vector<double> probs_;
  std::vector<double> pis_;
};

using SubsetSpec = std::vector<std::pair<std::vector<std::size_t>, double>>;

namespace detail {

/// Neumaier-compensated sum; tables with ~1e5 equal probabilities must still
/// sum to 1 within 1e-12.
inline double compensated_sum(const std::vector<double>& xs) {
  double s = 0.0, c = 0.0;
  for (double x : xs) {
    const double t = s + x;
    c += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
    s = t;
  }
  return s + c;
}

}  // namespace detail

/// Validates and stores a table. Subsets use 0-based part indices; duplicates
/// are merged by summing probabilities; zero-probability subsets are dropped.
/// Nothing is renormalized.
inline SubsetTable make_subset_table(std::size_t part_count, SubsetSpec spec) {
  if (part_count == 0) throw TableError("make_subset_table: part count must be positive");
  std::map<std::vector<std::size_t>, std::size_t> seen;
  SubsetTable t;
  t.part_count_ = part_count;
  std::vector<double> all_probs;
  for (auto& [ids, p] : spec) {
    if (!std::isfinite(p) || p < 0.0) throw TableError("make_subset_table: probabilities must be finite and nonnegative");
    all_probs.push_back(p);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw TableError("make_subset_table: subset lists an index twice");
    for (auto m : ids)
      if (m >= part_count)
        throw TableError("make_subset_table: index " + std::to_string(m + 1) + " exceeds part count " +
                         std::to_string(part_count));
    if (p == 0.0) continue;
    auto [it, inserted] = seen.emplace(ids, t.subsets_.size());
    if (inserted) {
      t.subsets_.push_back(ids);
      t.probs_.push_back(p);
    } else {
      t.probs_[it->second] += p;
    }
  }
  const double total = detail::compensated_sum(all_probs);
  if (std::abs(total - 1.0) > 1e-12)
    throw TableError("make_subset_table: probabilities sum to " + std::to_string(total) + ", not 1");

  std::vector<std::vector<double>> contrib(part_count);
  for (std::size_t w = 0; w < t.subsets_.size(); ++w)
    for (auto m : t.subsets_[w]) contrib[m].push_back(t.probs_[w]);
  t.pis_.resize(part_count);
  std::string missing;
  for (std::size_t m = 0; m < part_count; ++m) {
    t.pis_[m] = detail::compensated_sum(contrib[m]);
    if (!(t.pis_[m] > 0.0)) missing += (missing.empty() ? "" : ", ") + std::to_string(m + 1);
  }
  if (!missing.empty())
    throw TableError("make_subset_table: inclusion probability is zero for part(s) " + missing);
  return t;
}

/// Each single part with probability 1/M.
inline SubsetTable uniform_singletons(std::size_t M) {
  SubsetSpec spec;
  for (std::size_t m = 0; m < M; ++m) spec.push_back({{m}, 1.0 / static_cast<double>(M)});
  return make_subset_table(M, std::move(spec));
}

/// All subsets of size P at uniform probability 1/C(M, P).
inline SubsetTable uniform_subsets_of_size(std::size_t M, std::size_t P) {
  if (P == 0 || P > M) throw TableError("uniform_subsets_of_size: need 1 <= P <= M");
  std::vector<std::vector<std::size_t>> all;
  std::vector<std::size_t> cur(P);
  std::iota(cur.begin(), cur.end(), std::size_t{0});
  while (true) {
    all.push_back(cur);
    if (all.size() > 1000000) throw TableError("uniform_subsets_of_size: more than 1e6 subsets");
    std::size_t i = P;
    while (i > 0 && cur[i - 1] == M - P + (i - 1)) --i;
    if (i == 0) break;
    ++cur[i - 1];
    for (std::size_t j = i; j < P; ++j) cur[j] = cur[j - 1] + 1;
  }
  SubsetSpec spec;
  const double p = 1.0 / static_cast<double>(all.size());
  for (auto& s : all) spec.push_back({std::move(s), p});
  return make_subset_table(M, std::move(spec));
}

/// The degenerate deterministic scheme: all parts together with probability 1.
inline SubsetTable deterministic_table(std::size_t M) {
  std::vector<std::size_t> all(M);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return make_subset_table(M, {{all, 1.0}});
}

// ---------------------------------------------------------------------------
// Subset operators

struct SubsetOperator {
  std::size_t id = 0;  ///< index into the table's supported subsets
  CsrMatrix matrix;    ///< Σ_{m∈S_id} A_m / π_m
};

inline void check_compatible(const Decomposition& d, const SubsetTable& t) {
  if (d.part_count() != t.part_count())
    throw DimensionError("decomposition has " + std::to_string(d.part_count()) + " parts but table expects " +
                         std::to_string(t.part_count()));
}

inline SubsetOperator assemble_subset_operator(const Decomposition& d, const SubsetTable& t, std::size_t w) {
  check_compatible(d, t);
  if (w >= t.size()) throw Error("assemble_subset_operator: subset id " + std::to_string(w) + " out of range");
  CsrMatrix sum(d.dim(), d.dim());
  for (auto m : t.subset(w)) sum += d.parts[m] / t.pi(m);
  return {w, pruned(std::move(sum))};
}

inline std::vector<SubsetOperator> assemble_all(const Decomposition& d, const SubsetTable& t) {
  std::vector<SubsetOperator> ops;
  ops.reserve(t.size());
  for (std::size_t w = 0; w < t.size(); ++w) ops.push_back(assemble_subset_operator(d, t, w));
  return ops;
}

/// ‖Σ_ω p_ω 𝒜_ω − A‖; zero up to roundoff for every valid table.
inline double expectation_identity_residual(const Decomposition& d, const SubsetTable& t) {
  check_compatible(d, t);
  Matrix acc = Matrix::Zero(d.dim(), d.dim());
  for (std::size_t w = 0; w < t.size(); ++w) acc += t.probability(w) * to_dense(assemble_subset_operator(d, t, w).matrix);
  acc -= to_dense(d.A);
  if (acc.isZero(0.0)) return 0.0;
  return operator_norm(acc);
}

/// Var[𝒜] = Σ_ω p_ω ‖𝒜_ω − A‖².
inline double variance(const Decomposition& d, const SubsetTable& t, const PowerIterationOptions& opt = {}) {
  check_compatible(d, t);
  double v = 0.0;
  for (std::size_t w = 0; w < t.size(); ++w) {
    const CsrMatrix diff = pruned(assemble_subset_operator(d, t, w).matrix - d.A);
    if (diff.nonZeros() == 0) continue;
    const double nrm = operator_norm(diff, opt);
    v += t.probability(w) * nrm * nrm;
  }
  return v;
}

/// W = (A − λI)^{-1}, applied through an LU of A − λI without forming W.
struct Resolvent {
  double lambda;
};

using Weighting = std::variant<Matrix, Resolvent>;

/// Var_W[𝒜] = Σ_ω p_ω ‖(𝒜_ω − A) W‖².
inline double weighted_variance(const Decomposition& d, const SubsetTable& t, const Weighting& weight,
                                const PowerIterationOptions& opt = {}) {
  check_compatible(d, t);
  const Index n = d.dim();
  std::optional<Matrix> wmat;
  std::optional<LuFactors> shifted;
  if (const auto* w = std::get_if<Matrix>(&weight)) {
    if (w->rows() != n || w->cols() != n) throw DimensionError("weighted_variance: W has wrong dimension");
    try {
      (void)lu_factorize(*w);
    } catch (const FactorizationError& e) {
      throw Error(std::string("weighted_variance: W is singular (") + e.what() + ")");
    }
    wmat = *w;
  } else {
    const double lam = std::get<Resolvent>(weight).lambda;
    Matrix shifted_a = to_dense(d.A);
    shifted_a.diagonal().array() -= lam;
    try {
      shifted = lu_factorize(shifted_a);
    } catch (const FactorizationError& e) {
      throw Error(std::string("weighted_variance: A - lambda I is singular (") + e.what() + ")");
    }
  }
  auto apply_w = [&](const Vector& x) -> Vector { return wmat ? Vector(*wmat * x) : shifted->solve(x); };
  auto apply_wt = [&](const Vector& y) -> Vector {
    return wmat ? Vector(wmat->transpose() * y) : shifted->solve_transpose(y);
  };
  double v = 0.0;
  for (std::size_t w = 0; w < t.size(); ++w) {
    const CsrMatrix diff = pruned(assemble_subset_operator(d, t, w).matrix - d.A);
    if (diff.nonZeros() == 0) continue;
    const CsrMatrix diff_t = diff.transpose();
    const double nrm = largest_singular_value([&](const Vector& x) -> Vector { return diff * apply_w(x); },
                                              [&](const Vector& y) -> Vector { return apply_wt(diff_t * y); }, n, opt);
    v += t.probability(w) * nrm * nrm;
  }
  return v;
}

/// Variance-minimizing probability for the two-subset scheme {1}:p, {2}:1−p,
/// p* = ‖A₁‖/(‖A₁‖+‖A₂‖).
template <class M>
double optimal_two_block_probability(const M& a1, const M& a2) {
  const double n1 = (a1.size() == 0) ? 0.0 : operator_norm(a1);
  const double n2 = (a2.size() == 0) ? 0.0 : operator_norm(a2);
  if (n1 + n2 == 0.0) throw Error("optimal_two_block_probability: both parts have zero norm");
  return n1 / (n1 + n2);
}

struct DissipativityViolation {
  std::size_t part;  ///< 0-based
  double lambda_max;
};

/// Parts failing λ_max(sym(D·A_m)) <= 1e-8·max(1, ‖D·A_m‖).
inline std::vector<DissipativityViolation> validate_dissipative(const Decomposition& d) {
  std::vector<DissipativityViolation> out;
  for (std::size_t m = 0; m < d.parts.size(); ++m) {
    const auto rep = check_dissipative(d.parts[m], d.inner_product_weights);
    if (!rep.dissipative) out.push_back({m, rep.lambda_max});
  }
  return out;
}

}  // namespace rbm
