#pragma once

// Experiment engine: convergence sweeps over h and realizations, variance
// tables, mesh refinement, timing, the exact commutative bound check and the
// particle mapping check.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rbm/dynamics.hpp"
#include "rbm/error.hpp"
#include "rbm/linalg.hpp"
#include "rbm/matrix_market.hpp"
#include "rbm/models.hpp"
#include "rbm/optimizer.hpp"
#include "rbm/sampling.hpp"
#include "rbm/splitting.hpp"

namespace rbm {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Parallel map with results in index order

template <class F>
auto parallel_map(std::size_t count, std::size_t threads, F&& f) {
  using R = std::decay_t<decltype(f(std::size_t{0}))>;
  std::vector<std::optional<R>> slots(count);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        slots[i] = f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<R> out;
  out.reserve(count);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

struct SampleStats {
  double mean = 0.0;
  double sd = 0.0;         ///< sample standard deviation
  double two_sigma = 0.0;  ///< 2·sd
};

inline SampleStats sample_stats(const std::vector<double>& xs) {
  SampleStats s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  s.two_sigma = 2.0 * s.sd;
  return s;
}

/// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DimensionError("loglog_slope: length mismatch");
  if (x.size() < 3) throw Error("loglog_slope: need at least 3 points");
  double mx = 0, my = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw Error("loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return sxy / sxx;
}

inline std::size_t intervals_for(double T, double h) {
  const double k = T / h;
  const double r = std::round(k);
  if (r < 1.0 || std::abs(k - r) > 1e-9 * r)
    throw Error("step h = " + std::to_string(h) + " does not divide T = " + std::to_string(T) + " into an integer count");
  return static_cast<std::size_t>(r);
}

template <class Clock = std::chrono::steady_clock, class F>
double seconds(F&& f) {
  const auto t0 = Clock::now();
  f();
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Convergence sweep

struct ConvergenceConfig {
  std::vector<double> hs;
  std::size_t realizations = 25;
  std::uint64_t seed = 1;
  bool optimize = true;
  std::size_t threads = 1;
  MinimizeOptions minimize;
};

struct RunRecord {
  std::size_t realization = 0;
  double h = 0.0;
  std::size_t K = 0;
  double state_error = 0.0;  ///< max_k |x_h − x| / max_k |x|
  double control_error = std::nan("");  ///< |u*_h − u*| / |u*|
  double nogap = std::nan("");          ///< |J_h(u*_h) − J(u*)| / J(u*)
  double suboptimality = std::nan("");  ///< |J(u*_h) − J(u*)| / J(u*)
  double control_norm_sq = std::nan("");
  double coercivity_bound = std::nan("");
  std::size_t iterations = 0;
  bool converged = true;
  double forward_seconds = 0.0;
  double optimize_seconds = 0.0;
};

struct SummaryRow {
  std::string metric;
  double h = 0.0;
  SampleStats stats;
  double slope = std::nan("");
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"state_error", "control_error", "nogap", "suboptimality"};
  return names;
}

inline double metric_value(const RunRecord& r, const std::string& m) {
  if (m == "state_error") return r.state_error;
  if (m == "control_error") return r.control_error;
  if (m == "nogap") return r.nogap;
  if (m == "suboptimality") return r.suboptimality;
  throw Error("unknown metric '" + m + "'");
}

struct ConvergenceResult {
  std::vector<RunRecord> records;
  std::vector<SummaryRow> summary;

  std::optional<double> slope(const std::string& metric) const {
    for (const auto& s : summary)
      if (s.metric == metric && std::isfinite(s.slope)) return s.slope;
    return std::nullopt;
  }
  std::vector<double> means(const std::string& metric) const {
    std::vector<double> out;
    for (const auto& s : summary)
      if (s.metric == metric) out.push_back(s.stats.mean);
    return out;
  }
};

/// Per-h summaries and slopes from the records.
inline std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records, const std::vector<double>& hs) {
  std::vector<SummaryRow> rows;
  for (const auto& metric : metric_names()) {
    std::vector<SummaryRow> block;
    bool complete = true;
    for (double h : hs) {
      std::vector<double> xs;
      for (const auto& r : records)
        if (r.h == h) xs.push_back(metric_value(r, metric));
      if (xs.empty() || std::any_of(xs.begin(), xs.end(), [](double v) { return !std::isfinite(v); })) {
        complete = false;
        break;
      }
      block.push_back({metric, h, sample_stats(xs), std::nan("")});
    }
    if (!complete) continue;
    if (block.size() >= 3) {
      std::vector<double> x, y;
      for (const auto& b : block) x.push_back(b.h), y.push_back(b.stats.mean);
      bool positive = std::all_of(y.begin(), y.end(), [](double v) { return v > 0.0; });
      if (positive) {
        const double s = loglog_slope(x, y);
        for (auto& b : block) b.slope = s;
      }
    }
    rows.insert(rows.end(), block.begin(), block.end());
  }
  return rows;
}

/// Schedule seed of realization r at sweep level `level`.
inline SeedSpec realization_seed(std::uint64_t master, std::size_t level, std::size_t r) {
  return {derive_seed(master, level), r};
}

inline ConvergenceResult run_convergence(const Model& model, const ConvergenceConfig& cfg) {
  if (cfg.realizations < 1) throw Error("run_convergence: need at least one realization");
  if (cfg.hs.empty()) throw Error("run_convergence: no step sizes given");
  const auto subset_ops = assemble_all(model.decomposition, model.table);
  ConvergenceResult result;
  for (std::size_t level = 0; level < cfg.hs.size(); ++level) {
    const double h = cfg.hs[level];
    const std::size_t K = intervals_for(model.cost.T, h);
    const TimeGrid grid = uniform_grid(model.cost.T, K);
    const OperatorSource original = original_source(model.sys, grid);
    const auto ops = make_step_operators(model.sys, subset_ops, grid);
    const ControlSignal zero = ControlSignal::zero(grid, model.sys.inputs());
    const Trajectory x_ref = solve_forward(model.sys, zero, original);
    std::optional<OptResult> ref_opt;
    double u_ref_norm = 0.0;
    if (cfg.optimize) {
      ref_opt = minimize(model.sys, model.cost, original, std::nullopt, cfg.minimize);
      u_ref_norm = ref_opt->control.l2_norm();
    }
    auto records = parallel_map(cfg.realizations, cfg.threads, [&](std::size_t r) {
      try {
        RunRecord rec;
        rec.realization = r;
        rec.h = h;
        rec.K = K;
        const Schedule sch = draw_schedule(grid, model.table, realization_seed(cfg.seed, level, r));
        const OperatorSource src = scheduled_source(ops, sch);
        Trajectory xh;
        rec.forward_seconds = seconds([&] { xh = solve_forward(model.sys, zero, src); });
        rec.state_error = error_trajectory(xh, x_ref).relative_max;
        if (ref_opt) {
          OptResult opt;
          rec.optimize_seconds = seconds([&] { opt = minimize(model.sys, model.cost, src, std::nullopt, cfg.minimize); });
          const double Jstar = ref_opt->cost;
          ControlSignal diff{grid, opt.control.values - ref_opt->control.values};
          rec.control_error = u_ref_norm > 0.0 ? diff.l2_norm() / u_ref_norm : diff.l2_norm();
          const double Jdiv = Jstar != 0.0 ? std::abs(Jstar) : 1.0;
          rec.nogap = std::abs(opt.cost - Jstar) / Jdiv;
          rec.suboptimality = std::abs(cost(model.sys, model.cost, opt.control, original) - Jstar) / Jdiv;
          rec.control_norm_sq = opt.control.dot(opt.control);
          rec.coercivity_bound = coercivity_bound(model.sys, model.cost, src);
          rec.iterations = opt.iterations;
          rec.converged = opt.converged;
        }
        return rec;
      } catch (const std::exception& e) {
        throw Error("h = " + std::to_string(h) + ", realization " + std::to_string(r) + ": " + e.what());
      }
    });
    result.records.insert(result.records.end(), records.begin(), records.end());
  }
  result.summary = summarize(result.records, cfg.hs);
  return result;
}

inline void write_records_csv(const std::filesystem::path& file, const std::vector<RunRecord>& rs) {
  std::ofstream out(file);
  if (!out) throw ParseError(file.string(), 0, "cannot open file for writing");
  out << "realization,h,K,state_error,control_error,nogap,suboptimality,control_norm_sq,coercivity_bound,iterations,"
         "converged\n"
      << std::setprecision(17);
  for (const auto& r : rs)
    out << r.realization << ',' << r.h << ',' << r.K << ',' << r.state_error << ',' << r.control_error << ','
        << r.nogap << ',' << r.suboptimality << ',' << r.control_norm_sq << ',' << r.coercivity_bound << ','
        << r.iterations << ',' << (r.converged ? 1 : 0) << '\n';
}

/// Wall-clock columns are kept apart so records.csv stays reproducible.
inline void write_durations_csv(const std::filesystem::path& file, const std::vector<RunRecord>& rs) {
  std::ofstream out(file);
  if (!out) throw ParseError(file.string(), 0, "cannot open file for writing");
  out << "realization,h,K,forward_seconds,optimize_seconds\n" << std::setprecision(6);
  for (const auto& r : rs)
    out << r.realization << ',' << r.h << ',' << r.K << ',' << r.forward_seconds << ',' << r.optimize_seconds << '\n';
}

inline void write_summary_csv(const std::filesystem::path& file, const std::vector<SummaryRow>& rows) {
  std::ofstream out(file);
  if (!out) throw ParseError(file.string(), 0, "cannot open file for writing");
  out << "metric,h,mean,sd,two_sigma,slope\n" << std::setprecision(17);
  for (const auto& r : rows)
    out << r.metric << ',' << r.h << ',' << r.stats.mean << ',' << r.stats.sd << ',' << r.stats.two_sigma << ','
        << r.slope << '\n';
}

// ---------------------------------------------------------------------------
// Variance table

struct Table1Row {
  Heat1dCase which;
  double variance;
  double weighted_variance;
};

inline std::vector<Table1Row> run_table1(Heat1dConfig base, double lambda = 0.1) {
  std::vector<Table1Row> rows;
  for (auto c : {Heat1dCase::i, Heat1dCase::ii, Heat1dCase::iii, Heat1dCase::iv}) {
    base.which = c;
    const Model m = build_heat1d(base);
    rows.push_back({c, variance(m.decomposition, m.table), weighted_variance(m.decomposition, m.table, Resolvent{lambda})});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Mesh refinement

struct MeshRow {
  std::size_t N = 0;
  double variance = 0.0;
  double weighted_variance = 0.0;
  SampleStats state_error;
  SampleStats control_error;
  double state_over_sqrt_var = 0.0;
  double state_over_sqrt_var_w = 0.0;
  double control_over_sqrt_var = std::nan("");
  double control_over_sqrt_var_w = std::nan("");
};

inline std::vector<MeshRow> run_mesh_study(Heat1dConfig base, const std::vector<std::size_t>& Ns, double h,
                                           ConvergenceConfig cfg, double lambda = 0.1) {
  cfg.hs = {h};
  std::vector<MeshRow> rows;
  for (std::size_t N : Ns) {
    base.N = N;
    const Model m = build_heat1d(base);
    MeshRow row;
    row.N = N;
    row.variance = variance(m.decomposition, m.table);
    row.weighted_variance = weighted_variance(m.decomposition, m.table, Resolvent{lambda});
    const auto res = run_convergence(m, cfg);
    std::vector<double> se, ce;
    for (const auto& r : res.records) {
      se.push_back(r.state_error);
      ce.push_back(r.control_error);
    }
    row.state_error = sample_stats(se);
    row.state_over_sqrt_var = row.state_error.mean / std::sqrt(row.variance);
    row.state_over_sqrt_var_w = row.state_error.mean / std::sqrt(row.weighted_variance);
    if (cfg.optimize) {
      row.control_error = sample_stats(ce);
      row.control_over_sqrt_var = row.control_error.mean / std::sqrt(row.variance);
      row.control_over_sqrt_var_w = row.control_error.mean / std::sqrt(row.weighted_variance);
    }
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Timing

struct TimingConfig {
  std::vector<double> hs;
  std::size_t realizations = 3;
  std::size_t repetitions = 3;
  std::uint64_t seed = 1;
  bool optimize = false;
  MinimizeOptions minimize;
};

struct TimingRow {
  double h = 0.0;
  std::size_t K = 0;
  std::size_t realization = 0;
  double setup_original = 0.0;    ///< LU factorizations, seconds
  double setup_randomized = 0.0;  ///< all subsets
  double forward_original = 0.0;  ///< median over repetitions
  double forward_randomized = 0.0;
  double optimize_original = std::nan("");
  double optimize_randomized = std::nan("");
  double forward_ratio() const { return forward_randomized / forward_original; }
};

inline double median(std::vector<double> xs) {
  if (xs.empty()) return std::nan("");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

/// Single-threaded wall clock of original and randomized solves.
inline std::vector<TimingRow> run_timing(const Model& model, const TimingConfig& cfg) {
  const auto subset_ops = assemble_all(model.decomposition, model.table);
  std::vector<TimingRow> rows;
  for (std::size_t level = 0; level < cfg.hs.size(); ++level) {
    const double h = cfg.hs[level];
    const std::size_t K = intervals_for(model.cost.T, h);
    const TimeGrid grid = uniform_grid(model.cost.T, K);
    std::optional<OperatorSource> original;
    std::shared_ptr<const StepOperators> ops;
    const double setup_o = seconds([&] { original = original_source(model.sys, grid); });
    const double setup_r = seconds([&] { ops = make_step_operators(model.sys, subset_ops, grid); });
    const ControlSignal zero = ControlSignal::zero(grid, model.sys.inputs());
    for (std::size_t r = 0; r < cfg.realizations; ++r) {
      TimingRow row;
      row.h = h;
      row.K = K;
      row.realization = r;
      row.setup_original = setup_o;
      row.setup_randomized = setup_r;
      const OperatorSource src = scheduled_source(ops, draw_schedule(grid, model.table, realization_seed(cfg.seed, level, r)));
      std::vector<double> fo, fr, oo, orr;
      for (std::size_t rep = 0; rep < std::max<std::size_t>(1, cfg.repetitions); ++rep) {
        fo.push_back(seconds([&] { (void)solve_forward(model.sys, zero, *original); }));
        fr.push_back(seconds([&] { (void)solve_forward(model.sys, zero, src); }));
        if (cfg.optimize) {
          oo.push_back(seconds([&] { (void)minimize(model.sys, model.cost, *original, std::nullopt, cfg.minimize); }));
          orr.push_back(seconds([&] { (void)minimize(model.sys, model.cost, src, std::nullopt, cfg.minimize); }));
        }
      }
      row.forward_original = median(fo);
      row.forward_randomized = median(fr);
      if (cfg.optimize) {
        row.optimize_original = median(oo);
        row.optimize_randomized = median(orr);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Exact bound check for commuting decompositions

struct BoundRow {
  std::string weight;  ///< "I" or "resolvent(λ)" or "matrix"
  double expected_sq_error = 0.0;
  double euclidean_bound = 0.0;  ///< h·Var·(‖A‖T² + 2T)·|x₀|²
  double commutative_bound = 0.0;  ///< 2hT·Var_W·|W⁻¹x₀|²
  bool holds() const { return expected_sq_error <= euclidean_bound && expected_sq_error <= commutative_bound; }
};

inline void check_commuting(const Decomposition& d) {
  for (std::size_t a = 0; a < d.parts.size(); ++a)
    for (std::size_t b = a + 1; b < d.parts.size(); ++b) {
      const Matrix x = to_dense(d.parts[a]), y = to_dense(d.parts[b]);
      const double c = (x * y - y * x).cwiseAbs().maxCoeff();
      if (c > 1e-10)
        throw Error("parts " + std::to_string(a + 1) + " and " + std::to_string(b + 1) + " do not commute (" +
                    std::to_string(c) + ")");
    }
}

/// 𝔼|S_h(T,0)x₀ − e^{AT}x₀|² by enumeration of every schedule on a uniform grid.
inline double exact_expected_sq_error(const Decomposition& d, const SubsetTable& t, const Vector& x0, double T,
                                      std::size_t K) {
  const TimeGrid grid = uniform_grid(T, K);
  const auto ops = assemble_all(d, t);
  const Vector exact = matrix_exponential(Matrix(to_dense(d.A) * T)) * x0;
  return enumerate_expectation(grid, t, [&](const std::vector<std::size_t>& idx) {
    const Schedule s{grid, idx};
    return (evolution_operator(s, ops, T, 0.0) * x0 - exact).squaredNorm();
  });
}

inline std::vector<BoundRow> run_commutative_check(const Decomposition& d, const SubsetTable& t, const Vector& x0,
                                                   double T, std::size_t K, const std::vector<double>& lambdas) {
  check_commuting(d);
  const double h = T / static_cast<double>(K);
  const double lhs = exact_expected_sq_error(d, t, x0, T, K);
  const double var = variance(d, t);
  const double normA = operator_norm(d.A);
  const double euclid = h * var * (normA * T * T + 2.0 * T) * x0.squaredNorm();
  std::vector<BoundRow> rows;
  const Index n = d.dim();
  rows.push_back({"I", lhs, euclid, 2.0 * h * T * weighted_variance(d, t, Matrix(Matrix::Identity(n, n))) * x0.squaredNorm()});
  for (double lam : lambdas) {
    Matrix shifted = to_dense(d.A);
    shifted.diagonal().array() -= lam;
    const Vector winv_x0 = shifted * x0;
    std::ostringstream name;
    name << "resolvent(" << lam << ")";
    rows.push_back({name.str(), lhs, euclid, 2.0 * h * T * weighted_variance(d, t, Resolvent{lam}) * winv_x0.squaredNorm()});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Particle mapping

struct ParticleReport {
  std::size_t N = 0, P = 0;
  std::uint64_t partitions = 0;
  std::uint64_t expected_partitions = 0;
  bool inclusion_exact = false;    ///< count_m·(N−1) = 𝒩·(P−1) for every pair
  double operator_mismatch = 0.0;  ///< max over partitions of the assembled-operator error
  bool passed() const {
    return partitions == expected_partitions && inclusion_exact && operator_mismatch <= 1e-12;
  }
};

/// N!/((P!)^{N/P}(N/P)!) in exact integer arithmetic.
inline std::uint64_t exact_partition_count(std::size_t N, std::size_t P) {
  // product over batches of C(remaining − 1, P − 1)
  std::uint64_t total = 1;
  for (std::size_t rem = N; rem > 0; rem -= P) {
    std::uint64_t c = 1;
    for (std::size_t k = 1; k < P; ++k) c = c * (rem - k) / k;
    total *= c;
  }
  return total;
}

inline ParticleReport run_particle_check(const ParticleConfig& cfg) {
  ParticleReport rep;
  rep.N = cfg.N;
  rep.P = cfg.P;
  const auto [d, t] = build_particles(cfg);
  rep.partitions = t.size();
  rep.expected_partitions = exact_partition_count(cfg.N, cfg.P);
  const auto counts = particle_inclusion_counts(cfg.N, cfg.P);
  rep.inclusion_exact = std::all_of(counts.begin(), counts.end(), [&](std::uint64_t c) {
    return c * (cfg.N - 1) == rep.partitions * (cfg.P - 1);
  });
  const auto partitions = enumerate_batch_partitions(cfg.N, cfg.P);
  for (std::size_t w = 0; w < partitions.size(); ++w) {
    Matrix expect = Matrix::Zero(d.dim(), d.dim());
    for (const auto& b : partitions[w])
      for (auto i : b)
        for (auto j : b)
          if (i != j) expect += to_dense(d.parts[particle_pair_index(i, j, cfg.N)]) * static_cast<double>(cfg.N - 1);
    expect /= static_cast<double>(cfg.P - 1);
    const Matrix got = to_dense(assemble_subset_operator(d, t, w).matrix);
    const double scale = std::max(1.0, max_abs(expect));
    rep.operator_mismatch = std::max(rep.operator_mismatch, max_abs(Matrix(got - expect)) / scale);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Configuration files

/// {"parts": [mtx paths], "subsets": [{"ids": [1-based], "p": value}],
///  "A": optional mtx, "weights": optional mtx}; paths relative to the file.
inline std::pair<Decomposition, SubsetTable> load_splitting_json(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ParseError(file.string(), 0, "cannot open file");
  Json j;
  try {
    in >> j;
  } catch (const Json::parse_error& e) {
    throw ParseError(file.string(), 0, e.what());
  }
  const auto dir = file.parent_path();
  auto rel = [&](const std::string& p) { return std::filesystem::path(p).is_absolute() ? std::filesystem::path(p) : dir / p; };
  std::vector<CsrMatrix> parts;
  for (const auto& p : j.at("parts")) parts.push_back(mm::read_sparse(rel(p.get<std::string>())));
  std::optional<CsrMatrix> A;
  if (j.contains("A")) A = mm::read_sparse(rel(j["A"].get<std::string>()));
  std::optional<Vector> weights;
  if (j.contains("weights")) weights = mm::read_vector(rel(j["weights"].get<std::string>()));
  SubsetSpec spec;
  for (const auto& s : j.at("subsets")) {
    std::vector<std::size_t> ids;
    for (const auto& id : s.at("ids")) {
      const long long v = id.get<long long>();
      if (v < 1) throw TableError("subset ids are 1-based; got " + std::to_string(v));
      ids.push_back(static_cast<std::size_t>(v - 1));
    }
    spec.push_back({std::move(ids), s.at("p").get<double>()});
  }
  const std::size_t M = parts.size();
  return {make_decomposition(std::move(parts), std::move(A), std::move(weights)), make_subset_table(M, std::move(spec))};
}

inline Heat1dConfig heat1d_from_json(const Json& j) {
  Heat1dConfig c;
  c.spacing = Heat1dSpacing::half_domain;
  if (j.contains("N")) c.N = j["N"].get<std::size_t>();
  if (j.contains("L")) c.L = j["L"].get<double>();
  if (j.contains("T")) c.T = j["T"].get<double>();
  if (j.contains("case")) c.which = parse_heat1d_case(j["case"].get<std::string>());
  if (j.contains("spacing")) {
    const auto s = j["spacing"].get<std::string>();
    if (s == "domain")
      c.spacing = Heat1dSpacing::domain;
    else if (s == "half_domain")
      c.spacing = Heat1dSpacing::half_domain;
    else
      throw Error("unknown spacing '" + s + "' (expected domain or half_domain)");
  }
  return c;
}

/// Dense symmetric dominant test system with block splitting: B drives the
/// first third of the nodes, x₀ = 1, Q = I, R = I.
inline Model block_model(const CsrMatrix& A, std::size_t P, double T, std::optional<CsrMatrix> E = std::nullopt) {
  auto [d, t] = build_block_split(A, P);
  const Index N = A.rows();
  Model m;
  Matrix B = Matrix::Zero(N, 1);
  B.topRows(std::max<Index>(1, N / 3)).setOnes();
  m.sys = {std::move(E), A, B, Vector::Ones(N)};
  m.cost = {sparse_identity(N), Matrix::Identity(1, 1), {}, T};
  m.decomposition = std::move(d);
  m.table = std::move(t);
  return m;
}

/// Builds a model from the "model" object of an experiment config.
inline Model model_from_json(const Json& j, const std::filesystem::path& base_dir = {}) {
  const std::string type = j.value("type", "heat1d");
  auto rel = [&](const std::string& p) {
    return std::filesystem::path(p).is_absolute() || base_dir.empty() ? std::filesystem::path(p) : base_dir / p;
  };
  if (type == "heat1d") return build_heat1d(heat1d_from_json(j));
  if (type == "heat3d") {
    Heat3dConfig c;
    c.nodes = j.value("nodes", std::size_t{8});
    c.L = j.value("L", 0.75);
    c.T = j.value("T", 2.0);
    c.M = j.value("M", std::size_t{8});
    c.P = j.value("P", std::size_t{1});
    c.grouping_seed = j.value("grouping_seed", std::uint64_t{0});
    return build_heat3d(c);
  }
  if (type == "block") {
    const std::size_t P = j.value("P", std::size_t{16});
    const double T = j.value("T", 1.0);
    std::optional<CsrMatrix> E;
    if (j.contains("E")) E = mm::read_sparse(rel(j["E"].get<std::string>()));
    if (j.contains("A")) return block_model(mm::read_sparse(rel(j["A"].get<std::string>())), P, T, std::move(E));
    const std::size_t N = j.value("N", std::size_t{96});
    return block_model(to_csr(random_dominant_matrix(N, j.value("matrix_seed", std::uint64_t{7}))), P, T, std::move(E));
  }
  if (type == "files") {
    SystemFiles f;
    if (j.contains("E")) f.E = rel(j["E"].get<std::string>());
    f.A = rel(j.at("A").get<std::string>());
    f.B = rel(j.at("B").get<std::string>());
    if (j.contains("x0")) f.x0 = rel(j["x0"].get<std::string>());
    if (j.contains("coordinates")) f.coordinates = rel(j["coordinates"].get<std::string>());
    f.beta = j.value("beta", 0.4);
    f.L = j.value("L", 5.0);
    if (j.contains("Q")) f.Q = rel(j["Q"].get<std::string>());
    if (j.contains("R")) f.R = rel(j["R"].get<std::string>());
    f.T = j.value("T", 1.0);
    auto loaded = load_system(f);
    Model m;
    m.sys = std::move(loaded.sys);
    if (loaded.cost)
      m.cost = std::move(*loaded.cost);
    else
      m.cost = {sparse_identity(m.sys.dim()), Matrix::Identity(m.sys.inputs(), m.sys.inputs()), {}, f.T};
    if (j.contains("splitting")) {
      auto [d, t] = load_splitting_json(rel(j["splitting"].get<std::string>()));
      m.decomposition = std::move(d);
      m.table = std::move(t);
    } else {
      auto [d, t] = build_block_split(m.sys.A, j.value("P", std::size_t{1}));
      m.decomposition = std::move(d);
      m.table = std::move(t);
    }
    return m;
  }
  throw Error("unknown model type '" + type + "'");
}

/// Step sizes from "h" (list) or "h_exponents" (list of e for h = 2^−e).
inline std::vector<double> step_sizes_from_json(const Json& j, std::vector<double> fallback) {
  if (j.contains("h")) return j["h"].get<std::vector<double>>();
  if (j.contains("h_exponents")) {
    std::vector<double> hs;
    for (int e : j["h_exponents"].get<std::vector<int>>()) hs.push_back(std::ldexp(1.0, -e));
    return hs;
  }
  return fallback;
}

inline Json read_json_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ParseError(file.string(), 0, "cannot open file");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(file.string(), 0, e.what());
  }
}

}  // namespace rbm
