#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "rbm/harness.hpp"

using namespace rbm;

namespace {

std::filesystem::path temp_dir() {
  auto d = std::filesystem::temp_directory_path() / "rbm_test_harness";
  std::filesystem::create_directories(d);
  return d;
}

std::string slurp(const std::filesystem::path& f) {
  std::ifstream in(f);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Decomposition random_dissipative(Index n, std::size_t M, unsigned seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> d;
  std::vector<CsrMatrix> parts;
  for (std::size_t m = 0; m < M; ++m) {
    Matrix x(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) x(i, j) = d(g);
    parts.push_back(to_csr(Matrix(-x * x.transpose() + (x - x.transpose()))));
  }
  return make_decomposition(std::move(parts));
}

Model small_heat(Heat1dCase c = Heat1dCase::i) {
  Heat1dConfig cfg;
  cfg.N = 25;
  cfg.which = c;
  cfg.spacing = Heat1dSpacing::half_domain;
  return build_heat1d(cfg);
}

}  // namespace

TEST(Stats, MeanAndTwoSigma) {
  const auto s = sample_stats({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.sd, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_DOUBLE_EQ(s.two_sigma, 2.0 * s.sd);
  EXPECT_EQ(sample_stats({7.0}).sd, 0.0);
}

TEST(Stats, LogLogSlopeOfPowerLaw) {
  std::vector<double> x, y;
  for (int e = 3; e <= 8; ++e) {
    x.push_back(std::ldexp(1.0, -e));
    y.push_back(3.0 * std::pow(x.back(), 0.5));
  }
  EXPECT_NEAR(loglog_slope(x, y), 0.5, 1e-12);
  EXPECT_THROW(loglog_slope({1.0, 2.0}, {1.0, 2.0}), Error);
  EXPECT_THROW(loglog_slope({1.0, 2.0, 3.0}, {1.0, 0.0, 1.0}), Error);
}

TEST(Stats, IntervalsFor) {
  EXPECT_EQ(intervals_for(0.5, std::ldexp(1.0, -5)), 16u);
  EXPECT_EQ(intervals_for(2.0, 0.1), 20u);
  EXPECT_THROW(intervals_for(1.0, 0.3), Error);
  EXPECT_THROW(intervals_for(1.0, 2.0), Error);
}

TEST(ParallelMap, OrderedAndPropagatesErrors) {
  const auto v = parallel_map(20, 3, [](std::size_t i) { return i * i; });
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(v[i], i * i);
  EXPECT_THROW(parallel_map(5, 2, [](std::size_t i) -> int {
                 if (i == 3) throw Error("boom");
                 return 0;
               }),
               Error);
}

TEST(Convergence, DeterministicTableHasZeroError) {
  auto m = small_heat();
  m.table = deterministic_table(m.decomposition.part_count());
  ConvergenceConfig cfg;
  cfg.hs = {0.125, 0.0625};
  cfg.realizations = 3;
  const auto r = run_convergence(m, cfg);
  ASSERT_EQ(r.records.size(), 6u);
  for (const auto& rec : r.records) {
    EXPECT_LE(rec.state_error, 1e-14);
    EXPECT_LE(rec.control_error, 1e-14);
    EXPECT_LE(rec.nogap, 1e-14);
    EXPECT_LE(rec.suboptimality, 1e-14);
  }
}

TEST(Convergence, RecordsReproducibleAcrossThreadCounts) {
  const auto m = small_heat(Heat1dCase::ii);
  ConvergenceConfig cfg;
  cfg.hs = {0.125, 0.0625, 0.03125};
  cfg.realizations = 4;
  cfg.seed = 17;
  const auto a = run_convergence(m, cfg);
  cfg.threads = 3;
  const auto b = run_convergence(m, cfg);
  const auto dir = temp_dir();
  write_records_csv(dir / "a.csv", a.records);
  write_records_csv(dir / "b.csv", b.records);
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  ASSERT_TRUE(a.slope("state_error").has_value());
  EXPECT_EQ(*a.slope("state_error"), *b.slope("state_error"));
  for (const auto& rec : a.records) {
    EXPECT_TRUE(rec.converged);
    EXPECT_LE(rec.control_norm_sq, rec.coercivity_bound);
  }
}

TEST(Convergence, SummaryOmitsMissingMetrics) {
  const auto m = small_heat();
  ConvergenceConfig cfg;
  cfg.hs = {0.125, 0.0625, 0.03125};
  cfg.realizations = 2;
  cfg.optimize = false;
  const auto r = run_convergence(m, cfg);
  EXPECT_TRUE(r.slope("state_error").has_value());
  EXPECT_FALSE(r.slope("control_error").has_value());
  EXPECT_EQ(r.means("state_error").size(), 3u);
}

TEST(Bounds, EuclideanBoundOnEnumerableCase) {
  for (unsigned seed : {1u, 2u, 3u}) {
    const auto d = random_dissipative(3, 2, seed);
    const auto t = uniform_singletons(2);
    Vector x0(3);
    x0 << 1.0, -0.5, 0.25;
    const double T = 0.5;
    const double normA = operator_norm(d.A), var = variance(d, t);
    for (std::size_t K : {2u, 4u, 8u}) {
      const double h = T / static_cast<double>(K);
      const double lhs = exact_expected_sq_error(d, t, x0, T, K);
      EXPECT_LE(lhs, h * var * (normA * T * T + 2.0 * T) * x0.squaredNorm());
    }
  }
}

TEST(Bounds, CommutativeDiagonalExample) {
  Matrix a1 = Matrix::Zero(2, 2), a2 = Matrix::Zero(2, 2);
  a1(0, 0) = -1.0;
  a2(1, 1) = -2.0;
  const auto d = make_decomposition({to_csr(a1), to_csr(a2)});
  const auto rows = run_commutative_check(d, uniform_singletons(2), Vector::Ones(2), 1.0, 4, {0.1, 1.0});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].weight, "I");
  for (const auto& r : rows) {
    EXPECT_GT(r.expected_sq_error, 0.0);
    EXPECT_TRUE(r.holds()) << r.weight;
  }
}

TEST(Bounds, NonCommutingPartsRejected) {
  Matrix a1(2, 2), a2(2, 2);
  a1 << -1, 1, 0, -1;
  a2 << -1, 0, 1, -1;
  const auto d = make_decomposition({to_csr(a1), to_csr(a2)});
  EXPECT_THROW(run_commutative_check(d, uniform_singletons(2), Vector::Ones(2), 1.0, 2, {}), Error);
}

TEST(Particles, CheckPasses) {
  for (auto [N, P] : std::vector<std::pair<std::size_t, std::size_t>>{{4, 2}, {6, 2}, {6, 3}, {8, 4}}) {
    const auto rep = run_particle_check({N, P, std::nullopt});
    EXPECT_TRUE(rep.passed()) << N << "," << P;
  }
  EXPECT_EQ(exact_partition_count(8, 2), 105u);
  EXPECT_EQ(exact_partition_count(12, 3), 15400u);
}

TEST(Table1, FourCases) {
  Heat1dConfig cfg;
  cfg.spacing = Heat1dSpacing::half_domain;
  const auto rows = run_table1(cfg);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_NEAR(rows[0].variance / 4.16e7, 1.0, 0.01);
  EXPECT_NEAR(rows[3].weighted_variance / 96.68, 1.0, 0.01);
}

TEST(Config, SplittingJsonRoundTrip) {
  const auto dir = temp_dir();
  Matrix a1 = Matrix::Zero(2, 2), a2 = Matrix::Zero(2, 2);
  a1(0, 0) = -1.0;
  a2(1, 1) = -3.0;
  mm::write_dense(dir / "p1.mtx", a1);
  mm::write_dense(dir / "p2.mtx", a2);
  {
    std::ofstream f(dir / "split.json");
    f << R"({"parts": ["p1.mtx", "p2.mtx"], "subsets": [{"ids": [1], "p": 0.25}, {"ids": [2], "p": 0.75}]})";
  }
  const auto [d, t] = load_splitting_json(dir / "split.json");
  EXPECT_EQ(d.part_count(), 2u);
  EXPECT_DOUBLE_EQ(t.pi(0), 0.25);
  EXPECT_NEAR(variance(d, t), 3.0, 1e-8);
  {
    std::ofstream f(dir / "bad.json");
    f << R"({"parts": ["p1.mtx", "p2.mtx"], "subsets": [{"ids": [0], "p": 1.0}]})";
  }
  EXPECT_THROW(load_splitting_json(dir / "bad.json"), TableError);
  {
    std::ofstream f(dir / "broken.json");
    f << "{ nope";
  }
  EXPECT_THROW(load_splitting_json(dir / "broken.json"), ParseError);
}

TEST(Config, ModelFromJson) {
  const auto heat = model_from_json(Json::parse(R"({"type": "heat1d", "N": 25, "case": "ii"})"));
  EXPECT_EQ(heat.sys.dim(), 25);
  EXPECT_EQ(heat.decomposition.part_count(), 3u);
  const auto block = model_from_json(Json::parse(R"({"type": "block", "N": 24, "P": 4})"));
  EXPECT_EQ(block.decomposition.part_count(), 10u);
  EXPECT_THROW(model_from_json(Json::parse(R"({"type": "wave"})")), Error);
  EXPECT_THROW(model_from_json(Json::parse(R"({"type": "heat1d", "spacing": "odd"})")), Error);
  const auto hs = step_sizes_from_json(Json::parse(R"({"h_exponents": [5, 6]})"), {});
  EXPECT_EQ(hs, (std::vector<double>{1.0 / 32.0, 1.0 / 64.0}));
}
