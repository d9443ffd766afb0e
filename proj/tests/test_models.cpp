#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "rbm/models.hpp"

using namespace rbm;

namespace {

std::filesystem::path temp_dir() {
  auto d = std::filesystem::temp_directory_path() / "rbm_test_models";
  std::filesystem::create_directories(d);
  return d;
}

std::size_t off_diagonal_pairs(const CsrMatrix& m) {
  std::size_t c = 0;
  for (Index i = 0; i < m.outerSize(); ++i)
    for (CsrMatrix::InnerIterator it(m, i); it; ++it)
      if (it.row() < it.col() && it.value() != 0.0) ++c;
  return c;
}

}  // namespace

TEST(Heat1d, StencilEntriesAndRowSums) {
  Heat1dConfig cfg;  // N = 61, L = 3/2 on [−L, L]
  const auto m = build_heat1d(cfg);
  const Matrix A = to_dense(m.sys.A);
  EXPECT_NEAR(A(0, 0), -800.0, 1e-9);
  EXPECT_NEAR(A(0, 1), 800.0, 1e-9);
  EXPECT_NEAR(A(60, 59), 800.0, 1e-9);
  EXPECT_NEAR(A(30, 30), -800.0, 1e-9);
  EXPECT_NEAR(A(30, 29), 400.0, 1e-9);
  for (Index i = 0; i < 61; ++i) EXPECT_NEAR(A.row(i).sum(), 0.0, 1e-9);
}

TEST(Heat1d, TwoPartSplitCornersAtInterface) {
  const auto m = build_heat1d({});
  const Matrix A1 = to_dense(m.decomposition.parts[0]), A2 = to_dense(m.decomposition.parts[1]);
  EXPECT_NEAR(A1(30, 30), -400.0, 1e-9);
  EXPECT_NEAR(A2(30, 30), -400.0, 1e-9);
  EXPECT_TRUE(A1.bottomRightCorner(30, 30).isZero(0.0));
  EXPECT_TRUE(A2.topLeftCorner(30, 30).isZero(0.0));
  EXPECT_TRUE(A1.block(0, 31, 31, 30).isZero(0.0));
}

TEST(Heat1d, InputCostAndInitialState) {
  const auto m = build_heat1d({});
  const double dx = 0.05;
  // nodes in [−1/2, 0]: ξ = −0.5 .. 0 → 11 nodes
  EXPECT_EQ(m.sys.B.sum(), 11.0);
  EXPECT_EQ(m.sys.B(20, 0), 1.0);
  EXPECT_EQ(m.sys.B(30, 0), 1.0);
  EXPECT_EQ(m.sys.B(31, 0), 0.0);
  EXPECT_NEAR(to_dense(m.cost.Q).trace(), 100.0 * 1.5, 1e-9);
  EXPECT_NEAR(to_dense(m.cost.Q)(30, 30), 100.0 * 0.5 * dx, 1e-12);
  EXPECT_NEAR(m.sys.x0(30), 1.0, 1e-15);
  EXPECT_NEAR(m.sys.x0(0), std::exp(-2.25) + 2.25 * std::exp(-2.25), 1e-15);
  EXPECT_EQ(m.cost.R(0, 0), 1.0);
}

TEST(Heat1d, CasesAndDivisibility) {
  for (auto c : {Heat1dCase::i, Heat1dCase::ii, Heat1dCase::iii, Heat1dCase::iv}) {
    Heat1dConfig cfg;
    cfg.which = c;
    const auto m = build_heat1d(cfg);
    EXPECT_EQ(m.decomposition.part_count(), heat1d_part_count(c));
    EXPECT_TRUE(validate_dissipative(m.decomposition).empty()) << to_string(c);
  }
  Heat1dConfig bad;
  bad.N = 62;
  EXPECT_THROW(build_heat1d(bad), Error);
  bad.N = 61;
  bad.which = Heat1dCase::iii;
  EXPECT_NO_THROW(build_heat1d(bad));
  const auto iv = build_heat1d({61, 1.5, 0.5, Heat1dCase::iv, Heat1dSpacing::domain});
  EXPECT_EQ(iv.table.size(), 2u);
  EXPECT_DOUBLE_EQ(iv.table.pi(2), 0.5);
}

TEST(Heat1d, CaseOneAndFourShareVariance) {
  const auto a = build_heat1d({61, 1.5, 0.5, Heat1dCase::i, Heat1dSpacing::half_domain});
  const auto b = build_heat1d({61, 1.5, 0.5, Heat1dCase::iv, Heat1dSpacing::half_domain});
  const double va = variance(a.decomposition, a.table), vb = variance(b.decomposition, b.table);
  EXPECT_NEAR(va / vb, 1.0, 0.01);
}

TEST(Heat3d, PairCountAtSixteenNodes) {
  Heat3dConfig cfg;
  cfg.nodes = 16;
  cfg.M = 8;
  const auto m = build_heat3d(cfg);
  EXPECT_EQ(off_diagonal_pairs(m.sys.A), 11520u);
  EXPECT_EQ(m.sys.dim(), 4096);
}

TEST(Heat3d, BalancedGroupsAndDissipativeParts) {
  for (std::uint64_t seed : {0ull, 1ull, 42ull}) {
    Heat3dConfig cfg;
    cfg.nodes = 6;
    cfg.M = 7;
    cfg.P = 3;
    cfg.grouping_seed = seed;
    const auto m = build_heat3d(cfg);
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& p : m.decomposition.parts) {
      lo = std::min(lo, off_diagonal_pairs(p));
      hi = std::max(hi, off_diagonal_pairs(p));
    }
    EXPECT_LE(hi - lo, 1u);
    EXPECT_TRUE(validate_dissipative(m.decomposition).empty());
    EXPECT_EQ(m.table.size(), 35u);
    for (Index i = 0; i < m.sys.dim(); ++i) EXPECT_NEAR(to_dense(m.sys.A).row(i).sum(), 0.0, 1e-9);
  }
}

TEST(Heat3d, DifferentSeedsGiveDifferentGroups) {
  Heat3dConfig a;
  a.nodes = 4;
  a.M = 3;
  Heat3dConfig b = a;
  b.grouping_seed = 5;
  const auto ma = build_heat3d(a), mb = build_heat3d(b);
  EXPECT_FALSE(to_dense(ma.decomposition.parts[0]).isApprox(to_dense(mb.decomposition.parts[0])));
}

TEST(BlockSplit, PartCounts) {
  const CsrMatrix A = to_csr(random_dominant_matrix(96, 1, 0.3));
  for (auto [P, M] : std::vector<std::pair<std::size_t, std::size_t>>{{4, 10}, {8, 36}, {16, 136}, {32, 528}}) {
    const auto [d, t] = build_block_split(A, P);
    EXPECT_EQ(d.part_count(), M);
    EXPECT_EQ(t.size(), M);
    EXPECT_DOUBLE_EQ(t.probability(0), 2.0 / static_cast<double>(P * (P + 1)));
  }
}

TEST(BlockSplit, TwoByTwoExample) {
  Matrix A(2, 2);
  A << -3, 1, 1, -3;
  const auto [d1, t1] = build_block_split(to_csr(A), 1);
  ASSERT_EQ(d1.part_count(), 1u);
  EXPECT_EQ(to_dense(d1.parts[0]), A);
  const auto [d2, t2] = build_block_split(to_csr(A), 2);
  ASSERT_EQ(d2.part_count(), 3u);
  Matrix p11(2, 2), p12(2, 2), p22(2, 2);
  p11 << -2, 0, 0, 0;
  p12 << -1, 1, 1, -1;
  p22 << 0, 0, 0, -2;
  EXPECT_EQ(to_dense(d2.parts[block_pair_index(0, 0, 2)]), p11);
  EXPECT_EQ(to_dense(d2.parts[block_pair_index(0, 1, 2)]), p12);
  EXPECT_EQ(to_dense(d2.parts[block_pair_index(1, 1, 2)]), p22);
}

TEST(BlockSplit, PairIndexIsRowMajorBijection) {
  std::set<std::size_t> seen;
  std::size_t expect = 0;
  for (std::size_t p = 0; p < 5; ++p)
    for (std::size_t q = p; q < 5; ++q) {
      EXPECT_EQ(block_pair_index(p, q, 5), expect++);
      seen.insert(block_pair_index(p, q, 5));
    }
  EXPECT_EQ(seen.size(), 15u);
}

TEST(BlockSplit, ReconstructionAndDissipativityProperty) {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const std::size_t N = 6 + 3 * (seed % 12);  // up to 39
    const std::size_t P = (seed % 2) ? 3 : 1;
    const Matrix A = random_dominant_matrix(N, seed, 0.5);
    const auto [d, t] = build_block_split(to_csr(A), P);
    Matrix sum = Matrix::Zero(static_cast<Index>(N), static_cast<Index>(N));
    for (const auto& p : d.parts) sum += to_dense(p);
    EXPECT_LE((sum - A).cwiseAbs().maxCoeff(), 1e-10 * operator_norm(A));
    EXPECT_TRUE(validate_dissipative(d).empty());
  }
}

TEST(BlockSplit, DominanceViolationNamesRow) {
  Matrix A(3, 3);
  A << -3, 1, 1, 1, -1.5, 1, 1, 1, -3;
  try {
    (void)build_block_split(to_csr(A), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
  }
  Matrix B = Matrix::Identity(4, 4) * -3.0;
  EXPECT_THROW(build_block_split(to_csr(B), 3), Error);
}

TEST(Particles, PartitionCountsAndInclusion) {
  struct Case {
    std::size_t N, P, count;
    double pi;
  };
  for (const auto& c : {Case{4, 2, 3, 1.0 / 3.0}, Case{6, 3, 10, 0.4}, Case{6, 2, 15, 0.2}, Case{8, 4, 35, 3.0 / 7.0}}) {
    const auto [d, t] = build_particles({c.N, c.P, std::nullopt});
    EXPECT_EQ(t.size(), c.count);
    EXPECT_EQ(enumerate_batch_partitions(c.N, c.P).size(), c.count);
    for (std::size_t m = 0; m < d.part_count(); ++m) EXPECT_NEAR(t.pi(m), c.pi, 1e-14);
    for (auto cnt : particle_inclusion_counts(c.N, c.P)) EXPECT_EQ(cnt * (c.N - 1), c.count * (c.P - 1));
  }
}

TEST(Particles, SingleBatchIsDeterministic) {
  const auto [d, t] = build_particles({5, 5, std::nullopt});
  EXPECT_EQ(t.size(), 1u);
  EXPECT_EQ(t.pi(0), 1.0);
  EXPECT_LT((to_dense(assemble_subset_operator(d, t, 0).matrix) - to_dense(d.A)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Particles, SubsetOperatorsAreDissipativeForSymmetricCoefficients) {
  const auto [d, t] = build_particles({6, 3, std::nullopt});
  for (const auto& op : assemble_all(d, t)) EXPECT_TRUE(check_dissipative(op.matrix).dissipative);
}

TEST(Particles, GuardAndValidation) {
  EXPECT_THROW(build_particles({6, 4, std::nullopt}), Error);
  EXPECT_THROW(build_particles({4, 1, std::nullopt}), Error);
  EXPECT_THROW(enumerate_batch_partitions(16, 2), Error);  // 2027025 partitions
}

TEST(LoadSystem, ScalarRoundTrip) {
  const auto dir = temp_dir();
  mm::write_dense(dir / "A.mtx", Matrix::Constant(1, 1, -1.0));
  mm::write_dense(dir / "B.mtx", Matrix::Zero(1, 1));
  mm::write_dense(dir / "x0.mtx", Matrix::Ones(1, 1));
  mm::write_dense(dir / "E.mtx", Matrix::Ones(1, 1));
  SystemFiles f;
  f.A = dir / "A.mtx";
  f.B = dir / "B.mtx";
  f.x0 = dir / "x0.mtx";
  f.E = dir / "E.mtx";
  const auto loaded = load_system(f);
  const auto g = uniform_grid(0.1, 1);
  const auto x = solve_forward(loaded.sys, ControlSignal::zero(g, 1), original_source(loaded.sys, g));
  EXPECT_NEAR(x.states(0, 1), 0.95 / 1.05, 1e-15);
  EXPECT_FALSE(loaded.cost.has_value());
}

TEST(LoadSystem, MissingFileIsNamed) {
  SystemFiles f;
  f.A = temp_dir() / "nope_A.mtx";
  f.B = temp_dir() / "nope_B.mtx";
  try {
    (void)load_system(f);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("nope_A.mtx"), std::string::npos);
  }
}

TEST(LoadSystem, CoordinateProfileAndBlockSplit) {
  const auto dir = temp_dir();
  const Matrix A = random_dominant_matrix(6, 3);
  mm::write_dense(dir / "dom_A.mtx", A);
  mm::write_dense(dir / "dom_B.mtx", Matrix::Ones(6, 2));
  {
    std::ofstream c(dir / "coords.csv");
    c << "xi\n";
    for (int k = 0; k < 6; ++k) c << -5.0 + 2.0 * k << '\n';
  }
  SystemFiles f;
  f.A = dir / "dom_A.mtx";
  f.B = dir / "dom_B.mtx";
  f.coordinates = dir / "coords.csv";
  const auto loaded = load_system(f);
  EXPECT_NEAR(loaded.sys.x0(0), 0.0, 1e-15);
  EXPECT_NEAR(loaded.sys.x0(2), std::exp(-0.16 * 1.0) - std::exp(-0.16 * 25.0), 1e-15);
  const auto [d, t] = build_block_split(loaded.sys.A, 2);
  EXPECT_EQ(d.part_count(), 3u);
}
