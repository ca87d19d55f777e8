#include <gtest/gtest.h>

#include <sstream>

#include "eegrl/graph.hpp"
#include "oracles.hpp"

using namespace eegrl;

TEST(BaseAdjacency, ZeroDiagonalOnesElsewhere) {
  BaseAdjacency base;
  EXPECT_EQ(base.nodes(), 64u);
  EXPECT_EQ(base.edge_count(), 4032u);
  for (std::size_t i = 0; i < 64; ++i)
    for (std::size_t j = 0; j < 64; ++j) EXPECT_EQ(base(i, j), i == j ? 0.0 : 1.0);
}

TEST(NormalizedLaplacian, TwoNodes) {
  auto l = normalized_laplacian(Tensor::from_rows({{0, 1}, {1, 0}}));
  EXPECT_EQ(l.matrix, Tensor::from_rows({{1, -1}, {-1, 1}}));
  EXPECT_TRUE(l.isolated.empty());
}

TEST(NormalizedLaplacian, CompleteThreeNodes) {
  auto l = normalized_laplacian(BaseAdjacency(3).matrix());
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(l.matrix.at(i, j), i == j ? 1.0 : -0.5, 1e-15);
}

TEST(NormalizedLaplacian, ZeroRowBecomesIdentityRowWithWarning) {
  WarningCapture cap;
  auto a = Tensor::from_rows({{0, 0, 0}, {0, 0, 1}, {0, 1, 0}});
  auto l = normalized_laplacian(a);
  EXPECT_EQ(l.matrix.at(0, 0), 1.0);
  EXPECT_EQ(l.matrix.at(0, 1), 0.0);
  EXPECT_EQ(l.matrix.at(1, 0), 0.0);
  ASSERT_EQ(l.isolated.size(), 1u);
  EXPECT_EQ(l.isolated[0], 0u);
  EXPECT_TRUE(cap.contains("non-positive degree"));
}

TEST(NormalizedLaplacian, SpectrumInZeroTwo) {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + trial % 5;
    auto l = normalized_laplacian(oracle::random_symmetric_graph(n, rng));
    auto ev = oracle::eigenvalues_symmetric(l.matrix);
    EXPECT_GE(ev.minCoeff(), -1e-12);
    EXPECT_LE(ev.maxCoeff(), 2.0 + 1e-12);
  }
}

TEST(ScaleLaplacian, TwoNodePath) {
  auto s = scale_laplacian(Tensor::from_rows({{1, -1}, {-1, 1}}));
  EXPECT_FALSE(s.fallback);
  EXPECT_NEAR(s.lambda_max, 2.0, 1e-8);
  EXPECT_LT(max_abs_diff(s.matrix, Tensor::from_rows({{0, -1}, {-1, 0}})), 1e-8);
}

TEST(ScaleLaplacian, ZeroMatrixFallsBack) {
  WarningCapture cap;
  auto s = scale_laplacian(Tensor::matrix(3, 3));
  EXPECT_TRUE(s.fallback);
  EXPECT_EQ(s.lambda_max, 2.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(s.matrix.at(i, j), i == j ? -1.0 : 0.0);
  EXPECT_TRUE(cap.contains("falling back"));
}

TEST(ScaleLaplacian, LargestEigenvalueIsOne) {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + trial % 5;
    auto l = normalized_laplacian(oracle::random_symmetric_graph(n, rng));
    auto s = scale_laplacian(l.matrix);
    auto ev = oracle::eigenvalues_symmetric(s.matrix);
    EXPECT_NEAR(ev.maxCoeff(), 1.0, 1e-6);
    EXPECT_GE(ev.minCoeff(), -1.0 - 1e-6);
  }
}

TEST(ScaleLaplacian, SymmetricWhenAdjacencyIs) {
  Rng rng(43);
  auto l = normalized_laplacian(oracle::random_symmetric_graph(6, rng));
  auto s = scale_laplacian(l.matrix);
  EXPECT_LT(max_abs_diff(s.matrix, transpose(s.matrix)), 1e-9);
}

TEST(ScaleLaplacian, SpectralRadiusByPowerIteration) {
  Rng rng(47);
  for (int trial = 0; trial < 50; ++trial) {
    auto l = normalized_laplacian(oracle::random_symmetric_graph(2 + trial % 5, rng));
    auto s = scale_laplacian(l.matrix);
    auto p = power_iteration(s.matrix);
    EXPECT_LE(std::abs(p.eigenvalue), 1.0 + 1e-6);
  }
}

TEST(ScaleLaplacian, FullSizeCompleteGraph) {
  auto l = normalized_laplacian(BaseAdjacency(64).matrix());
  auto s = scale_laplacian(l.matrix);
  EXPECT_FALSE(s.fallback);
  // complete graph on n nodes: spectrum {0, n/(n-1)}
  EXPECT_NEAR(s.lambda_max, 64.0 / 63.0, 1e-8);
}

TEST(EffectiveAdjacency, Elementwise) {
  BaseAdjacency base(4);
  AdjacencyMask mask(base);
  EXPECT_EQ(effective_adjacency(base, mask), base.matrix());
  mask.values().at(0, 1) = 0.5;
  EXPECT_EQ(effective_adjacency(base, mask).at(0, 1), 0.5);
  for (std::size_t k = 0; k < 16; ++k) mask.values()[k] = 0.0;
  auto a = effective_adjacency(base, mask);
  for (double v : a.data()) EXPECT_EQ(v, 0.0);
}

TEST(EffectiveAdjacency, FrozenEntriesAreExactZero) {
  BaseAdjacency base(4);
  AdjacencyMask mask(base);
  mask.freeze_flat(1);
  mask.values()[1] = 3.0;  // stray write is ignored through the frozen flag
  EXPECT_EQ(effective_adjacency(base, mask)[1], 0.0);
  mask.enforce_frozen();
  EXPECT_EQ(mask.values()[1], 0.0);
}

TEST(AdjacencyMask, DensityCountsNonzero) {
  BaseAdjacency base(64);
  AdjacencyMask mask(base);
  EXPECT_EQ(mask.live_count(), 4032u);
  EXPECT_DOUBLE_EQ(mask.density(), 1.0);
  for (std::size_t k = 1; k < 404; ++k)
    if (!mask.frozen_flat(k)) mask.freeze_flat(k);
  EXPECT_GT(mask.density(), 0.0);
  EXPECT_LE(mask.density(), 1.0);
}

TEST(AdjacencyMask, TextRoundTrip) {
  BaseAdjacency base(5);
  AdjacencyMask mask(base);
  Rng rng(2);
  std::uniform_real_distribution<double> d(-2, 2);
  for (std::size_t k = 0; k < 25; ++k)
    if (!mask.frozen_flat(k)) mask.values()[k] = d(rng);
  mask.freeze_flat(3);
  mask.freeze_flat(7);
  std::stringstream ss;
  write_mask(ss, mask);
  auto back = read_mask(ss);
  EXPECT_EQ(back.values(), mask.values());
  EXPECT_EQ(back.frozen_flags(), mask.frozen_flags());
  EXPECT_EQ(back.base_count(), 20u);
  EXPECT_DOUBLE_EQ(back.density(), mask.density());
}

TEST(AdjacencyMask, ReadRejectsBadFiles) {
  std::istringstream no_header("0 1 1.0\n");
  EXPECT_THROW(read_mask(no_header), ParseError);
  std::istringstream wrong_count("# adjacency-mask nodes=2 live=2 base=2 density=1\n0 1 1\n");
  EXPECT_THROW(read_mask(wrong_count), ParseError);
  std::istringstream wrong_density("# adjacency-mask nodes=2 live=2 base=2 density=0.5\n0 1 1\n1 0 1\n");
  EXPECT_THROW(read_mask(wrong_density), ParseError);
}

TEST(PowerIteration, MatchesDenseEigensolver) {
  Rng rng(53);
  for (int trial = 0; trial < 50; ++trial) {
    auto l = normalized_laplacian(oracle::random_symmetric_graph(3 + trial % 4, rng));
    auto p = power_iteration(l.matrix);
    EXPECT_TRUE(p.converged);
    EXPECT_NEAR(p.eigenvalue, oracle::eigenvalues_symmetric(l.matrix).maxCoeff(), 1e-7);
  }
}
