#include <gtest/gtest.h>

#include <numeric>

#include "eegrl/glt.hpp"
#include "eegrl/recording.hpp"
#include "eegrl/synthetic.hpp"
#include "oracles.hpp"

using namespace eegrl;

namespace {

AdjacencyMask random_mask(std::size_t n, Rng& rng) {
  AdjacencyMask m{BaseAdjacency(n)};
  std::normal_distribution<double> g(1.0, 0.5);
  auto v = m.values().data();
  for (std::size_t k = 0; k < v.size(); ++k)
    if (!m.frozen_flat(k)) v[k] = g(rng);
  return m;
}

// Three nodes; entries 1, 2, 5, 7 are live with the given values, everything else frozen.
AdjacencyMask four_entry_mask(std::vector<double> live) {
  std::vector<double> values(9, 0.0);
  std::vector<std::uint8_t> frozen(9, 1);
  const std::size_t slots[4] = {1, 2, 5, 7};
  for (std::size_t i = 0; i < 4; ++i) {
    values[slots[i]] = live[i];
    frozen[slots[i]] = 0;
  }
  return AdjacencyMask::from_entries(3, values, frozen, 6);
}

PointDataset synthetic_points(std::uint64_t seed, std::size_t stride) {
  SyntheticSpec spec;
  spec.trials = 40;
  spec.trial_samples = 64;
  spec.clear_fraction = 1.0;
  spec.seed = seed;
  const auto trials = preprocess(generate_synthetic(spec), {.trial_seconds = 0.4, .notch = false});
  PointDataset d;
  std::vector<double> data;
  for (const auto& tr : trials)
    for (std::size_t t = 0; t < tr.samples.rows(); t += stride) {
      data.insert(data.end(), tr.samples.row(t).begin(), tr.samples.row(t).end());
      d.labels.push_back(tr.label);
    }
  d.points = Tensor({d.labels.size(), 64}, std::move(data));
  return d;
}

}  // namespace

TEST(PruneMask, FirstRoundOnFullGraph) {
  Rng rng(1);
  const auto m = random_mask(64, rng);
  ASSERT_EQ(m.live_count(), 4032u);
  const auto p = prune_mask(m, 0.1);
  EXPECT_EQ(p.live_count(), 3629u);
  EXPECT_EQ(m.live_count() - p.live_count(), 403u);
  for (std::size_t k = 0; k < p.frozen_flags().size(); ++k) {
    if (p.frozen_flat(k)) EXPECT_EQ(p.values()[k], 0.0);
    else EXPECT_EQ(p.values()[k], 1.0);
  }
}

TEST(PruneMask, SmallestMagnitudeGoesFirst) {
  const auto p = prune_mask(four_entry_mask({0.1, -0.5, 2.0, -0.05}), 0.25);
  EXPECT_TRUE(p.frozen_flat(7));
  EXPECT_EQ(p.live_count(), 3u);
  EXPECT_EQ(p.values()[1], 1.0);
  EXPECT_EQ(p.values()[2], 1.0);
  EXPECT_EQ(p.values()[5], 1.0);
}

TEST(PruneMask, TiesPruneLowerIndexFirst) {
  const auto p = prune_mask(four_entry_mask({0.7, -0.3, 0.3, 0.9}), 0.25);
  EXPECT_TRUE(p.frozen_flat(2));
  EXPECT_FALSE(p.frozen_flat(5));
}

TEST(PruneMask, RemovesAtLeastOneAndRejectsBadInput) {
  const auto p = prune_mask(four_entry_mask({0.7, 0.3, 0.2, 0.9}), 0.1);
  EXPECT_EQ(p.live_count(), 3u);
  EXPECT_THROW(prune_mask(four_entry_mask({1, 1, 1, 1}), 0.0), ContractError);
  EXPECT_THROW(prune_mask(four_entry_mask({1, 1, 1, 1}), 1.0), ContractError);
  auto dead = AdjacencyMask::from_entries(2, {0, 0, 0, 0}, {1, 1, 1, 1}, 2);
  EXPECT_THROW(prune_mask(dead, 0.1), ContractError);
}

TEST(PruneMask, FloorScheduleFromFullGraph) {
  Rng rng(2);
  auto m = random_mask(64, rng);
  std::vector<std::size_t> live{m.live_count()};
  std::size_t rounds = 0;
  while (m.density() >= 0.1339) {
    const auto before = m.frozen_flags();
    m = prune_mask(m, 0.1);
    ++rounds;
    for (std::size_t k = 0; k < before.size(); ++k)
      if (before[k]) EXPECT_TRUE(m.frozen_flat(k));
    EXPECT_EQ(m.live_count(), m.nonzero_count());
    live.push_back(m.live_count());
    auto v = m.values().data();
    std::normal_distribution<double> g(1.0, 0.5);
    for (std::size_t k = 0; k < v.size(); ++k)
      if (!m.frozen_flat(k)) v[k] = g(rng);
  }
  std::vector<std::size_t> expected{4032};
  while (static_cast<double>(expected.back()) / 4032.0 >= 0.1339)
    expected.push_back(expected.back() - expected.back() / 10);
  EXPECT_EQ(live, expected);
  EXPECT_LE(rounds, 20u);
  EXPECT_EQ(live[1], 3629u);
  EXPECT_NEAR(static_cast<double>(live[2]) / 4032.0, 0.810, 0.001);
  EXPECT_NEAR(static_cast<double>(live[3]) / 4032.0, 0.729, 0.001);
  EXPECT_LT(static_cast<double>(live.back()) / 4032.0, 0.1339);
  EXPECT_GE(static_cast<double>(live[live.size() - 2]) / 4032.0, 0.1339);
}

TEST(RunGlt, TargetOneMeansSingleLevel) {
  Rng rng(3);
  GcnConfig c;
  c.nodes = 8;
  c.conv_widths = {1, 4};
  c.order = 2;
  c.fc_widths = {4, 8, 4};
  GcnModel model(c, rng);
  PointDataset d;
  d.points = oracle::random_matrix(16, 8, rng);
  for (int i = 0; i < 16; ++i) d.labels.push_back(i % 4 + 1);
  GltConfig g;
  g.target_density = 1.0;
  g.hyper.epochs = 2;
  g.hyper.batch_size = 8;
  const auto s = run_glt(model, d, d, g);
  ASSERT_EQ(s.levels.size(), 1u);
  EXPECT_TRUE(s.levels[0].trained);
  EXPECT_TRUE(s.levels[0].extractor);
  EXPECT_EQ(s.levels[0].density, 1.0);
  ASSERT_TRUE(s.extractor.has_value());
  EXPECT_TRUE(s.extractor->frozen());
}

TEST(RunGlt, ScheduleBookkeeping) {
  Rng rng(4);
  GcnConfig c;
  c.nodes = 8;
  c.conv_widths = {1, 4};
  c.order = 2;
  c.fc_widths = {4, 8, 4};
  GcnModel model(c, rng);
  PointDataset d;
  d.points = oracle::random_matrix(16, 8, rng);
  for (int i = 0; i < 16; ++i) d.labels.push_back(i % 4 + 1);
  GltConfig g;
  g.prune_rate = 0.2;
  g.target_density = 0.4;
  g.hyper.epochs = 2;
  g.hyper.batch_size = 8;
  std::size_t callbacks = 0;
  const auto s = run_glt(model, d, d, g, [&](PruningLevel& level, GcnModel& best) {
    ++callbacks;
    EXPECT_EQ(best.mask().density(), level.density);
    level.checkpoint = "level" + std::to_string(level.round);
  });
  ASSERT_GE(s.levels.size(), 3u);
  for (std::size_t i = 1; i < s.levels.size(); ++i) {
    EXPECT_LT(s.levels[i].density, s.levels[i - 1].density);
    for (std::size_t k = 0; k < 64; ++k)
      if (s.levels[i - 1].mask.frozen_flat(k)) EXPECT_TRUE(s.levels[i].mask.frozen_flat(k));
  }
  for (const auto& l : s.levels) EXPECT_DOUBLE_EQ(l.density, l.mask.density());
  EXPECT_FALSE(s.levels.back().trained);
  EXPECT_LT(s.levels.back().density, 0.4);
  EXPECT_EQ(callbacks, s.levels.size() - 1);
  const auto* ex = s.extractor_level();
  ASSERT_NE(ex, nullptr);
  EXPECT_EQ(ex, &s.levels[s.levels.size() - 2]);
  EXPECT_GE(ex->density, 0.4);
  EXPECT_EQ(s.extractor->mask().density(), ex->density);
  const auto manifest = schedule_manifest(s);
  EXPECT_EQ(manifest["levels"].size(), s.levels.size());
  EXPECT_EQ(manifest["levels"][0]["checkpoint"], "level0");
}

TEST(RunGlt, DivergenceAbortsAndKeepsLevels) {
  Rng rng(5);
  GcnConfig c;
  c.nodes = 8;
  c.conv_widths = {1, 4};
  c.order = 2;
  c.fc_widths = {4, 8, 4};
  GcnModel model(c, rng);
  PointDataset d;
  d.points = oracle::random_matrix(16, 8, rng);
  for (int i = 0; i < 16; ++i) d.labels.push_back(i % 4 + 1);
  GltConfig g;
  g.hyper.epochs = 3;
  g.hyper.batch_size = 4;
  g.hyper.lr = 1e300;
  WarningCapture warnings;
  const auto s = run_glt(model, d, d, g);
  EXPECT_TRUE(s.aborted);
  EXPECT_FALSE(s.abort_reason.empty());
  EXPECT_TRUE(warnings.contains("aborted"));
}

TEST(RunGlt, PrunedSyntheticKeepsAccuracy) {
  const auto all = synthetic_points(31, 4);
  std::vector<std::size_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(6);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t cut = idx.size() * 4 / 5;
  const auto train = all.subset(std::span(idx).first(cut));
  const auto val = all.subset(std::span(idx).subspan(cut));
  GcnConfig c;
  c.conv_widths = {1, 4, 8};
  c.order = 3;
  c.fc_widths = {8, 16, 4};
  GcnModel model(c, rng);
  GltConfig g;
  g.hyper.epochs = 4;
  g.hyper.batch_size = 64;
  WarningCapture quiet;
  const auto s = run_glt(model, train, val, g);
  ASSERT_FALSE(s.aborted);
  const auto* ex = s.extractor_level();
  ASSERT_NE(ex, nullptr);
  EXPECT_GE(ex->density, 0.1339);
  EXPECT_LT(s.final_density, 0.1339);
  EXPECT_GE(ex->val_accuracy, s.levels.front().val_accuracy - 0.05);
}
