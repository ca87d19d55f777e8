#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "eegrl/rl_env.hpp"
#include "oracles.hpp"

using namespace eegrl;

namespace {

FeatureTrial stream(std::size_t len, std::size_t dim, int label, Rng& rng) {
  return {label, oracle::random_matrix(len, dim, rng), {}};
}

}  // namespace

TEST(Step, ThreeRewardBranchesForEveryActionAndLabel) {
  const RewardConfig cfg;
  for (int y = 1; y <= 4; ++y)
    for (int a = 0; a < 5; ++a) {
      const auto r = step(3, 20, a, y, cfg);
      if (a == 0) {
        EXPECT_EQ(r.reward, -0.1);
        ASSERT_TRUE(r.next.has_value());
        EXPECT_EQ(*r.next, 4u);
      } else {
        EXPECT_TRUE(r.terminal());
        EXPECT_EQ(r.reward, a == y ? 10.0 : -10.0);
      }
    }
}

TEST(Step, ReferenceExamples) {
  const RewardConfig cfg;
  EXPECT_EQ(step(0, 20, 2, 2, cfg).reward, 10.0);
  EXPECT_EQ(step(0, 20, 3, 1, cfg).reward, -10.0);
  const auto skip_last = step(19, 20, 0, 1, cfg);
  EXPECT_TRUE(skip_last.terminal());
  EXPECT_EQ(skip_last.reward, -0.1);
}

TEST(Step, RejectsBadInput) {
  const RewardConfig cfg;
  EXPECT_THROW(step(0, 20, 5, 1, cfg), ContractError);
  EXPECT_THROW(step(0, 20, -1, 1, cfg), ContractError);
  EXPECT_THROW(step(0, 20, 1, 0, cfg), ContractError);
  EXPECT_THROW(step(20, 20, 1, 1, cfg), ContractError);
}

TEST(Step, IsPure) {
  RewardConfig cfg{5.0, -30.0, -0.1, 10};
  for (int a = 0; a < 5; ++a) {
    const auto x = step(4, 10, a, 2, cfg);
    const auto y = step(4, 10, a, 2, cfg);
    EXPECT_EQ(x.reward, y.reward);
    EXPECT_EQ(x.next, y.next);
  }
}

TEST(Step, ScriptedEpisodeRewardIdentity) {
  for (const RewardConfig cfg : {RewardConfig{}, RewardConfig{20.0, -40.0, -0.1, 40}, RewardConfig{5.0, -10.0, -0.1, 10}})
    for (std::size_t t = 0; t < cfg.horizon; ++t)
      for (int y = 1; y <= 4; ++y) {
        double total = 0.0;
        std::size_t s = 0;
        for (; s < t; ++s) total += step(s, cfg.horizon, kSkip, y, cfg).reward;
        const auto last = step(s, cfg.horizon, y, y, cfg);
        total += last.reward;
        EXPECT_TRUE(last.terminal());
        double expected = 0.0;
        for (std::size_t k = 0; k < t; ++k) expected += cfg.r_skip;
        expected += cfg.r_right;
        EXPECT_EQ(total, expected);
        EXPECT_NEAR(total, static_cast<double>(t) * cfg.r_skip + cfg.r_right, 1e-12);
      }
}

TEST(RewardConfig, DefaultsAndValidation) {
  RewardConfig c;
  EXPECT_EQ(c.r_right, 10.0);
  EXPECT_EQ(c.r_wrong, -10.0);
  EXPECT_EQ(c.r_skip, -0.1);
  EXPECT_EQ(c.horizon, 20u);
  EXPECT_NO_THROW(c.validate());
  EXPECT_THROW((RewardConfig{-1.0, -10.0, -0.1, 20}.validate()), ContractError);
  EXPECT_THROW((RewardConfig{10.0, 1.0, -0.1, 20}.validate()), ContractError);
  EXPECT_THROW((RewardConfig{10.0, -10.0, 0.0, 20}.validate()), ContractError);
  EXPECT_THROW((RewardConfig{10.0, -10.0, -0.1, 0}.validate()), ContractError);
}

TEST(BuildEpisodes, CountsPerTrial) {
  Rng rng(1);
  std::vector<FeatureTrial> trials{stream(640, 3, 1, rng)};
  EXPECT_EQ(build_episodes(trials, 20).size(), 32u);
  EXPECT_EQ(build_episodes(trials, 40).size(), 16u);
  EXPECT_EQ(build_episodes(trials, 30).size(), 21u);
  WarningCapture w;
  std::vector<FeatureTrial> short_trial{stream(19, 3, 2, rng)};
  EXPECT_TRUE(build_episodes(short_trial, 20).empty());
  EXPECT_TRUE(w.contains("fewer than the horizon"));
}

TEST(BuildEpisodes, ConsecutiveNonOverlappingSameLabel) {
  Rng rng(2);
  std::vector<FeatureTrial> trials{stream(50, 2, 3, rng), stream(45, 2, 4, rng)};
  const auto eps = build_episodes(trials, 10);
  ASSERT_EQ(eps.size(), 9u);
  for (const auto& e : eps) {
    EXPECT_EQ(e.horizon(), 10u);
    EXPECT_EQ(e.label, trials[e.trial].label);
    for (std::size_t t = 0; t < 10; ++t)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(e.states.at(t, c), trials[e.trial].features.at(e.start + t, c));
  }
  EXPECT_EQ(eps[1].start, 10u);
  EXPECT_EQ(eps[5].trial, 1u);
  EXPECT_EQ(eps[5].start, 0u);
}

TEST(SplitEpisodes, SizesAndPartition) {
  for (std::size_t n : {100u, 101u, 10u, 19u, 257u}) {
    const auto s = split_episodes(n, 9);
    EXPECT_EQ(s.val.size(), n / 10);
    EXPECT_EQ(s.test.size(), n / 10);
    EXPECT_EQ(s.train.size(), n - 2 * (n / 10));
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.val.begin(), s.val.end());
    all.insert(s.test.begin(), s.test.end());
    EXPECT_EQ(all.size(), n);
    EXPECT_EQ(*all.rbegin(), n - 1);
  }
  const auto a = split_episodes(101, 3);
  EXPECT_EQ(a.train.size(), 81u);
  const auto b = split_episodes(101, 3);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(split_episodes(101, 4).train, a.train);
  EXPECT_THROW(split_episodes(9, 1), ContractError);
}

TEST(EpisodeCache, RoundTrip) {
  Rng rng(3);
  std::vector<FeatureTrial> trials{stream(40, 4, 1, rng), stream(40, 4, 4, rng)};
  const auto eps = build_episodes(trials, 20);
  const auto path = (std::filesystem::temp_directory_path() / "eegrl_episode_cache.bin").string();
  write_episode_cache(path, eps);
  const auto back = read_episode_cache(path);
  ASSERT_EQ(back.size(), eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) {
    EXPECT_EQ(back[i].label, eps[i].label);
    EXPECT_EQ(back[i].states, eps[i].states);
  }
  std::filesystem::resize_file(path, 40);
  EXPECT_THROW(read_episode_cache(path), ParseError);
  std::filesystem::remove(path);
}
