#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegrl/checkpoint.hpp"
#include "eegrl/tensor.hpp"

namespace eegrl {

inline constexpr int kSkip = 0;
inline constexpr int kActionCount = 5;
inline constexpr int kClassCount = 4;

struct RewardConfig {
  double r_right = 10.0;
  double r_wrong = -10.0;
  double r_skip = -0.1;
  std::size_t horizon = 20;

  void validate() const {
    if (!(r_right > 0.0 && 0.0 > r_skip))
      throw ContractError("RewardConfig: need r_right > 0 > r_skip");
    if (!(r_wrong < 0.0)) throw ContractError("RewardConfig: r_wrong must be negative");
    if (horizon == 0) throw ContractError("RewardConfig: horizon must be positive");
  }
};

inline void to_json(nlohmann::json& j, const RewardConfig& c) {
  j = nlohmann::json{{"r_right", c.r_right}, {"r_wrong", c.r_wrong}, {"r_skip", c.r_skip}, {"horizon", c.horizon}};
}

inline void from_json(const nlohmann::json& j, RewardConfig& c) {
  RewardConfig d;
  c.r_right = j.value("r_right", d.r_right);
  c.r_wrong = j.value("r_wrong", d.r_wrong);
  c.r_skip = j.value("r_skip", d.r_skip);
  c.horizon = j.value("horizon", d.horizon);
}

/// H consecutive feature vectors from one trial; all share the trial's label.
struct Episode {
  int label = 0;
  std::size_t trial = 0;
  std::size_t start = 0;  // index of the first time point within the trial
  Tensor states;          // H × feature_dim
  std::vector<std::uint8_t> clear;  // per-state ground truth when known (synthetic data)

  std::size_t horizon() const { return states.empty() ? 0 : states.rows(); }
};

struct StepResult {
  std::optional<std::size_t> next;  // index of the next state; empty when terminal
  double reward = 0.0;

  bool terminal() const { return !next.has_value(); }
};

/// One environment transition from state `t` of an episode of length `horizon`.
/// Skip moves to t + 1 (terminal at the last state); any class action ends the episode.
inline StepResult step(std::size_t t, std::size_t horizon, int action, int label, const RewardConfig& cfg) {
  if (action < 0 || action >= kActionCount)
    throw ContractError("step: action " + std::to_string(action) + " outside 0..4");
  if (label < 1 || label > kClassCount) throw ContractError("step: label must be in 1..4");
  if (t >= horizon) throw ContractError("step: state index past the episode end");
  if (action == kSkip) {
    StepResult r{std::nullopt, cfg.r_skip};
    if (t + 1 < horizon) r.next = t + 1;
    return r;
  }
  return {std::nullopt, action == label ? cfg.r_right : cfg.r_wrong};
}

inline StepResult step(const Episode& e, std::size_t t, int action, const RewardConfig& cfg) {
  return step(t, e.horizon(), action, e.label, cfg);
}

/// Per-trial feature stream: T × feature_dim plus the trial label.
struct FeatureTrial {
  int label = 0;
  Tensor features;
  std::vector<std::uint8_t> clear;
};

/// floor(T / H) non-overlapping episodes per trial; the tail is dropped. Trials shorter than
/// H produce no episodes and a warning.
inline std::vector<Episode> build_episodes(const std::vector<FeatureTrial>& trials, std::size_t horizon) {
  if (horizon == 0) throw ContractError("build_episodes: horizon must be positive");
  std::vector<Episode> out;
  for (std::size_t t = 0; t < trials.size(); ++t) {
    const auto& tr = trials[t];
    const std::size_t len = tr.features.empty() ? 0 : tr.features.rows();
    if (len < horizon) {
      warn("build_episodes: trial " + std::to_string(t) + " has " + std::to_string(len) +
           " time points, fewer than the horizon " + std::to_string(horizon) + "; skipped");
      continue;
    }
    const std::size_t dim = tr.features.cols();
    for (std::size_t e = 0; e < len / horizon; ++e) {
      Episode ep;
      ep.label = tr.label;
      ep.trial = t;
      ep.start = e * horizon;
      ep.states = Tensor::matrix(horizon, dim);
      std::copy_n(tr.features.row(ep.start).begin(), horizon * dim, ep.states.data().begin());
      if (!tr.clear.empty())
        ep.clear.assign(tr.clear.begin() + static_cast<std::ptrdiff_t>(ep.start),
                        tr.clear.begin() + static_cast<std::ptrdiff_t>(ep.start + horizon));
      out.push_back(std::move(ep));
    }
  }
  return out;
}

struct EpisodeSplit {
  std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle, then floor(10%) validation, floor(10%) test, remainder training.
inline EpisodeSplit split_episodes(std::size_t count, std::uint64_t seed) {
  if (count < 10) throw ContractError("split_episodes: need at least 10 episodes, got " + std::to_string(count));
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t tenth = count / 10;
  EpisodeSplit s;
  s.val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(tenth));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(tenth), idx.begin() + static_cast<std::ptrdiff_t>(2 * tenth));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(2 * tenth), idx.end());
  return s;
}

template <class T>
std::vector<T> gather(const std::vector<T>& items, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(items.at(i));
  return out;
}

// Episode cache: "EGRLEPC1" | u64 H | u64 dim | u64 count | per episode f64[H*dim] | i32 labels[count]
inline void write_episode_cache(const std::string& path, const std::vector<Episode>& eps) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  const std::uint64_t h = eps.empty() ? 0 : eps.front().horizon();
  const std::uint64_t dim = eps.empty() ? 0 : eps.front().states.cols();
  os.write("EGRLEPC1", 8);
  detail::put(os, h);
  detail::put(os, dim);
  detail::put<std::uint64_t>(os, eps.size());
  for (const auto& e : eps) {
    if (e.horizon() != h || e.states.cols() != dim)
      throw DimensionError("write_episode_cache: episodes disagree on horizon or feature size");
    os.write(reinterpret_cast<const char*>(e.states.raw()), static_cast<std::streamsize>(h * dim * sizeof(double)));
  }
  for (const auto& e : eps) detail::put<std::int32_t>(os, e.label);
  if (!os) throw Error("episode cache: write failed");
}

inline std::vector<Episode> read_episode_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open episode cache '" + path + "'");
  detail::Reader in(is);
  char magic[8];
  in.bytes(magic, 8, "magic");
  if (std::memcmp(magic, "EGRLEPC1", 8) != 0) throw ParseError("episode cache: bad magic");
  const auto h = in.get<std::uint64_t>("horizon");
  const auto dim = in.get<std::uint64_t>("feature size");
  const auto count = in.get<std::uint64_t>("episode count");
  if (h * dim > (std::uint64_t{1} << 32)) throw ParseError("episode cache: implausible header");
  std::vector<Episode> eps(count);
  for (auto& e : eps) {
    e.states = Tensor::matrix(h, dim);
    in.bytes(reinterpret_cast<char*>(e.states.raw()), h * dim * sizeof(double), "episode states");
  }
  for (auto& e : eps) e.label = in.get<std::int32_t>("labels");
  return eps;
}

}  // namespace eegrl
