#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegrl/recording.hpp"

namespace eegrl {

/// Parameters of the synthetic clear/ambiguous generator.
///
/// Every time point is `offset_c + b_t * m_t + noise`. `offset_c` raises the c-th block of
/// channels for the whole trial, b_t is a random sign, and m_t is the class signature s_c on
/// clear points or (s_c + s_d) / 2 on ambiguous ones, where d is another class drawn per
/// segment. Signatures are +-1 vectors whose number of positive entries differs per class.
struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t channels = 64;
  std::size_t trials = 200;
  std::size_t trial_samples = 640;
  double rate = 160.0;
  double clear_fraction = 0.5;
  double noise_sigma = 0.3;
  double class_offset = 3.0;
  double mean_segment = 8.0;
  std::uint64_t seed = 7;

  void validate() const {
    if (classes < 2) throw ContractError("SyntheticSpec: need at least 2 classes");
    if (channels < 2 * classes) throw ContractError("SyntheticSpec: too few channels for the class count");
    if (trials == 0 || trial_samples == 0) throw ContractError("SyntheticSpec: trials and trial_samples must be positive");
    if (!(clear_fraction >= 0.0 && clear_fraction <= 1.0))
      throw ContractError("SyntheticSpec: clear_fraction must lie in [0, 1]");
    if (!(noise_sigma >= 0.0)) throw ContractError("SyntheticSpec: noise_sigma must be non-negative");
    if (!(mean_segment >= 1.0)) throw ContractError("SyntheticSpec: mean_segment must be at least 1");
    if (!(rate > 0.0)) throw ContractError("SyntheticSpec: rate must be positive");
  }
};

inline void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = nlohmann::json{{"classes", s.classes},
                     {"channels", s.channels},
                     {"trials", s.trials},
                     {"trial_samples", s.trial_samples},
                     {"rate", s.rate},
                     {"clear_fraction", s.clear_fraction},
                     {"noise_sigma", s.noise_sigma},
                     {"class_offset", s.class_offset},
                     {"mean_segment", s.mean_segment},
                     {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  SyntheticSpec d;
  s.classes = j.value("classes", d.classes);
  s.channels = j.value("channels", d.channels);
  s.trials = j.value("trials", d.trials);
  s.trial_samples = j.value("trial_samples", d.trial_samples);
  s.rate = j.value("rate", d.rate);
  s.clear_fraction = j.value("clear_fraction", d.clear_fraction);
  s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  s.class_offset = j.value("class_offset", d.class_offset);
  s.mean_segment = j.value("mean_segment", d.mean_segment);
  s.seed = j.value("seed", d.seed);
}

/// Signature of class c (0-based): +-1 with round(channels * (c + 1) / (2 * classes)) positive
/// entries on a random channel subset.
inline std::vector<std::vector<double>> synthetic_signatures(const SyntheticSpec& spec, Rng& rng) {
  std::vector<std::vector<double>> sig(spec.classes, std::vector<double>(spec.channels, -1.0));
  std::vector<std::size_t> perm(spec.channels);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t j = 0; j < perm.size(); ++j) perm[j] = j;
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto k = static_cast<std::size_t>(
        std::llround(static_cast<double>(spec.channels * (c + 1)) / static_cast<double>(2 * spec.classes)));
    for (std::size_t j = 0; j < k; ++j) sig[c][perm[j]] = 1.0;
  }
  for (std::size_t a = 0; a < spec.classes; ++a)
    for (std::size_t b = a + 1; b < spec.classes; ++b) {
      double dot = 0.0;
      for (std::size_t j = 0; j < spec.channels; ++j) dot += sig[a][j] * sig[b][j];
      if (std::abs(dot) >= static_cast<double>(spec.channels))
        throw ContractError("synthetic: signatures " + std::to_string(a) + " and " + std::to_string(b) + " are collinear");
    }
  return sig;
}

/// One continuous recording with trials placed back to back and per-sample clear flags.
/// Labels are balanced: trial i gets class (i mod classes) + 1 before shuffling.
inline Recording generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const auto sig = synthetic_signatures(spec, rng);

  std::vector<int> labels(spec.trials);
  for (std::size_t i = 0; i < spec.trials; ++i) labels[i] = static_cast<int>(i % spec.classes) + 1;
  std::shuffle(labels.begin(), labels.end(), rng);

  Recording rec;
  rec.subject = "synthetic";
  rec.rate = spec.rate;
  rec.samples = Tensor::matrix(spec.trials * spec.trial_samples, spec.channels);
  rec.clear.assign(spec.trials * spec.trial_samples, 0);

  const std::size_t block = spec.channels / spec.classes;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution is_clear(spec.clear_fraction);
  std::geometric_distribution<std::size_t> seg_len(1.0 / spec.mean_segment);
  std::uniform_int_distribution<std::size_t> partner(0, spec.classes - 2);
  std::vector<double> pattern(spec.channels);

  for (std::size_t i = 0; i < spec.trials; ++i) {
    const auto c = static_cast<std::size_t>(labels[i] - 1);
    const std::size_t base = i * spec.trial_samples;
    rec.trials.push_back({base, labels[i]});
    std::size_t t = 0;
    while (t < spec.trial_samples) {
      const std::size_t len = std::min(spec.trial_samples - t, seg_len(rng) + 1);
      const bool clear = is_clear(rng);
      if (clear) {
        pattern = sig[c];
      } else {
        std::size_t d = partner(rng);
        if (d >= c) ++d;
        for (std::size_t j = 0; j < spec.channels; ++j) pattern[j] = 0.5 * (sig[c][j] + sig[d][j]);
      }
      for (std::size_t k = 0; k < len; ++k, ++t) {
        const double carrier = coin(rng) ? 1.0 : -1.0;
        auto row = rec.samples.row(base + t);
        for (std::size_t j = 0; j < spec.channels; ++j) {
          const double offset = (j / block == c) ? spec.class_offset : 0.0;
          row[j] = offset + carrier * pattern[j] + spec.noise_sigma * noise(rng);
        }
        rec.clear[base + t] = clear ? 1 : 0;
      }
    }
  }
  return rec;
}

}  // namespace eegrl
