#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegrl/gcn_trainer.hpp"

namespace eegrl {

/// Number of live entries removed by one prune at `rate`.
inline std::size_t prune_count(std::size_t live, double rate) {
  const auto k = static_cast<std::size_t>(std::floor(rate * static_cast<double>(live)));
  return std::min(live, std::max<std::size_t>(1, k));
}

/// Freezes the floor(rate * live) live entries of smallest magnitude (ties go to the lower
/// row-major index) and resets every survivor to exactly 1.
inline AdjacencyMask prune_mask(const AdjacencyMask& mask, double rate) {
  if (!(rate > 0.0 && rate < 1.0)) throw ContractError("prune_mask: rate must lie in (0, 1)");
  std::vector<std::size_t> live;
  for (std::size_t k = 0; k < mask.frozen_flags().size(); ++k)
    if (!mask.frozen_flat(k)) live.push_back(k);
  if (live.empty()) throw ContractError("prune_mask: every mask entry is already frozen");

  const auto& v = mask.values();
  std::stable_sort(live.begin(), live.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(v[a]) < std::abs(v[b]); });
  AdjacencyMask out = mask;
  const std::size_t cut = prune_count(live.size(), rate);
  for (std::size_t i = 0; i < cut; ++i) out.freeze_flat(live[i]);
  for (std::size_t i = cut; i < live.size(); ++i) out.values()[live[i]] = 1.0;
  out.values().drop_grad();
  return out;
}

struct GltConfig {
  double prune_rate = 0.10;
  double target_density = 0.1339;
  GcnHyper hyper;
};

inline void to_json(nlohmann::json& j, const GltConfig& c) {
  j = nlohmann::json{{"prune_rate", c.prune_rate}, {"target_density", c.target_density}, {"hyper", c.hyper}};
}

inline void from_json(const nlohmann::json& j, GltConfig& c) {
  GltConfig d;
  c.prune_rate = j.value("prune_rate", d.prune_rate);
  c.target_density = j.value("target_density", d.target_density);
  c.hyper = j.value("hyper", d.hyper);
}

struct PruningLevel {
  std::size_t round = 0;
  std::size_t live_edges = 0;
  double density = 1.0;
  bool trained = false;
  double val_accuracy = -1.0;
  std::size_t best_epoch = 0;
  std::string checkpoint;
  bool extractor = false;
  AdjacencyMask mask;  // best mask of a trained level, or the final untrained prune
};

struct PruningSchedule {
  std::vector<PruningLevel> levels;
  double final_density = 1.0;
  bool aborted = false;
  std::string abort_reason;
  std::optional<GcnModel> extractor;

  std::vector<double> densities() const {
    std::vector<double> d;
    for (const auto& l : levels) d.push_back(l.density);
    return d;
  }

  const PruningLevel* extractor_level() const {
    for (const auto& l : levels)
      if (l.extractor) return &l;
    return nullptr;
  }
};

/// Called after each trained level with the level record and its best model; may fill in
/// `level.checkpoint`.
using LevelCallback = std::function<void(PruningLevel& level, GcnModel& best)>;

/// Alternates training and magnitude pruning of the adjacency mask. Every level trains from
/// the previous level's best weights with a fresh optimizer. The loop stops once the current
/// density is at or below the target, or the next prune would fall below it; that final
/// prune is recorded but not trained. The extractor is the last trained level, i.e. the
/// lowest density that is still >= target.
inline PruningSchedule run_glt(GcnModel model, const PointDataset& train, const PointDataset& val,
                               const GltConfig& config, const LevelCallback& on_level = {}) {
  if (!(config.prune_rate > 0.0 && config.prune_rate < 1.0))
    throw ContractError("run_glt: prune rate must lie in (0, 1)");
  if (!(config.target_density > 0.0 && config.target_density <= 1.0))
    throw ContractError("run_glt: target density must lie in (0, 1]");

  PruningSchedule schedule;
  std::optional<GcnModel> last_best;
  std::size_t round = 0;
  try {
    while (true) {
      PruningLevel level;
      level.round = round;
      level.live_edges = model.mask().live_count();
      level.density = model.mask().density();
      GcnHyper hyper = config.hyper;
      hyper.seed = config.hyper.seed + round;
      const auto result = train_gcn(model, train, val, hyper);
      level.trained = true;
      level.val_accuracy = result.best_val_accuracy;
      level.best_epoch = result.best_epoch;
      level.density = model.mask().density();
      level.mask = model.mask();
      if (on_level) on_level(level, model);
      schedule.levels.push_back(level);
      last_best = model;

      if (model.mask().density() <= config.target_density) break;
      AdjacencyMask next = prune_mask(model.mask(), config.prune_rate);
      ++round;
      if (next.density() < config.target_density) {
        PruningLevel tail;
        tail.round = round;
        tail.live_edges = next.live_count();
        tail.density = next.density();
        tail.mask = std::move(next);
        schedule.levels.push_back(std::move(tail));
        break;
      }
      model.mask() = std::move(next);
    }
  } catch (const TrainingError& e) {
    schedule.aborted = true;
    schedule.abort_reason = e.what();
    warn(std::string("run_glt: aborted at round ") + std::to_string(round) + ": " + e.what());
  }

  schedule.final_density = schedule.levels.empty() ? 1.0 : schedule.levels.back().density;
  for (auto it = schedule.levels.rbegin(); it != schedule.levels.rend(); ++it)
    if (it->trained) {
      it->extractor = true;
      break;
    }
  if (last_best) {
    last_best->freeze();
    schedule.extractor = std::move(last_best);
  }
  return schedule;
}

inline nlohmann::json schedule_manifest(const PruningSchedule& s) {
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& l : s.levels) {
    nlohmann::json j{{"round", l.round},
                     {"live_edges", l.live_edges},
                     {"density", l.density},
                     {"trained", l.trained},
                     {"extractor", l.extractor}};
    if (l.trained) {
      j["val_accuracy"] = l.val_accuracy;
      j["best_epoch"] = l.best_epoch;
    }
    if (!l.checkpoint.empty()) j["checkpoint"] = l.checkpoint;
    levels.push_back(std::move(j));
  }
  nlohmann::json m{{"levels", levels}, {"final_density", s.final_density}, {"aborted", s.aborted}};
  if (s.aborted) m["abort_reason"] = s.abort_reason;
  return m;
}

}  // namespace eegrl
