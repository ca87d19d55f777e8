#pragma once

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegrl/checkpoint.hpp"
#include "eegrl/dqn.hpp"
#include "eegrl/glt.hpp"
#include "eegrl/recording.hpp"
#include "eegrl/rl_env.hpp"
#include "eegrl/synthetic.hpp"

namespace eegrl {

namespace fs = std::filesystem;

inline void to_json(nlohmann::json& j, const PreprocessConfig& p) {
  j = nlohmann::json{
      {"notch", p.notch}, {"notch_freq", p.notch_freq}, {"notch_q", p.notch_q}, {"trial_seconds", p.trial_seconds}};
}

inline void from_json(const nlohmann::json& j, PreprocessConfig& p) {
  PreprocessConfig d;
  p.notch = j.value("notch", d.notch);
  p.notch_freq = j.value("notch_freq", d.notch_freq);
  p.notch_q = j.value("notch_q", d.notch_q);
  p.trial_seconds = j.value("trial_seconds", d.trial_seconds);
}

// ---------------------------------------------------------------------------------------
// Configuration

struct DataSource {
  std::string path;              // recording file or directory of recordings
  std::string format = "auto";   // auto | edf | matrix
  std::vector<std::string> subjects;
  bool synthetic = false;
  SyntheticSpec synthetic_spec;
  PreprocessConfig preprocess;
  std::size_t channels = 64;
  double rate = 160.0;
};

struct Phase1Config {
  GcnConfig model;
  GltConfig glt;
  double window_start = 1.0;  // seconds into the trial
  double window_end = 3.0;
  std::size_t point_stride = 1;
  double val_fraction = 0.2;
};

struct Phase2Config {
  DuelingConfig agent;  // input width follows the extractor
  TrainerConfig trainer;
  RewardConfig reward;
  std::vector<double> r_right_grid{5.0, 10.0, 20.0};
  std::vector<double> r_wrong_grid{-10.0, -20.0, -30.0, -40.0};
  std::vector<std::size_t> horizon_grid{10, 20, 30, 40};
  bool full_grid = false;
  std::size_t repeats = 1;
  std::uint64_t split_seed = 0;
};

struct ExperimentConfig {
  DataSource data;
  Phase1Config phase1;
  Phase2Config phase2;
  std::uint64_t seed = 0;
  std::string output_dir;
};

inline void to_json(nlohmann::json& j, const DataSource& d) {
  j = nlohmann::json{{"path", d.path},
                     {"format", d.format},
                     {"subjects", d.subjects},
                     {"synthetic", d.synthetic},
                     {"synthetic_spec", d.synthetic_spec},
                     {"preprocess", d.preprocess},
                     {"channels", d.channels},
                     {"rate", d.rate}};
}

inline void from_json(const nlohmann::json& j, DataSource& d) {
  DataSource x;
  d.path = j.value("path", x.path);
  d.format = j.value("format", x.format);
  d.subjects = j.value("subjects", x.subjects);
  d.synthetic = j.value("synthetic", x.synthetic);
  d.synthetic_spec = j.value("synthetic_spec", x.synthetic_spec);
  d.preprocess = j.value("preprocess", x.preprocess);
  d.channels = j.value("channels", x.channels);
  d.rate = j.value("rate", x.rate);
}

inline void to_json(nlohmann::json& j, const Phase1Config& p) {
  j = nlohmann::json{{"model", p.model},
                     {"glt", p.glt},
                     {"window_start", p.window_start},
                     {"window_end", p.window_end},
                     {"point_stride", p.point_stride},
                     {"val_fraction", p.val_fraction}};
}

inline void from_json(const nlohmann::json& j, Phase1Config& p) {
  Phase1Config d;
  p.model = j.value("model", d.model);
  p.glt = j.value("glt", d.glt);
  p.window_start = j.value("window_start", d.window_start);
  p.window_end = j.value("window_end", d.window_end);
  p.point_stride = j.value("point_stride", d.point_stride);
  p.val_fraction = j.value("val_fraction", d.val_fraction);
}

inline void to_json(nlohmann::json& j, const Phase2Config& p) {
  j = nlohmann::json{{"agent", p.agent},
                     {"trainer", p.trainer},
                     {"reward", p.reward},
                     {"r_right_grid", p.r_right_grid},
                     {"r_wrong_grid", p.r_wrong_grid},
                     {"horizon_grid", p.horizon_grid},
                     {"full_grid", p.full_grid},
                     {"repeats", p.repeats},
                     {"split_seed", p.split_seed}};
}

inline void from_json(const nlohmann::json& j, Phase2Config& p) {
  Phase2Config d;
  p.agent = j.value("agent", d.agent);
  p.trainer = j.value("trainer", d.trainer);
  p.reward = j.value("reward", d.reward);
  p.r_right_grid = j.value("r_right_grid", d.r_right_grid);
  p.r_wrong_grid = j.value("r_wrong_grid", d.r_wrong_grid);
  p.horizon_grid = j.value("horizon_grid", d.horizon_grid);
  p.full_grid = j.value("full_grid", d.full_grid);
  p.repeats = j.value("repeats", d.repeats);
  p.split_seed = j.value("split_seed", d.split_seed);
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"data", c.data},
                     {"phase1", c.phase1},
                     {"phase2", c.phase2},
                     {"seed", c.seed},
                     {"output_dir", c.output_dir}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  ExperimentConfig d;
  c.data = j.value("data", d.data);
  c.phase1 = j.value("phase1", d.phase1);
  c.phase2 = j.value("phase2", d.phase2);
  c.seed = j.value("seed", d.seed);
  c.output_dir = j.value("output_dir", d.output_dir);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config '" + path + "'");
  try {
    return nlohmann::json::parse(is).get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

/// Output root: $EEGRL_OUT when set, else ./runs.
inline std::string default_output_root() {
  const char* env = std::getenv("EEGRL_OUT");
  return env && *env ? std::string(env) : std::string("runs");
}

// ---------------------------------------------------------------------------------------
// Content hashing

/// SHA-1 over "blob <size>\0" + content, the object id git assigns to a file.
inline std::string git_blob_sha1(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("sha1: cannot allocate digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("sha1: digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

/// Binary image of a recording (samples, trial marks, clear flags) for hashing.
inline std::string recording_bytes(const Recording& rec) {
  std::string out;
  const auto data = rec.samples.data();
  out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
  for (const auto& t : rec.trials) {
    const std::uint64_t s = t.start;
    const std::int32_t l = t.label;
    out.append(reinterpret_cast<const char*>(&s), sizeof s);
    out.append(reinterpret_cast<const char*>(&l), sizeof l);
  }
  out.append(reinterpret_cast<const char*>(rec.clear.data()), rec.clear.size());
  return out;
}

// ---------------------------------------------------------------------------------------
// Dataset

struct Dataset {
  std::vector<Trial> trials;
  double rate = 160.0;
  std::string content_hash;
  std::vector<std::string> files;

  std::vector<std::string> subjects() const {
    std::vector<std::string> out;
    for (const auto& t : trials)
      if (std::find(out.begin(), out.end(), t.subject) == out.end()) out.push_back(t.subject);
    return out;
  }
};

inline RecordingFormat parse_format(const std::string& name) {
  if (name == "auto") return RecordingFormat::Auto;
  if (name == "edf") return RecordingFormat::Edf;
  if (name == "matrix") return RecordingFormat::Matrix;
  throw ContractError("unknown recording format '" + name + "' (valid: auto, edf, matrix)");
}

/// Recording files under `path`, sorted; a plain file is returned as is.
inline std::vector<std::string> dataset_files(const std::string& path) {
  if (path.empty()) throw ContractError("dataset path is empty");
  if (!fs::exists(path)) throw Error("dataset path '" + path + "' does not exist");
  if (!fs::is_directory(path)) return {path};
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".edf" || ext == ".txt") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error("no .edf or .txt recordings under '" + path + "'");
  return files;
}

inline Dataset load_dataset(const DataSource& src) {
  Dataset d;
  if (src.synthetic) {
    const Recording rec = generate_synthetic(src.synthetic_spec);
    d.rate = rec.rate;
    d.content_hash = git_blob_sha1(recording_bytes(rec));
    d.trials = preprocess(rec, src.preprocess);
  } else {
    std::string listing;
    const IngestOptions opt{src.channels, src.rate};
    const auto format = parse_format(src.format);
    for (const auto& file : dataset_files(src.path)) {
      Recording rec = ingest(file, format, opt);
      if (rec.subject.empty()) rec.subject = subject_from_filename(file);
      if (rec.subject.empty()) rec.subject = fs::path(file).stem().string();
      if (!src.subjects.empty() &&
          std::find(src.subjects.begin(), src.subjects.end(), rec.subject) == src.subjects.end())
        continue;
      auto trials = preprocess(rec, src.preprocess);
      std::move(trials.begin(), trials.end(), std::back_inserter(d.trials));
      const auto rel = fs::is_directory(src.path) ? fs::relative(file, src.path).generic_string()
                                                  : fs::path(file).filename().string();
      listing += git_blob_sha1(read_file_bytes(file)) + ' ' + rel + '\n';
      d.files.push_back(file);
      d.rate = rec.rate;
    }
    d.content_hash = git_blob_sha1(listing);
  }
  if (d.trials.empty()) throw Error("dataset contains no labelled trials");
  return d;
}

// ---------------------------------------------------------------------------------------
// Phase 1: GCN training with graph pruning on single time points

/// Time points in [start, end) seconds of every trial, every `stride`-th sample.
inline PointDataset window_points(const std::vector<Trial>& trials, double rate, double start, double end,
                                  std::size_t stride) {
  if (!(start >= 0.0 && end > start)) throw ContractError("window_points: need 0 <= start < end");
  if (stride == 0) throw ContractError("window_points: stride must be positive");
  const auto a = static_cast<std::size_t>(std::llround(start * rate));
  const auto b = static_cast<std::size_t>(std::llround(end * rate));
  PointDataset d;
  std::vector<double> data;
  std::size_t cols = 0;
  for (const auto& tr : trials) {
    if (b > tr.samples.rows())
      throw ContractError("window_points: window ends at sample " + std::to_string(b) + " but trial has " +
                          std::to_string(tr.samples.rows()));
    cols = tr.samples.cols();
    for (std::size_t t = a; t < b; t += stride) {
      const auto row = tr.samples.row(t);
      data.insert(data.end(), row.begin(), row.end());
      d.labels.push_back(tr.label);
      if (!tr.clear.empty()) d.clear.push_back(tr.clear[t]);
    }
  }
  if (d.labels.empty()) throw ContractError("window_points: no points selected");
  if (!d.clear.empty() && d.clear.size() != d.labels.size()) d.clear.clear();
  d.points = Tensor({d.labels.size(), cols}, std::move(data));
  return d;
}

struct PointSplit {
  PointDataset train, val;
};

/// Seeded shuffle of individual points, then floor(fraction * n) points for validation.
inline PointSplit split_points(const PointDataset& d, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ContractError("split_points: fraction must lie in (0, 1)");
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto nval = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(idx.size())));
  if (nval == 0 || nval == idx.size()) throw ContractError("split_points: too few points to split");
  const std::span<const std::size_t> all(idx);
  return {d.subset(all.subspan(nval)), d.subset(all.first(nval))};
}

using Progress = std::function<void(const std::string&)>;

struct Phase1Result {
  PruningSchedule schedule;
  nlohmann::json manifest;
  double val_accuracy = 0.0;
  std::optional<double> val_clear_accuracy;
  std::string extractor_path;
};

/// Trains the classifier through the pruning schedule. With a non-empty `out_dir` every trained
/// level and the extractor are written as checkpoints next to manifest.json.
inline Phase1Result run_phase1(const ExperimentConfig& cfg, const Dataset& data, const std::string& out_dir = {},
                               const Progress& progress = {}) {
  const auto& p1 = cfg.phase1;
  const PointDataset points = window_points(data.trials, data.rate, p1.window_start, p1.window_end, p1.point_stride);
  const auto split = split_points(points, p1.val_fraction, cfg.seed);
  GcnConfig model_cfg = p1.model;
  model_cfg.nodes = points.points.cols();
  Rng rng(cfg.seed + 1);
  GcnModel model(model_cfg, rng);
  if (!out_dir.empty()) fs::create_directories(fs::path(out_dir) / "levels");

  auto on_level = [&](PruningLevel& level, GcnModel& best) {
    if (!out_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "levels/level_%02zu.ckpt", level.round);
      save_checkpoint((fs::path(out_dir) / name).string(), gcn_checkpoint(best));
      level.checkpoint = name;
    }
    if (progress) {
      char line[128];
      std::snprintf(line, sizeof line, "level %zu: density %.4f, %zu edges, val acc %.4f", level.round, level.density,
                    level.live_edges, level.val_accuracy);
      progress(line);
    }
  };

  Phase1Result r;
  r.schedule = run_glt(std::move(model), split.train, split.val, p1.glt, on_level);
  if (!r.schedule.extractor) throw TrainingError("phase 1 produced no trained level: " + r.schedule.abort_reason);
  GcnModel& ex = *r.schedule.extractor;
  r.val_accuracy = accuracy(ex, split.val);
  if (!split.val.clear.empty()) {
    const auto clear = split.val.clear_only();
    if (!clear.empty()) r.val_clear_accuracy = accuracy(ex, clear);
  }
  r.manifest = schedule_manifest(r.schedule);
  r.manifest["extractor_val_accuracy"] = r.val_accuracy;
  if (r.val_clear_accuracy) r.manifest["extractor_val_accuracy_clear"] = *r.val_clear_accuracy;
  r.manifest["train_points"] = split.train.size();
  r.manifest["val_points"] = split.val.size();
  if (!out_dir.empty()) {
    r.extractor_path = (fs::path(out_dir) / "extractor.ckpt").string();
    save_checkpoint(r.extractor_path, gcn_checkpoint(ex));
    r.manifest["extractor_checkpoint"] = "extractor.ckpt";
    std::ofstream(fs::path(out_dir) / "manifest.json") << r.manifest.dump(2) << '\n';
  }
  return r;
}

/// Checkpoint file for a frozen extractor: a checkpoint path, or a phase-1 run directory whose
/// manifest names the extractor (or the trained level at `density` when given).
inline std::string resolve_extractor(const std::string& path, std::optional<double> density = std::nullopt) {
  if (!fs::exists(path)) throw Error("extractor '" + path + "' does not exist");
  if (!fs::is_directory(path)) {
    if (density) throw ContractError("a density tag needs a phase-1 run directory, not a checkpoint file");
    return path;
  }
  std::ifstream is(fs::path(path) / "manifest.json");
  if (!is) throw Error("'" + path + "' has no manifest.json");
  const auto m = nlohmann::json::parse(is);
  if (!density) return (fs::path(path) / m.at("extractor_checkpoint").get<std::string>()).string();
  std::string tags;
  for (const auto& l : m.at("levels")) {
    if (!l.value("trained", false) || !l.contains("checkpoint")) continue;
    const double d = l.at("density").get<double>();
    char tag[32];
    std::snprintf(tag, sizeof tag, "%.4f", d);
    tags += (tags.empty() ? "" : ", ") + std::string(tag);
    if (std::abs(d - *density) <= 5e-5) return (fs::path(path) / l.at("checkpoint").get<std::string>()).string();
  }
  throw ContractError("no trained level with density " + std::to_string(*density) + " (available: " + tags + ")");
}

inline GcnModel load_extractor(const std::string& path) {
  GcnModel m = gcn_from_checkpoint(load_checkpoint(path));
  if (!m.frozen()) m.freeze();
  return m;
}

// ---------------------------------------------------------------------------------------
// Phase 2: features, episodes, agent

struct SubjectFeatures {
  std::string subject;
  std::vector<FeatureTrial> trials;
};

/// Extractor features for every time point of every trial, grouped by subject in order of
/// first appearance.
inline std::vector<SubjectFeatures> extract_subject_features(const GcnModel& extractor,
                                                             const std::vector<Trial>& trials) {
  std::vector<SubjectFeatures> out;
  for (const auto& tr : trials) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& s) { return s.subject == tr.subject; });
    if (it == out.end()) it = out.insert(out.end(), SubjectFeatures{tr.subject, {}});
    it->trials.push_back({tr.label, extract_features(extractor, tr.samples), tr.clear});
  }
  return out;
}

inline void check_horizon(const std::vector<FeatureTrial>& trials, std::size_t horizon) {
  for (const auto& t : trials)
    if (horizon > t.features.rows())
      throw ContractError("episode horizon " + std::to_string(horizon) + " exceeds the trial length of " +
                          std::to_string(t.features.rows()) + " time points");
}

struct RlResult {
  RewardConfig reward;
  std::uint64_t split_seed = 0;
  Metrics val, test, baseline;  // baseline: test episodes classified at the first state
  std::vector<EpisodeOutcome> test_outcomes;
  std::vector<double> test_ambiguity;  // share of ambiguous states per test episode, when known
  std::vector<double> losses;
  std::optional<DuelingNet> agent;
};

template <class QNet>
std::vector<EpisodeOutcome> evaluate_all(const QNet& net, const std::vector<Episode>& eps,
                                         const std::vector<std::size_t>& idx, const RewardConfig& reward,
                                         bool force_first = false) {
  std::vector<EpisodeOutcome> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(evaluate(net, eps[i], reward, force_first));
  return out;
}

/// One agent: episodes, 80/10/10 split, replay buffer, training, evaluation.
inline RlResult run_rl(const std::vector<FeatureTrial>& trials, const Phase2Config& p2, const RewardConfig& reward,
                       std::uint64_t split_seed) {
  reward.validate();
  check_horizon(trials, reward.horizon);
  const auto eps = build_episodes(trials, reward.horizon);
  const auto split = split_episodes(eps.size(), split_seed);
  std::vector<Episode> train;
  train.reserve(split.train.size());
  for (std::size_t i : split.train) train.push_back(eps[i]);

  DuelingConfig agent_cfg = p2.agent;
  agent_cfg.input = eps.front().states.cols();
  Rng rng(p2.trainer.seed);
  DuelingNet net(agent_cfg, rng);
  const auto buf = build_buffer(train, reward, p2.trainer.batch_size, p2.trainer.seed);

  RlResult r;
  r.reward = reward;
  r.split_seed = split_seed;
  r.agent = train_dqn(buf, std::move(net), p2.trainer, &r.losses);
  r.val = metrics(evaluate_all(*r.agent, eps, split.val, reward));
  r.test_outcomes = evaluate_all(*r.agent, eps, split.test, reward);
  r.test = metrics(r.test_outcomes);
  r.baseline = metrics(evaluate_all(*r.agent, eps, split.test, reward, true));
  for (std::size_t i : split.test) {
    const auto& c = eps[i].clear;
    if (c.empty()) continue;
    r.test_ambiguity.push_back(1.0 - static_cast<double>(std::accumulate(c.begin(), c.end(), std::size_t{0})) /
                                         static_cast<double>(c.size()));
  }
  return r;
}

/// Metrics averaged over `repeats` episode splits (split_seed, split_seed + 1, ...). The agent of
/// the first split is kept.
struct RlSummary {
  RewardConfig reward;
  double accuracy = 0.0, f1 = 0.0, time = 0.0;
  double val_accuracy = 0.0, val_f1 = 0.0, val_time = 0.0;
  RlResult first;
};

inline RlSummary run_rl_repeated(const std::vector<FeatureTrial>& trials, const Phase2Config& p2,
                                 const RewardConfig& reward) {
  if (p2.repeats == 0) throw ContractError("repeats must be positive");
  RlSummary s;
  s.reward = reward;
  for (std::size_t k = 0; k < p2.repeats; ++k) {
    RlResult r = run_rl(trials, p2, reward, p2.split_seed + k);
    s.accuracy += r.test.accuracy;
    s.f1 += r.test.f1;
    s.time += r.test.mean_time;
    s.val_accuracy += r.val.accuracy;
    s.val_f1 += r.val.f1;
    s.val_time += r.val.mean_time;
    if (k == 0) s.first = std::move(r);
  }
  const auto n = static_cast<double>(p2.repeats);
  for (double* v : {&s.accuracy, &s.f1, &s.time, &s.val_accuracy, &s.val_f1, &s.val_time}) *v /= n;
  return s;
}

/// Validation ranking used to pick a per-subject optimum: accuracy, then F1, then shorter time.
inline bool better_on_validation(const RlSummary& a, const RlSummary& b) {
  if (a.val_accuracy != b.val_accuracy) return a.val_accuracy > b.val_accuracy;
  if (a.val_f1 != b.val_f1) return a.val_f1 > b.val_f1;
  return a.val_time < b.val_time;
}

struct SweepAxis {
  std::string name;
  std::vector<RewardConfig> configs;
  std::vector<std::string> labels;
};

inline std::string format_number(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string format_short(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

/// The three one-dimensional sweeps around the base reward: r_right (r_wrong fixed),
/// r_wrong (r_right fixed) and the horizon.
inline std::vector<SweepAxis> sweep_axes(const Phase2Config& p2) {
  std::vector<SweepAxis> axes(3);
  axes[0].name = "r_right";
  for (double v : p2.r_right_grid) {
    RewardConfig r = p2.reward;
    r.r_right = v;
    axes[0].configs.push_back(r);
    axes[0].labels.push_back("r_right=" + format_short(v));
  }
  axes[1].name = "r_wrong";
  for (double v : p2.r_wrong_grid) {
    RewardConfig r = p2.reward;
    r.r_wrong = v;
    axes[1].configs.push_back(r);
    axes[1].labels.push_back("r_wrong=" + format_short(v));
  }
  axes[2].name = "horizon";
  for (std::size_t h : p2.horizon_grid) {
    RewardConfig r = p2.reward;
    r.horizon = h;
    axes[2].configs.push_back(r);
    axes[2].labels.push_back("H=" + std::to_string(h));
  }
  return axes;
}

/// Candidate settings for the per-subject optimum: the union of the sweeps, or the full
/// r_right x r_wrong x horizon product.
inline std::vector<RewardConfig> optimum_candidates(const Phase2Config& p2) {
  std::vector<RewardConfig> out;
  auto add = [&](const RewardConfig& r) {
    for (const auto& o : out)
      if (o.r_right == r.r_right && o.r_wrong == r.r_wrong && o.r_skip == r.r_skip && o.horizon == r.horizon) return;
    out.push_back(r);
  };
  if (p2.full_grid) {
    for (double rr : p2.r_right_grid)
      for (double rw : p2.r_wrong_grid)
        for (std::size_t h : p2.horizon_grid) add({rr, rw, p2.reward.r_skip, h});
  } else {
    for (const auto& axis : sweep_axes(p2))
      for (const auto& r : axis.configs) add(r);
  }
  return out;
}

// ---------------------------------------------------------------------------------------
// Tables

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  bool operator==(const Table&) const = default;
};

inline const std::vector<std::string>& subject_table_header() {
  static const std::vector<std::string> h{"Subj",
                                          "Mean Accuracy",
                                          "Mean F1",
                                          "Mean Classification Time",
                                          "(r_right, r_wrong)",
                                          "Episode Horizon"};
  return h;
}

inline std::vector<std::string> subject_row(const std::string& subject, const RlSummary& s) {
  return {subject,
          format_number(100.0 * s.accuracy),
          format_number(100.0 * s.f1),
          format_number(s.time),
          "(" + format_short(s.reward.r_right) + ", " + format_short(s.reward.r_wrong) + ")",
          std::to_string(s.reward.horizon)};
}

inline bool is_summary_row(const std::vector<std::string>& row) {
  return !row.empty() && (row[0] == "Mean" || row[0] == "Std");
}

inline std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  if (s.empty() || !detail::parse_number(std::string_view(s), v)) return std::nullopt;
  return v;
}

/// Appends Mean and Std (population) rows over every column whose data cells are all numeric.
inline Table with_summary(Table t) {
  std::vector<std::vector<std::string>> data;
  for (auto& r : t.rows)
    if (!is_summary_row(r)) data.push_back(std::move(r));
  t.rows = std::move(data);
  if (t.rows.empty()) return t;
  std::vector<std::string> mean(t.header.size(), "-"), stdev(t.header.size(), "-");
  mean[0] = "Mean";
  stdev[0] = "Std";
  for (std::size_t c = 1; c < t.header.size(); ++c) {
    std::vector<double> v;
    for (const auto& r : t.rows)
      if (auto x = parse_double(r[c])) v.push_back(*x);
    if (v.size() != t.rows.size()) continue;
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    mean[c] = format_number(m);
    stdev[c] = format_number(std::sqrt(var / static_cast<double>(v.size())));
  }
  t.rows.push_back(std::move(mean));
  t.rows.push_back(std::move(stdev));
  return t;
}

inline std::string table_tsv(const Table& t) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "\t" : "") + cells[i];
    out += '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
  return out;
}

inline void write_tsv(const std::string& path, const Table& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write '" + path + "'");
  os << table_tsv(t);
}

inline Table read_tsv(const std::string& path) {
  std::istringstream is(read_file_bytes(path));
  Table t;
  std::string line;
  std::size_t lineno = 0;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::size_t s = 0;
    while (true) {
      const auto e = l.find('\t', s);
      cells.push_back(l.substr(s, e == std::string::npos ? std::string::npos : e - s));
      if (e == std::string::npos) break;
      s = e + 1;
    }
    return cells;
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      throw ParseError(path + ": line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                       " columns, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw ParseError(path + ": empty table");
  return t;
}

inline nlohmann::json table_json(const Table& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) {
    nlohmann::json o = nlohmann::json::object();
    for (std::size_t c = 0; c < t.header.size(); ++c) {
      if (auto v = parse_double(r[c]); v && c > 0) o[t.header[c]] = *v;
      else o[t.header[c]] = r[c];
    }
    rows.push_back(std::move(o));
  }
  return nlohmann::json{{"columns", t.header}, {"rows", rows}};
}

/// Concatenates the data rows of several tables that share one header; footer rows are
/// dropped and recomputed by with_summary.
inline Table merge_tables(const std::vector<Table>& tables, const std::vector<std::string>& sources = {}) {
  if (tables.empty()) throw ContractError("merge_tables: nothing to merge");
  Table out;
  out.header = tables.front().header;
  for (std::size_t i = 0; i < tables.size(); ++i) {
    if (tables[i].header != out.header) {
      const std::string a = sources.size() > 0 ? sources[0] : "table 0";
      const std::string b = sources.size() > i ? sources[i] : "table " + std::to_string(i);
      std::string ha, hb;
      for (const auto& h : out.header) ha += (ha.empty() ? "" : ", ") + h;
      for (const auto& h : tables[i].header) hb += (hb.empty() ? "" : ", ") + h;
      throw ParseError("inconsistent table schemas: " + a + " has [" + ha + "] but " + b + " has [" + hb + "]");
    }
    for (const auto& r : tables[i].rows)
      if (!is_summary_row(r)) out.rows.push_back(r);
  }
  return out;
}

/// Wide per-axis sweep table: one row per subject, accuracy / F1 / time per grid value.
struct SweepCell {
  double accuracy = 0.0, f1 = 0.0, time = 0.0;
};

inline Table sweep_table(const SweepAxis& axis, const std::vector<std::string>& subjects,
                         const std::vector<std::vector<SweepCell>>& results) {
  Table t;
  t.header.push_back("Subj");
  for (const auto& l : axis.labels) {
    t.header.push_back("Accuracy " + l);
    t.header.push_back("F1 " + l);
    t.header.push_back("Time " + l);
  }
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    std::vector<std::string> row{subjects[s]};
    for (const auto& r : results[s]) {
      row.push_back(format_number(100.0 * r.accuracy));
      row.push_back(format_number(100.0 * r.f1));
      row.push_back(format_number(r.time));
    }
    t.rows.push_back(std::move(row));
  }
  return with_summary(std::move(t));
}

// ---------------------------------------------------------------------------------------
// Run directories

inline nlohmann::json seeds_json(const ExperimentConfig& cfg) {
  return nlohmann::json{{"seed", cfg.seed},
                        {"point_split", cfg.seed},
                        {"model_init", cfg.seed + 1},
                        {"gcn_shuffle", cfg.phase1.glt.hyper.seed},
                        {"synthetic", cfg.data.synthetic ? nlohmann::json(cfg.data.synthetic_spec.seed) : nlohmann::json()},
                        {"episode_split", cfg.phase2.split_seed},
                        {"repeats", cfg.phase2.repeats},
                        {"agent", cfg.phase2.trainer.seed}};
}

/// Writes config.json, seeds.json and data_hash into `dir`.
inline void write_run_record(const std::string& dir, const ExperimentConfig& cfg, const std::string& data_hash) {
  fs::create_directories(dir);
  std::ofstream(fs::path(dir) / "config.json") << nlohmann::json(cfg).dump(2) << '\n';
  std::ofstream(fs::path(dir) / "seeds.json") << seeds_json(cfg).dump(2) << '\n';
  std::ofstream(fs::path(dir) / "data_hash") << data_hash << '\n';
}

inline void write_metrics(const std::string& dir, const std::string& stem, const Table& t) {
  write_tsv((fs::path(dir) / (stem + ".tsv")).string(), t);
  std::ofstream(fs::path(dir) / (stem + ".json")) << table_json(t).dump(2) << '\n';
}

inline std::string safe_name(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  return s.empty() ? std::string("subject") : s;
}

// ---------------------------------------------------------------------------------------
// Commands

inline std::string run_dir(const ExperimentConfig& cfg, const std::string& command) {
  return cfg.output_dir.empty() ? (fs::path(default_output_root()) / command).string() : cfg.output_dir;
}

/// Phase 1: returns the manifest written to <out>/manifest.json.
inline nlohmann::json cmd_train_gcn(const ExperimentConfig& cfg, const Progress& progress = {}) {
  const std::string dir = run_dir(cfg, "train-gcn");
  const Dataset data = load_dataset(cfg.data);
  write_run_record(dir, cfg, data.content_hash);
  const auto r = run_phase1(cfg, data, dir, progress);
  Table t{{"Level", "Density", "Live Edges", "Trained", "Validation Accuracy"}, {}};
  for (const auto& l : r.schedule.levels)
    t.rows.push_back({std::to_string(l.round), format_number(l.density), std::to_string(l.live_edges),
                      l.trained ? "yes" : "no", l.trained ? format_number(100.0 * l.val_accuracy) : "-"});
  write_metrics(dir, "levels", t);
  return r.manifest;
}

struct TrainRlOptions {
  std::string extractor;
  std::optional<double> density;
  bool sweep = false;
};

/// Phase 2: per-subject rows (with Mean/Std footer). With `sweep`, also the per-axis
/// tables, and each row reports the validation-selected optimum.
inline Table cmd_train_rl(const ExperimentConfig& cfg, const TrainRlOptions& opt, const Progress& progress = {}) {
  const std::string dir = run_dir(cfg, "train-rl");
  const std::string ex_path = resolve_extractor(opt.extractor, opt.density);
  const GcnModel extractor = load_extractor(ex_path);
  const Dataset data = load_dataset(cfg.data);
  if (extractor.config().nodes != data.trials.front().samples.cols())
    throw DimensionError("extractor expects " + std::to_string(extractor.config().nodes) + " channels, data has " +
                         std::to_string(data.trials.front().samples.cols()));
  const auto subjects = extract_subject_features(extractor, data.trials);
  const auto axes = sweep_axes(cfg.phase2);
  const auto candidates = opt.sweep ? optimum_candidates(cfg.phase2) : std::vector<RewardConfig>{cfg.phase2.reward};
  for (const auto& s : subjects)
    for (const auto& c : candidates) check_horizon(s.trials, c.horizon);

  write_run_record(dir, cfg, data.content_hash);
  fs::create_directories(fs::path(dir) / "agents");
  Table table{subject_table_header(), {}};
  nlohmann::json agents = nlohmann::json::array();
  std::vector<std::string> names;
  std::vector<std::vector<std::vector<SweepCell>>> axis_results(axes.size());

  for (const auto& s : subjects) {
    names.push_back(s.subject);
    std::map<std::string, RlSummary> cache;
    auto key = [](const RewardConfig& r) { return nlohmann::json(r).dump(); };
    auto run = [&](const RewardConfig& r) -> RlSummary& {
      const auto k = key(r);
      auto it = cache.find(k);
      if (it == cache.end()) {
        if (progress)
          progress(s.subject + ": r_right " + format_short(r.r_right) + ", r_wrong " + format_short(r.r_wrong) +
                   ", H " + std::to_string(r.horizon));
        it = cache.emplace(k, run_rl_repeated(s.trials, cfg.phase2, r)).first;
      }
      return it->second;
    };
    std::optional<std::string> best;
    for (const auto& c : candidates) {
      const auto& r = run(c);
      if (!best || better_on_validation(r, cache.at(*best))) best = key(c);
    }
    if (opt.sweep)
      for (std::size_t a = 0; a < axes.size(); ++a) {
        std::vector<SweepCell> row;
        for (const auto& c : axes[a].configs) {
          const auto& r = run(c);
          row.push_back({r.accuracy, r.f1, r.time});
        }
        axis_results[a].push_back(std::move(row));
      }
    RlSummary& chosen = cache.at(*best);
    table.rows.push_back(subject_row(s.subject, chosen));
    const std::string ckpt = "agents/" + safe_name(s.subject) + ".ckpt";
    save_checkpoint((fs::path(dir) / ckpt).string(),
                    dueling_checkpoint(*chosen.first.agent,
                                       {{"reward", chosen.reward}, {"split_seed", chosen.first.split_seed}}));
    std::ofstream log(fs::path(dir) / ("episodes_" + safe_name(s.subject) + ".tsv"));
    write_episode_log(log, chosen.first.test_outcomes);
    agents.push_back({{"subject", s.subject},
                      {"checkpoint", ckpt},
                      {"reward", chosen.reward},
                      {"split_seed", chosen.first.split_seed}});
  }
  if (opt.sweep)
    for (std::size_t a = 0; a < axes.size(); ++a)
      write_metrics(dir, "sweep_" + axes[a].name, sweep_table(axes[a], names, axis_results[a]));
  table = with_summary(std::move(table));
  write_metrics(dir, "metrics", table);
  std::ofstream(fs::path(dir) / "rl_manifest.json")
      << nlohmann::json{{"extractor", fs::absolute(ex_path).string()}, {"agents", agents}}.dump(2) << '\n';
  return table;
}

/// Re-evaluates the saved agents of a train-rl run on their test splits.
inline Table cmd_evaluate(const std::string& rl_dir, const std::string& out_dir = {}) {
  const ExperimentConfig cfg = load_config((fs::path(rl_dir) / "config.json").string());
  std::ifstream is(fs::path(rl_dir) / "rl_manifest.json");
  if (!is) throw Error("'" + rl_dir + "' has no rl_manifest.json (not a train-rl run)");
  const auto manifest = nlohmann::json::parse(is);
  const GcnModel extractor = load_extractor(manifest.at("extractor").get<std::string>());
  const Dataset data = load_dataset(cfg.data);
  std::string recorded;
  std::ifstream(fs::path(rl_dir) / "data_hash") >> recorded;
  if (recorded != data.content_hash)
    warn("evaluate: data hash " + data.content_hash + " differs from the training run's " + recorded);
  const auto subjects = extract_subject_features(extractor, data.trials);
  const std::string dir = out_dir.empty() ? (fs::path(rl_dir) / "evaluate").string() : out_dir;
  fs::create_directories(dir);
  Table table{subject_table_header(), {}};
  for (const auto& a : manifest.at("agents")) {
    const auto subject = a.at("subject").get<std::string>();
    const auto it = std::find_if(subjects.begin(), subjects.end(), [&](const auto& s) { return s.subject == subject; });
    if (it == subjects.end()) throw Error("evaluate: subject " + subject + " not present in the dataset");
    const auto reward = a.at("reward").get<RewardConfig>();
    const auto seed = a.at("split_seed").get<std::uint64_t>();
    const DuelingNet agent =
        dueling_from_checkpoint(load_checkpoint((fs::path(rl_dir) / a.at("checkpoint").get<std::string>()).string()));
    check_horizon(it->trials, reward.horizon);
    const auto eps = build_episodes(it->trials, reward.horizon);
    const auto split = split_episodes(eps.size(), seed);
    const auto outcomes = evaluate_all(agent, eps, split.test, reward);
    const Metrics m = metrics(outcomes);
    RlSummary s;
    s.reward = reward;
    s.accuracy = m.accuracy;
    s.f1 = m.f1;
    s.time = m.mean_time;
    table.rows.push_back(subject_row(subject, s));
    std::ofstream log(fs::path(dir) / ("episodes_" + safe_name(subject) + ".tsv"));
    write_episode_log(log, outcomes);
  }
  table = with_summary(std::move(table));
  write_metrics(dir, "metrics", table);
  return table;
}

/// Merges metric tables (files, or every metrics.tsv below a directory) into one table with
/// Mean/Std footer rows.
inline Table cmd_report(const std::vector<std::string>& inputs, const std::string& out_dir = {}) {
  std::vector<std::string> files;
  for (const auto& in : inputs) {
    if (!fs::exists(in)) throw Error("report input '" + in + "' does not exist");
    if (fs::is_directory(in)) {
      std::vector<std::string> found;
      for (const auto& e : fs::recursive_directory_iterator(in))
        if (e.is_regular_file() && e.path().filename() == "metrics.tsv") found.push_back(e.path().string());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(in);
    }
  }
  std::set<fs::path> seen;
  std::erase_if(files, [&](const std::string& f) { return !seen.insert(fs::weakly_canonical(f)).second; });
  if (files.empty()) throw Error("report: no metrics.tsv files found");
  std::vector<Table> tables;
  for (const auto& f : files) tables.push_back(read_tsv(f));
  Table merged = with_summary(merge_tables(tables, files));
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_metrics(out_dir, "report", merged);
  }
  return merged;
}

inline void cmd_synth_gen(const SyntheticSpec& spec, const std::string& path) {
  const Recording rec = generate_synthetic(spec);
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream os(path);
  if (!os) throw Error("cannot write '" + path + "'");
  write_matrix_text(os, rec);
  std::ofstream(path + ".json") << nlohmann::json(spec).dump(2) << '\n';
}

// ---------------------------------------------------------------------------------------

/// Warning sink that prints each distinct message prefix at most `limit` times and reports
/// the suppressed count on destruction.
class RateLimitedWarnings {
 public:
  explicit RateLimitedWarnings(std::ostream& os, std::size_t limit = 5) : os_(os), limit_(limit) {
    previous_ = set_warning_sink([this](std::string_view m) { emit(m); });
  }
  ~RateLimitedWarnings() {
    set_warning_sink(std::move(previous_));
    if (suppressed_) os_ << "warning: " << suppressed_ << " repeated warnings suppressed\n";
  }
  RateLimitedWarnings(const RateLimitedWarnings&) = delete;
  RateLimitedWarnings& operator=(const RateLimitedWarnings&) = delete;

  std::size_t suppressed() const { return suppressed_; }

 private:
  void emit(std::string_view m) {
    const std::string key(m.substr(0, m.find(':')));
    if (++counts_[key] > limit_) {
      ++suppressed_;
      return;
    }
    os_ << "warning: " << m << '\n';
  }

  std::ostream& os_;
  std::size_t limit_;
  std::map<std::string, std::size_t> counts_;
  std::size_t suppressed_ = 0;
  WarningSink previous_;
};

}  // namespace eegrl
