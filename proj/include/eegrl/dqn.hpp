#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegrl/adam.hpp"
#include "eegrl/checkpoint.hpp"
#include "eegrl/layers.hpp"
#include "eegrl/rl_env.hpp"

namespace eegrl {

struct DuelingConfig {
  std::size_t input = 512;
  std::vector<std::size_t> trunk{1024, 2048};
  std::size_t head_hidden = 64;
  std::size_t actions = kActionCount;
};

inline void to_json(nlohmann::json& j, const DuelingConfig& c) {
  j = nlohmann::json{{"input", c.input}, {"trunk", c.trunk}, {"head_hidden", c.head_hidden}, {"actions", c.actions}};
}

inline void from_json(const nlohmann::json& j, DuelingConfig& c) {
  DuelingConfig d;
  c.input = j.value("input", d.input);
  c.trunk = j.value("trunk", d.trunk);
  c.head_hidden = j.value("head_hidden", d.head_hidden);
  c.actions = j.value("actions", d.actions);
}

/// Q = V + (A - mean(A)) row-wise; `value` is batch × 1, `advantage` batch × actions.
inline Tensor dueling_aggregate(const Tensor& value, const Tensor& advantage) {
  if (value.rank() != 2 || value.cols() != 1 || advantage.rank() != 2 || value.rows() != advantage.rows())
    throw DimensionError("dueling_aggregate: value " + shape_string(value.shape()) + " vs advantage " +
                         shape_string(advantage.shape()));
  Tensor q = advantage;
  for (std::size_t r = 0; r < q.rows(); ++r) {
    auto row = q.row(r);
    const double mean = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
    for (double& v : row) v += value[r] - mean;
  }
  return q;
}

/// Gradients of dueling_aggregate: dV = sum_a dQ, dA = dQ - mean_a dQ.
inline std::pair<Tensor, Tensor> dueling_aggregate_backward(const Tensor& dq) {
  Tensor dv = Tensor::matrix(dq.rows(), 1);
  Tensor da = dq;
  for (std::size_t r = 0; r < dq.rows(); ++r) {
    auto row = da.row(r);
    const double sum = std::accumulate(row.begin(), row.end(), 0.0);
    dv[r] = sum;
    for (double& v : row) v -= sum / static_cast<double>(row.size());
  }
  return {std::move(dv), std::move(da)};
}

/// Shared MLP trunk feeding separate value and advantage streams.
class DuelingNet {
 public:
  struct Cache {
    std::vector<Tensor> trunk_in;
    std::vector<Tensor> trunk_act;
    Tensor value_hidden;
    Tensor adv_hidden;
  };

  DuelingNet() = default;

  DuelingNet(const DuelingConfig& config, Rng& rng) : config_(config) {
    if (config.input == 0 || config.trunk.empty() || config.head_hidden == 0 || config.actions == 0)
      throw ContractError("DuelingConfig: all widths must be positive and the trunk non-empty");
    std::size_t prev = config.input;
    for (std::size_t w : config.trunk) {
      trunk_.emplace_back(prev, w, rng);
      prev = w;
    }
    value_hidden_ = Linear(prev, config.head_hidden, rng);
    value_out_ = Linear(config.head_hidden, 1, rng);
    adv_hidden_ = Linear(prev, config.head_hidden, rng);
    adv_out_ = Linear(config.head_hidden, config.actions, rng);
  }

  const DuelingConfig& config() const { return config_; }
  Linear& value_head() { return value_out_; }
  Linear& advantage_head() { return adv_out_; }

  Tensor forward(const Tensor& states, Cache* cache = nullptr) const {
    if (states.rank() != 2 || states.cols() != config_.input)
      throw DimensionError("DuelingNet: states " + shape_string(states.shape()) + ", expected rows x " +
                           std::to_string(config_.input));
    Tensor h = states;
    if (cache) *cache = {};
    for (const auto& layer : trunk_) {
      if (cache) cache->trunk_in.push_back(h);
      h = relu(layer.forward(h));
      if (cache) cache->trunk_act.push_back(h);
    }
    Tensor vh = relu(value_hidden_.forward(h));
    Tensor ah = relu(adv_hidden_.forward(h));
    Tensor q = dueling_aggregate(value_out_.forward(vh), adv_out_.forward(ah));
    if (cache) {
      cache->value_hidden = std::move(vh);
      cache->adv_hidden = std::move(ah);
    }
    return q;
  }

  Tensor q_values(const Tensor& states) const { return forward(states); }

  std::vector<double> q_values(std::span<const double> state) const {
    Tensor q = forward(Tensor({1, state.size()}, std::vector<double>(state.begin(), state.end())));
    return {q.data().begin(), q.data().end()};
  }

  void backward(const Cache& cache, const Tensor& dq) {
    auto [dv, da] = dueling_aggregate_backward(dq);
    const Tensor& trunk_out = cache.trunk_act.back();
    Tensor dvh = relu_backward(cache.value_hidden, value_out_.backward(cache.value_hidden, dv));
    Tensor dah = relu_backward(cache.adv_hidden, adv_out_.backward(cache.adv_hidden, da));
    Tensor dh = value_hidden_.backward(trunk_out, dvh);
    dh.view() += adv_hidden_.backward(trunk_out, dah).view();
    for (std::size_t l = trunk_.size(); l-- > 0;) {
      dh = relu_backward(cache.trunk_act[l], dh);
      dh = trunk_[l].backward(cache.trunk_in[l], dh);
    }
  }

  std::vector<std::pair<std::string, Tensor*>> named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> p;
    for (std::size_t l = 0; l < trunk_.size(); ++l) {
      p.emplace_back("trunk" + std::to_string(l) + ".weight", &trunk_[l].weight);
      p.emplace_back("trunk" + std::to_string(l) + ".bias", &trunk_[l].bias);
    }
    p.emplace_back("value.hidden.weight", &value_hidden_.weight);
    p.emplace_back("value.hidden.bias", &value_hidden_.bias);
    p.emplace_back("value.out.weight", &value_out_.weight);
    p.emplace_back("value.out.bias", &value_out_.bias);
    p.emplace_back("advantage.hidden.weight", &adv_hidden_.weight);
    p.emplace_back("advantage.hidden.bias", &adv_hidden_.bias);
    p.emplace_back("advantage.out.weight", &adv_out_.weight);
    p.emplace_back("advantage.out.bias", &adv_out_.bias);
    return p;
  }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> p;
    for (auto& [name, t] : named_parameters()) p.push_back(t);
    return p;
  }

  void zero_grad() {
    for (Tensor* t : parameters()) t->zero_grad();
  }

 private:
  DuelingConfig config_;
  std::vector<Linear> trunk_;
  Linear value_hidden_, value_out_, adv_hidden_, adv_out_;
};

inline Checkpoint dueling_checkpoint(DuelingNet& net, const nlohmann::json& extra = nlohmann::json::object()) {
  Checkpoint ck;
  ck.kind = "dueling";
  ck.meta = extra;
  ck.meta["config"] = net.config();
  for (auto& [name, t] : net.named_parameters())
    ck.blocks.emplace(name, Tensor(t->shape(), std::vector<double>(t->data().begin(), t->data().end())));
  return ck;
}

inline DuelingNet dueling_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "dueling") throw ParseError("checkpoint kind is '" + ck.kind + "', expected 'dueling'");
  Rng unused(0);
  DuelingNet net(ck.meta.at("config").get<DuelingConfig>(), unused);
  for (auto& [name, t] : net.named_parameters()) {
    auto it = ck.blocks.find(name);
    if (it == ck.blocks.end()) throw ParseError("checkpoint is missing block '" + name + "'");
    if (it->second.shape() != t->shape()) throw DimensionError("checkpoint block '" + name + "' has the wrong shape");
    *t = it->second;
  }
  return net;
}

struct Transition {
  std::size_t state = 0;  // row in ReplayBuffer::states
  int action = 0;
  double reward = 0.0;
  std::optional<std::size_t> next;  // empty when terminal
};

struct ReplayBuffer {
  Tensor states;
  std::vector<Transition> transitions;
  std::vector<std::vector<std::size_t>> batches;  // indices into transitions
};

/// Enumerates every action from every state of every training episode, shuffles the
/// transitions once by seed and cuts them into batches (the last one may be short).
inline ReplayBuffer build_buffer(const std::vector<Episode>& episodes, const RewardConfig& reward,
                                 std::size_t batch_size, std::uint64_t seed) {
  if (episodes.empty()) throw ContractError("build_buffer: no episodes");
  if (batch_size == 0) throw ContractError("build_buffer: batch size must be positive");
  const std::size_t dim = episodes.front().states.cols();
  std::size_t total = 0;
  for (const auto& e : episodes) {
    if (e.states.cols() != dim) throw DimensionError("build_buffer: episodes disagree on feature size");
    total += e.horizon();
  }
  ReplayBuffer buf;
  buf.states = Tensor::matrix(total, dim);
  buf.transitions.reserve(total * kActionCount);
  std::size_t row = 0;
  for (const auto& e : episodes) {
    std::copy(e.states.data().begin(), e.states.data().end(), buf.states.row(row).begin());
    for (std::size_t t = 0; t < e.horizon(); ++t)
      for (int a = 0; a < kActionCount; ++a) {
        const StepResult r = step(e, t, a, reward);
        Transition tr{row + t, a, r.reward, std::nullopt};
        if (r.next) tr.next = row + *r.next;
        buf.transitions.push_back(tr);
      }
    row += e.horizon();
  }
  std::vector<std::size_t> order(buf.transitions.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t start = 0; start < order.size(); start += batch_size)
    buf.batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch_size)));
  return buf;
}

/// r for terminal transitions, otherwise r + gamma * max_a' Q_target(s', a').
inline double bellman_target(double reward, const std::optional<std::vector<double>>& next_q, double gamma) {
  if (!next_q) return reward;
  return reward + gamma * *std::max_element(next_q->begin(), next_q->end());
}

inline double bellman_target(const Transition& t, const Tensor& states, const DuelingNet& target, double gamma) {
  if (!t.next) return t.reward;
  return bellman_target(t.reward, target.q_values(states.row(*t.next)), gamma);
}

struct TrainerConfig {
  double gamma = 0.99;
  std::size_t epochs = 150;
  std::size_t batch_size = 63;
  std::size_t target_update_every = 50;
  double lr = 0.0001;
  double l2_lambda = 0.001;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ContractError("TrainerConfig: gamma must lie in [0, 1]");
    if (batch_size == 0 || target_update_every == 0 || !(lr > 0.0) || l2_lambda < 0.0)
      throw ContractError("TrainerConfig: batch size, target period and lr must be positive");
  }
};

inline void to_json(nlohmann::json& j, const TrainerConfig& c) {
  j = nlohmann::json{{"gamma", c.gamma},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"target_update_every", c.target_update_every},
                     {"lr", c.lr},
                     {"l2_lambda", c.l2_lambda},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainerConfig& c) {
  TrainerConfig d;
  c.gamma = j.value("gamma", d.gamma);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.target_update_every = j.value("target_update_every", d.target_update_every);
  c.lr = j.value("lr", d.lr);
  c.l2_lambda = j.value("l2_lambda", d.l2_lambda);
  c.seed = j.value("seed", d.seed);
}

/// Online network, target network and optimizer state for fitting Bellman targets.
class DqnTrainer {
 public:
  DqnTrainer(DuelingNet net, const TrainerConfig& cfg) : online_(std::move(net)), target_(online_), cfg_(cfg) {
    cfg_.validate();
    adam_.lr = cfg_.lr;
    adam_.l2_lambda = cfg_.l2_lambda;
  }

  DuelingNet& online() { return online_; }
  const DuelingNet& target() const { return target_; }
  std::size_t updates() const { return updates_; }

  void sync_target() { target_ = online_; }

  /// Squared error on the taken action, averaged over the batch. Returns the loss.
  double train_batch(const ReplayBuffer& buf, const std::vector<std::size_t>& batch) {
    const std::size_t b = batch.size();
    const std::size_t dim = buf.states.cols();
    Tensor s = Tensor::matrix(b, dim);
    std::vector<std::size_t> next_rows;
    std::vector<std::size_t> next_slot(b, b);
    for (std::size_t i = 0; i < b; ++i) {
      const Transition& t = buf.transitions[batch[i]];
      std::copy_n(buf.states.row(t.state).begin(), dim, s.row(i).begin());
      if (t.next) {
        next_slot[i] = next_rows.size();
        next_rows.push_back(*t.next);
      }
    }
    Tensor next_q;
    if (!next_rows.empty()) {
      Tensor ns = Tensor::matrix(next_rows.size(), dim);
      for (std::size_t i = 0; i < next_rows.size(); ++i) std::copy_n(buf.states.row(next_rows[i]).begin(), dim, ns.row(i).begin());
      next_q = target_.q_values(ns);
    }

    DuelingNet::Cache cache;
    const Tensor q = online_.forward(s, &cache);
    Tensor dq = Tensor::matrix(b, q.cols());
    double loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
      const Transition& t = buf.transitions[batch[i]];
      double y = t.reward;
      if (t.next) {
        auto row = next_q.row(next_slot[i]);
        y += cfg_.gamma * *std::max_element(row.begin(), row.end());
      }
      const auto a = static_cast<std::size_t>(t.action);
      const double diff = q.at(i, a) - y;
      loss += diff * diff;
      dq.at(i, a) = 2.0 * diff / static_cast<double>(b);
    }
    loss /= static_cast<double>(b);
    if (!std::isfinite(loss))
      throw TrainingError("train_dqn: loss became non-finite after " + std::to_string(updates_) + " updates");

    online_.zero_grad();
    online_.backward(cache, dq);
    auto params = online_.parameters();
    adam_step(params, adam_);
    ++updates_;
    if (updates_ % cfg_.target_update_every == 0) sync_target();
    return loss;
  }

  /// One pass over every batch; returns the mean batch loss.
  double train_epoch(const ReplayBuffer& buf) {
    double sum = 0.0;
    for (const auto& batch : buf.batches) sum += train_batch(buf, batch);
    return buf.batches.empty() ? 0.0 : sum / static_cast<double>(buf.batches.size());
  }

 private:
  DuelingNet online_;
  DuelingNet target_;
  TrainerConfig cfg_;
  AdamState adam_;
  std::size_t updates_ = 0;
};

using DqnEpochCallback = std::function<void(std::size_t epoch, double loss, const DuelingNet& net)>;

inline DuelingNet train_dqn(const ReplayBuffer& buf, DuelingNet net, const TrainerConfig& cfg,
                            std::vector<double>* losses = nullptr, const DqnEpochCallback& on_epoch = {}) {
  if (buf.transitions.empty()) throw ContractError("train_dqn: empty buffer");
  DqnTrainer trainer(std::move(net), cfg);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const double loss = trainer.train_epoch(buf);
    if (losses) losses->push_back(loss);
    if (on_epoch) on_epoch(e, loss, trainer.online());
  }
  return std::move(trainer.online());
}

struct EpisodeOutcome {
  int label = 0;
  int predicted = 0;
  bool correct = false;
  std::size_t time = 0;  // 1-based index of the classifying state
  double reward = 0.0;
};

/// Greedy rollout. At the last state the argmax is restricted to the class actions, so the
/// episode always ends in a classification. With `force_first` the agent must classify at
/// the first state (the no-skip baseline).
template <class QNet>
EpisodeOutcome evaluate(const QNet& net, const Episode& episode, const RewardConfig& cfg, bool force_first = false) {
  const std::size_t h = episode.horizon();
  if (h == 0) throw ContractError("evaluate: empty episode");
  const Tensor q = net.q_values(episode.states);
  EpisodeOutcome out;
  out.label = episode.label;
  for (std::size_t t = 0; t < h; ++t) {
    auto row = q.row(t);
    const bool forced = t + 1 == h || force_first;
    const auto first = row.begin() + (forced ? 1 : 0);
    const int action = static_cast<int>(std::max_element(first, row.end()) - row.begin());
    const StepResult r = step(episode, t, action, cfg);
    out.reward += r.reward;
    if (action != kSkip) {
      out.predicted = action;
      out.correct = action == episode.label;
      out.time = t + 1;
      return out;
    }
  }
  throw ContractError("evaluate: episode ended without a classification");
}

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double sensitivity = 0.0;
  double f1 = 0.0;
  double mean_time = 0.0;
  double mean_reward = 0.0;
  std::size_t episodes = 0;
  // Per-class scores; NaN for a class absent from both labels and predictions.
  std::vector<double> class_precision, class_sensitivity, class_f1;
};

/// Macro-averaged scores from a square confusion matrix (rows: true class, columns:
/// predicted). Classes absent from both labels and predictions are left out of the averages.
inline Metrics metrics_from_confusion(const std::vector<std::vector<std::size_t>>& confusion) {
  const std::size_t k = confusion.size();
  Metrics m;
  std::size_t total = 0, hit = 0;
  std::size_t counted = 0;
  m.class_precision.assign(k, std::nan(""));
  m.class_sensitivity.assign(k, std::nan(""));
  m.class_f1.assign(k, std::nan(""));
  for (std::size_t c = 0; c < k; ++c) {
    if (confusion[c].size() != k) throw DimensionError("metrics: confusion matrix must be square");
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += confusion[c][j];
      col += confusion[j][c];
    }
    total += row;
    hit += confusion[c][c];
    if (row == 0 && col == 0) {
      warn("metrics: class " + std::to_string(c + 1) + " absent from labels and predictions; excluded from macro average");
      continue;
    }
    const double tp = static_cast<double>(confusion[c][c]);
    const double p = col ? tp / static_cast<double>(col) : 0.0;
    const double s = row ? tp / static_cast<double>(row) : 0.0;
    const double f1 = p + s > 0.0 ? 2.0 * p * s / (p + s) : 0.0;
    m.class_precision[c] = p;
    m.class_sensitivity[c] = s;
    m.class_f1[c] = f1;
    m.precision += p;
    m.sensitivity += s;
    m.f1 += f1;
    ++counted;
  }
  if (total == 0) throw ContractError("metrics: no evaluated episodes");
  if (counted) {
    m.precision /= static_cast<double>(counted);
    m.sensitivity /= static_cast<double>(counted);
    m.f1 /= static_cast<double>(counted);
  }
  m.accuracy = static_cast<double>(hit) / static_cast<double>(total);
  m.episodes = total;
  return m;
}

inline Metrics metrics(const std::vector<EpisodeOutcome>& results) {
  if (results.empty()) throw ContractError("metrics: empty test set");
  std::vector<std::vector<std::size_t>> confusion(kClassCount, std::vector<std::size_t>(kClassCount, 0));
  double time = 0.0, reward = 0.0;
  for (const auto& r : results) {
    if (r.label < 1 || r.label > kClassCount || r.predicted < 1 || r.predicted > kClassCount)
      throw ContractError("metrics: labels and predictions must be in 1..4");
    ++confusion[static_cast<std::size_t>(r.label - 1)][static_cast<std::size_t>(r.predicted - 1)];
    time += static_cast<double>(r.time);
    reward += r.reward;
  }
  Metrics m = metrics_from_confusion(confusion);
  m.mean_time = time / static_cast<double>(results.size());
  m.mean_reward = reward / static_cast<double>(results.size());
  return m;
}

/// Tab-separated per-episode log: episode, label, predicted, time, reward.
inline void write_episode_log(std::ostream& os, const std::vector<EpisodeOutcome>& results) {
  os << "episode\tlabel\tpredicted\ttime\treward\n";
  for (std::size_t i = 0; i < results.size(); ++i)
    os << i << '\t' << results[i].label << '\t' << results[i].predicted << '\t' << results[i].time << '\t'
       << results[i].reward << '\n';
}

}  // namespace eegrl
