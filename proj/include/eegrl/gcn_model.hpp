#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegrl/cheb_conv.hpp"
#include "eegrl/graph.hpp"
#include "eegrl/layers.hpp"

namespace eegrl {

struct GcnConfig {
  std::vector<std::size_t> conv_widths{1, 16, 32, 64, 128, 256, 512};
  std::size_t order = 5;
  std::vector<std::size_t> fc_widths{512, 1024, 2048, 4};
  double dropout = 0.5;
  std::size_t nodes = 64;

  std::size_t feature_dim() const { return conv_widths.back(); }
  std::size_t classes() const { return fc_widths.back(); }

  void validate() const {
    if (conv_widths.size() < 2 || conv_widths.front() != 1)
      throw ContractError("GcnConfig: conv widths must start at 1 and have at least one layer");
    if (fc_widths.size() < 2 || fc_widths.front() != conv_widths.back())
      throw ContractError("GcnConfig: first fc width must equal the last conv width");
    if (order == 0) throw ContractError("GcnConfig: polynomial order must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("GcnConfig: dropout must be in [0, 1)");
    if (nodes < 2) throw ContractError("GcnConfig: need at least 2 nodes");
  }
};

inline void to_json(nlohmann::json& j, const GcnConfig& c) {
  j = nlohmann::json{{"conv_widths", c.conv_widths},
                     {"order", c.order},
                     {"fc_widths", c.fc_widths},
                     {"dropout", c.dropout},
                     {"nodes", c.nodes}};
}

inline void from_json(const nlohmann::json& j, GcnConfig& c) {
  GcnConfig d;
  c.conv_widths = j.value("conv_widths", d.conv_widths);
  c.order = j.value("order", d.order);
  c.fc_widths = j.value("fc_widths", d.fc_widths);
  c.dropout = j.value("dropout", d.dropout);
  c.nodes = j.value("nodes", d.nodes);
}

struct GcnOutput {
  Tensor features;  // batch × feature_dim, the pooled representation
  Tensor logits;    // batch × classes
};

/// Chebyshev graph convolution stack with a trainable adjacency mask, mean pooling, and an
/// MLP classifier. A plain value type: copying it snapshots every weight and the mask.
class GcnModel {
 public:
  GcnModel() = default;

  GcnModel(const GcnConfig& config, Rng& rng) : config_(config), base_(config.nodes), mask_(base_) {
    config_.validate();
    for (std::size_t l = 0; l + 1 < config_.conv_widths.size(); ++l) {
      convs_.emplace_back(config_.conv_widths[l], config_.conv_widths[l + 1], config_.order, rng);
      conv_bn_.emplace_back(config_.conv_widths[l + 1]);
    }
    for (std::size_t l = 0; l + 1 < config_.fc_widths.size(); ++l) {
      fc_.emplace_back(config_.fc_widths[l], config_.fc_widths[l + 1], rng);
      if (l + 2 < config_.fc_widths.size()) {
        fc_bn_.emplace_back(config_.fc_widths[l + 1]);
        dropout_.push_back(Dropout{config_.dropout, {}});
      }
    }
  }

  const GcnConfig& config() const { return config_; }
  const BaseAdjacency& base() const { return base_; }
  AdjacencyMask& mask() { return mask_; }
  const AdjacencyMask& mask() const { return mask_; }
  std::vector<ChebLayerWeights>& convs() { return convs_; }
  std::vector<Linear>& fc() { return fc_; }
  std::vector<BatchNorm>& conv_norms() { return conv_bn_; }
  std::vector<BatchNorm>& fc_norms() { return fc_bn_; }

  bool frozen() const { return frozen_; }

  /// Fixes the mask, caches the scaled Laplacian, and makes the model inference-only.
  void freeze() {
    refresh_graph();
    trace_ = {};
    frozen_ = true;
  }

  /// Drops the activations kept for backward(), e.g. before taking a snapshot.
  void release_trace() { trace_ = {}; }

  /// Graph operator from the most recent forward pass (or the frozen cache).
  const GraphOperator& graph() const { return graph_; }

  /// `x` is batch × nodes. Train mode uses batch statistics and dropout (needs `rng`) and
  /// records what backward() needs.
  GcnOutput forward(const Tensor& x, Mode mode, Rng* rng = nullptr) {
    if (frozen_ && mode == Mode::Train) throw ContractError("GcnModel: frozen model cannot train");
    if (!frozen_) refresh_graph();
    if (mode == Mode::Train) {
      if (!rng) throw ContractError("GcnModel: train mode needs a random generator for dropout");
      return run(*this, x, rng, &trace_);
    }
    return run(*this, x, nullptr, nullptr);
  }

  /// Eval-mode forward through the cached graph; only valid once frozen.
  GcnOutput infer(const Tensor& x) const {
    if (!frozen_) throw ContractError("GcnModel: infer() requires a frozen model");
    return run(*this, x, nullptr, nullptr);
  }

  /// Accumulates gradients for every parameter (the mask included) from dLoss/dlogits of
  /// the last train-mode forward.
  void backward(const Tensor& dlogits) {
    if (trace_.batch == 0) throw ContractError("GcnModel: backward() without a train-mode forward");
    const std::size_t batch = trace_.batch;
    const std::size_t n = config_.nodes;

    Tensor d = dlogits;
    for (std::size_t l = fc_.size(); l-- > 0;) {
      d = fc_[l].backward(trace_.fc_in[l], d);
      if (l == 0) break;
      const std::size_t h = l - 1;
      d = dropout_[h].backward(d);
      d = relu_backward(trace_.fc_act[h], d);
      d = fc_bn_[h].backward(trace_.fc_bn[h], d);
    }

    const std::size_t c = config_.feature_dim();
    Tensor dh = Tensor::matrix(n * batch, c);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t k = 0; k < c; ++k) dh.at(i * batch + b, k) = d.at(b, k) * inv_n;

    Tensor d_lt = Tensor::matrix(n, n);
    for (std::size_t l = convs_.size(); l-- > 0;) {
      dh = relu_backward(trace_.conv_act[l], dh);
      dh = conv_bn_[l].backward(trace_.conv_bn[l], dh);
      dh = cheb_conv_backward(trace_.cheb[l], graph_.scaled.matrix, convs_[l], dh, &d_lt);
    }
    graph_backward(base_, mask_, graph_, d_lt);
    mask_.enforce_frozen();
  }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> p;
    for (auto& [name, t] : named_parameters()) p.push_back(t);
    return p;
  }

  std::vector<std::pair<std::string, Tensor*>> named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> p;
    for (std::size_t l = 0; l < convs_.size(); ++l) {
      const std::string s = std::to_string(l);
      p.emplace_back("conv" + s + ".theta", &convs_[l].theta);
      p.emplace_back("conv" + s + ".bn.gamma", &conv_bn_[l].gamma);
      p.emplace_back("conv" + s + ".bn.beta", &conv_bn_[l].beta);
    }
    for (std::size_t l = 0; l < fc_.size(); ++l) {
      const std::string s = std::to_string(l);
      p.emplace_back("fc" + s + ".weight", &fc_[l].weight);
      p.emplace_back("fc" + s + ".bias", &fc_[l].bias);
      if (l < fc_bn_.size()) {
        p.emplace_back("fc" + s + ".bn.gamma", &fc_bn_[l].gamma);
        p.emplace_back("fc" + s + ".bn.beta", &fc_bn_[l].beta);
      }
    }
    p.emplace_back("mask", &mask_.values());
    return p;
  }

  void zero_grad() {
    for (Tensor* t : parameters()) t->zero_grad();
  }

  /// Every tensor needed to restore the model, including batch-norm running statistics and
  /// the frozen flags of the mask.
  std::map<std::string, Tensor> state_dict() {
    std::map<std::string, Tensor> out;
    for (auto& [name, t] : named_parameters()) {
      Tensor copy(t->shape(), std::vector<double>(t->data().begin(), t->data().end()));
      out.emplace(name, std::move(copy));
    }
    auto stats = [&](const std::string& prefix, const BatchNorm& bn) {
      out.emplace(prefix + ".running_mean", Tensor({bn.features()}, bn.running_mean));
      out.emplace(prefix + ".running_var", Tensor({bn.features()}, bn.running_var));
    };
    for (std::size_t l = 0; l < conv_bn_.size(); ++l) stats("conv" + std::to_string(l) + ".bn", conv_bn_[l]);
    for (std::size_t l = 0; l < fc_bn_.size(); ++l) stats("fc" + std::to_string(l) + ".bn", fc_bn_[l]);
    std::vector<double> flags(mask_.frozen_flags().begin(), mask_.frozen_flags().end());
    out.emplace("mask.frozen", Tensor({config_.nodes, config_.nodes}, std::move(flags)));
    return out;
  }

  void load_state_dict(const std::map<std::string, Tensor>& state) {
    auto fetch = [&](const std::string& name) -> const Tensor& {
      auto it = state.find(name);
      if (it == state.end()) throw ParseError("checkpoint is missing block '" + name + "'");
      return it->second;
    };
    for (auto& [name, t] : named_parameters()) {
      if (name == "mask") continue;
      const Tensor& src = fetch(name);
      if (src.shape() != t->shape())
        throw DimensionError("checkpoint block '" + name + "' has shape " + shape_string(src.shape()) +
                             ", model expects " + shape_string(t->shape()));
      *t = src;
    }
    auto stats = [&](const std::string& prefix, BatchNorm& bn) {
      const Tensor& m = fetch(prefix + ".running_mean");
      const Tensor& v = fetch(prefix + ".running_var");
      if (m.size() != bn.features() || v.size() != bn.features())
        throw DimensionError("checkpoint block '" + prefix + "' has the wrong feature count");
      bn.running_mean.assign(m.data().begin(), m.data().end());
      bn.running_var.assign(v.data().begin(), v.data().end());
    };
    for (std::size_t l = 0; l < conv_bn_.size(); ++l) stats("conv" + std::to_string(l) + ".bn", conv_bn_[l]);
    for (std::size_t l = 0; l < fc_bn_.size(); ++l) stats("fc" + std::to_string(l) + ".bn", fc_bn_[l]);

    const Tensor& values = fetch("mask");
    const Tensor& flags = fetch("mask.frozen");
    const std::size_t nn = config_.nodes * config_.nodes;
    if (values.size() != nn || flags.size() != nn)
      throw DimensionError("checkpoint mask does not match " + std::to_string(config_.nodes) + " nodes");
    std::vector<std::uint8_t> frozen(nn);
    for (std::size_t k = 0; k < nn; ++k) frozen[k] = flags[k] != 0.0 ? 1 : 0;
    mask_ = AdjacencyMask::from_entries(config_.nodes,
                                        std::vector<double>(values.data().begin(), values.data().end()),
                                        std::move(frozen), base_.edge_count());
    frozen_ = false;
  }

 private:
  struct Trace {
    std::size_t batch = 0;
    std::vector<ChebCache> cheb;
    std::vector<BatchNorm::Cache> conv_bn;
    std::vector<Tensor> conv_act;
    std::vector<Tensor> fc_in;
    std::vector<BatchNorm::Cache> fc_bn;
    std::vector<Tensor> fc_act;
  };

  // Shared by the training forward (Self = GcnModel) and the read-only inference path
  // (Self = const GcnModel), which never touches running statistics or dropout state.
  void refresh_graph() {
    const auto v = mask_.values().data();
    if (graph_key_.size() == v.size() && std::equal(v.begin(), v.end(), graph_key_.begin())) return;
    graph_ = build_graph(base_, mask_);
    graph_key_.assign(v.begin(), v.end());
  }

  template <class Self>
  static GcnOutput run(Self& self, const Tensor& x, Rng* rng, Trace* trace) {
    const auto& config_ = self.config_;
    auto& convs_ = self.convs_;
    auto& conv_bn_ = self.conv_bn_;
    auto& fc_ = self.fc_;
    auto& fc_bn_ = self.fc_bn_;
    const std::size_t n = config_.nodes;
    if (x.rank() != 2 || x.cols() != n)
      throw DimensionError("GcnModel: input " + shape_string(x.shape()) + ", expected batch x " +
                           std::to_string(n));
    if (!x.all_finite()) throw ContractError("GcnModel: input contains non-finite values");
    const std::size_t batch = x.rows();
    if (batch == 0) throw DimensionError("GcnModel: empty batch");
    const bool train = trace != nullptr;
    if (train) {
      *trace = {};
      trace->batch = batch;
      trace->cheb.resize(convs_.size());
      trace->conv_bn.resize(convs_.size());
      trace->fc_bn.resize(fc_bn_.size());
    }

    Tensor h = Tensor::matrix(n * batch, 1);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < n; ++i) h[i * batch + b] = x.at(b, i);

    const Tensor& lt = self.graph_.scaled.matrix;
    for (std::size_t l = 0; l < convs_.size(); ++l) {
      Tensor y = cheb_conv_batch(h, batch, lt, convs_[l], train ? &trace->cheb[l] : nullptr);
      if constexpr (std::is_const_v<Self>)
        y = conv_bn_[l].forward_eval(y);
      else
        y = train ? conv_bn_[l].forward_train(y, trace->conv_bn[l]) : conv_bn_[l].forward_eval(y);
      h = relu(y);
      if (train) trace->conv_act.push_back(h);
    }

    const std::size_t c = config_.feature_dim();
    GcnOutput out;
    out.features = Tensor::matrix(batch, c);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t k = 0; k < c; ++k) out.features.at(b, k) += h.at(i * batch + b, k) * inv_n;

    Tensor z = out.features;
    for (std::size_t l = 0; l < fc_.size(); ++l) {
      if (train) trace->fc_in.push_back(z);
      z = fc_[l].forward(z);
      if (l + 1 == fc_.size()) break;
      if constexpr (std::is_const_v<Self>) {
        z = relu(fc_bn_[l].forward_eval(z));
      } else {
        z = train ? fc_bn_[l].forward_train(z, trace->fc_bn[l]) : fc_bn_[l].forward_eval(z);
        z = relu(z);
        if (train) {
          trace->fc_act.push_back(z);
          z = self.dropout_[l].forward(z, *rng);
        }
      }
    }
    out.logits = std::move(z);
    return out;
  }

  GcnConfig config_;
  BaseAdjacency base_;
  AdjacencyMask mask_;
  std::vector<ChebLayerWeights> convs_;
  std::vector<BatchNorm> conv_bn_;
  std::vector<Linear> fc_;
  std::vector<BatchNorm> fc_bn_;
  std::vector<Dropout> dropout_;
  GraphOperator graph_;
  std::vector<double> graph_key_;  // mask values graph_ was built from
  Trace trace_;
  bool frozen_ = false;
};

/// Class probabilities for one time point (`x` holds one value per node).
inline std::vector<double> forward_classify(GcnModel& model, std::span<const double> x, Mode mode,
                                            Rng* rng = nullptr) {
  Tensor in({1, x.size()}, std::vector<double>(x.begin(), x.end()));
  if (mode == Mode::Train) {
    // batch statistics over a single sample still normalize across the node axis
    auto out = model.forward(in, mode, rng);
    auto p = softmax_rows(out.logits);
    return {p.data().begin(), p.data().end()};
  }
  auto out = model.frozen() ? model.infer(in) : model.forward(in, mode);
  auto p = softmax_rows(out.logits);
  return {p.data().begin(), p.data().end()};
}

/// Pooled features of a batch of time points from a frozen model.
inline Tensor extract_features(const GcnModel& model, const Tensor& x) {
  if (!model.frozen()) throw ContractError("extract_features: model is not frozen");
  return model.infer(x).features;
}

inline std::vector<double> extract_features(const GcnModel& model, std::span<const double> x) {
  Tensor f = extract_features(model, Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())));
  return {f.data().begin(), f.data().end()};
}

}  // namespace eegrl
