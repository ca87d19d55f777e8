#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "eegrl/adam.hpp"
#include "eegrl/gcn_model.hpp"

namespace eegrl {

/// Single time points (one value per node) with task labels 1..4. `clear` optionally marks
/// points known to be unambiguous (synthetic data only).
struct PointDataset {
  Tensor points;
  std::vector<int> labels;
  std::vector<std::uint8_t> clear;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }

  PointDataset subset(std::span<const std::size_t> idx) const {
    PointDataset out;
    const std::size_t n = points.cols();
    out.points = Tensor::matrix(idx.size(), n);
    out.labels.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::copy_n(points.row(idx[r]).begin(), n, out.points.row(r).begin());
      out.labels.push_back(labels[idx[r]]);
      if (!clear.empty()) out.clear.push_back(clear[idx[r]]);
    }
    return out;
  }

  /// Only the points flagged clear.
  PointDataset clear_only() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < clear.size(); ++i)
      if (clear[i]) idx.push_back(i);
    return subset(idx);
  }
};

struct GcnHyper {
  std::size_t epochs = 1000;
  std::size_t batch_size = 1024;
  double lr = 0.01;
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const GcnHyper& h) {
  j = nlohmann::json{{"epochs", h.epochs}, {"batch_size", h.batch_size}, {"lr", h.lr}, {"seed", h.seed}};
}

inline void from_json(const nlohmann::json& j, GcnHyper& h) {
  GcnHyper d;
  h.epochs = j.value("epochs", d.epochs);
  h.batch_size = j.value("batch_size", d.batch_size);
  h.lr = j.value("lr", d.lr);
  h.seed = j.value("seed", d.seed);
}

/// Predicted labels (1-based) in eval mode, evaluated in chunks.
inline std::vector<int> predict_labels(GcnModel& model, const Tensor& points, std::size_t chunk = 1024) {
  std::vector<int> out;
  out.reserve(points.rows());
  const std::size_t n = points.cols();
  for (std::size_t start = 0; start < points.rows(); start += chunk) {
    const std::size_t rows = std::min(chunk, points.rows() - start);
    Tensor x({rows, n}, std::vector<double>(points.data().begin() + static_cast<std::ptrdiff_t>(start * n),
                                            points.data().begin() +
                                                static_cast<std::ptrdiff_t>((start + rows) * n)));
    const Tensor logits = model.frozen() ? model.infer(x).logits : model.forward(x, Mode::Eval).logits;
    for (std::size_t r = 0; r < rows; ++r) out.push_back(static_cast<int>(argmax(logits.row(r))) + 1);
  }
  return out;
}

inline double accuracy(GcnModel& model, const PointDataset& data) {
  if (data.empty()) throw ContractError("accuracy: empty dataset");
  const auto pred = predict_labels(model, data.points);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == data.labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

struct GcnTrainResult {
  double best_val_accuracy = -1.0;
  std::size_t best_epoch = 0;
  std::vector<double> train_loss;
  std::vector<double> val_accuracy;
};

using EpochCallback = std::function<void(std::size_t epoch, double loss, double val_acc)>;

/// Mini-batch Adam on cross-entropy; validation accuracy is measured after every epoch and
/// the model is left holding the best-scoring snapshot (earliest epoch wins ties).
inline GcnTrainResult train_gcn(GcnModel& model, const PointDataset& train, const PointDataset& val,
                                const GcnHyper& hyper, const EpochCallback& on_epoch = {}) {
  if (train.empty()) throw ContractError("train_gcn: empty training set");
  if (val.empty()) throw ContractError("train_gcn: empty validation set");
  if (hyper.batch_size == 0) throw ContractError("train_gcn: batch size must be positive");
  if (train.points.cols() != model.config().nodes)
    throw DimensionError("train_gcn: points have " + std::to_string(train.points.cols()) +
                         " channels, model expects " + std::to_string(model.config().nodes));

  Rng rng(hyper.seed);
  AdamState adam;
  adam.lr = hyper.lr;
  GcnTrainResult result;
  GcnModel best;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t n = train.points.cols();

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t rows = std::min(hyper.batch_size, order.size() - start);
      Tensor x = Tensor::matrix(rows, n);
      std::vector<int> target(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t i = order[start + r];
        std::copy_n(train.points.row(i).begin(), n, x.row(r).begin());
        target[r] = train.labels[i] - 1;
      }
      model.zero_grad();
      const auto out = model.forward(x, Mode::Train, &rng);
      Tensor dlogits;
      const double loss = cross_entropy(out.logits, target, &dlogits);
      if (!std::isfinite(loss))
        throw TrainingError("train_gcn: loss became non-finite at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(batches));
      model.backward(dlogits);
      auto params = model.parameters();
      adam_step(params, adam);
      model.mask().enforce_frozen();
      loss_sum += loss;
      ++batches;
    }
    const double acc = accuracy(model, val);
    result.train_loss.push_back(loss_sum / static_cast<double>(batches));
    result.val_accuracy.push_back(acc);
    if (acc > result.best_val_accuracy) {
      result.best_val_accuracy = acc;
      result.best_epoch = epoch;
      model.release_trace();
      best = model;
    }
    if (on_epoch) on_epoch(epoch, result.train_loss.back(), acc);
  }
  if (hyper.epochs > 0) model = std::move(best);
  model.release_trace();
  return result;
}

}  // namespace eegrl
