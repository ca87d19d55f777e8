#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "eegrl/tensor.hpp"

namespace eegrl {

enum class Mode { Train, Eval };

/// Fully connected layer y = x·W + b with W stored in × out.
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng)
      : weight(Tensor::matrix(in, out)), bias(Tensor::matrix(1, out)) {
    glorot_uniform(weight.data(), in, out, rng);
  }

  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }

  Tensor forward(const Tensor& x) const {
    if (x.rank() != 2 || x.cols() != in_features())
      throw DimensionError("Linear: input " + shape_string(x.shape()) + " but layer expects " +
                           std::to_string(in_features()) + " features");
    Tensor y = Tensor::matrix(x.rows(), out_features());
    y.view().noalias() = x.view() * weight.view();
    y.view().rowwise() += bias.view().row(0);
    return y;
  }

  /// Accumulates weight/bias gradients; returns dL/dx.
  Tensor backward(const Tensor& x, const Tensor& dy) {
    weight.grad_view().noalias() += x.view().transpose() * dy.view();
    bias.grad_view().row(0) += dy.view().colwise().sum();
    Tensor dx = Tensor::matrix(x.rows(), x.cols());
    dx.view().noalias() = dy.view() * weight.view().transpose();
    return dx;
  }

  void zero_grad() {
    weight.zero_grad();
    bias.zero_grad();
  }
};

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = std::max(0.0, v);
  return y;
}

/// Backward of ReLU given its output (positive entries pass the gradient).
inline Tensor relu_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (y[i] <= 0.0) dx[i] = 0.0;
  return dx;
}

/// Per-feature batch normalization over the rows of a (rows × features) matrix.
struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  struct Cache {
    Tensor x_hat;
    std::vector<double> inv_std;
  };

  BatchNorm() = default;
  explicit BatchNorm(std::size_t features)
      : gamma(Tensor::matrix(1, features, 1.0)),
        beta(Tensor::matrix(1, features, 0.0)),
        running_mean(features, 0.0),
        running_var(features, 1.0) {}

  std::size_t features() const { return running_mean.size(); }

  Tensor forward_train(const Tensor& x, Cache& cache) {
    check(x);
    const std::size_t n = x.rows();
    const std::size_t f = x.cols();
    std::vector<double> mean(f, 0.0), var(f, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < f; ++c) mean[c] += x.at(r, c);
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < f; ++c) {
        const double d = x.at(r, c) - mean[c];
        var[c] += d * d;
      }
    for (double& v : var) v /= static_cast<double>(n);

    cache.inv_std.resize(f);
    for (std::size_t c = 0; c < f; ++c) cache.inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    cache.x_hat = Tensor::matrix(n, f);
    Tensor y = Tensor::matrix(n, f);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < f; ++c) {
        const double xh = (x.at(r, c) - mean[c]) * cache.inv_std[c];
        cache.x_hat.at(r, c) = xh;
        y.at(r, c) = gamma[c] * xh + beta[c];
      }

    const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
    for (std::size_t c = 0; c < f; ++c) {
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean[c];
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var[c] * unbias;
    }
    return y;
  }

  Tensor forward_eval(const Tensor& x) const {
    check(x);
    Tensor y = Tensor::matrix(x.rows(), x.cols());
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const double scale = gamma[c] / std::sqrt(running_var[c] + eps);
      const double shift = beta[c] - running_mean[c] * scale;
      for (std::size_t r = 0; r < x.rows(); ++r) y.at(r, c) = x.at(r, c) * scale + shift;
    }
    return y;
  }

  Tensor backward(const Cache& cache, const Tensor& dy) {
    const std::size_t n = dy.rows();
    const std::size_t f = dy.cols();
    auto dgamma = gamma.grad();
    auto dbeta = beta.grad();
    std::vector<double> sum_dy(f, 0.0), sum_dy_xhat(f, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < f; ++c) {
        sum_dy[c] += dy.at(r, c);
        sum_dy_xhat[c] += dy.at(r, c) * cache.x_hat.at(r, c);
      }
    for (std::size_t c = 0; c < f; ++c) {
      dgamma[c] += sum_dy_xhat[c];
      dbeta[c] += sum_dy[c];
    }
    Tensor dx = Tensor::matrix(n, f);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < f; ++c)
        dx.at(r, c) = gamma[c] * cache.inv_std[c] *
                      (dy.at(r, c) - inv_n * sum_dy[c] - cache.x_hat.at(r, c) * inv_n * sum_dy_xhat[c]);
    return dx;
  }

  void zero_grad() {
    gamma.zero_grad();
    beta.zero_grad();
  }

 private:
  void check(const Tensor& x) const {
    if (x.rank() != 2 || x.cols() != features() || x.rows() == 0)
      throw DimensionError("BatchNorm: input " + shape_string(x.shape()) + " for " +
                           std::to_string(features()) + " features");
  }
};

/// Inverted dropout; the sampled keep-mask is retained for the backward pass.
struct Dropout {
  double rate = 0.5;
  std::vector<double> scale;

  Tensor forward(const Tensor& x, Rng& rng) {
    scale.assign(x.size(), 0.0);
    Tensor y = x;
    if (rate <= 0.0) {
      std::fill(scale.begin(), scale.end(), 1.0);
      return y;
    }
    std::bernoulli_distribution keep(1.0 - rate);
    const double s = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < y.size(); ++i) {
      scale[i] = keep(rng) ? s : 0.0;
      y[i] *= scale[i];
    }
    return y;
  }

  Tensor backward(const Tensor& dy) const {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= scale[i];
    return dx;
  }
};

inline Tensor log_softmax_rows(const Tensor& logits) {
  Tensor out = logits;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - m);
    const double lse = m + std::log(s);
    for (double& v : row) v -= lse;
  }
  return out;
}

inline Tensor softmax_rows(const Tensor& logits) {
  Tensor out = log_softmax_rows(logits);
  for (double& v : out.data()) v = std::exp(v);
  return out;
}

/// Mean cross-entropy over rows; `targets` are 0-based class indices.
/// Writes dL/dlogits into `dlogits` when non-null.
inline double cross_entropy(const Tensor& logits, std::span<const int> targets,
                            Tensor* dlogits = nullptr) {
  if (logits.rank() != 2 || logits.rows() != targets.size())
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_string(logits.shape()));
  const Tensor logp = log_softmax_rows(logits);
  const double inv_n = 1.0 / static_cast<double>(targets.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const auto t = static_cast<std::size_t>(targets[r]);
    if (t >= logits.cols()) throw DimensionError("cross_entropy: target class out of range");
    loss -= logp.at(r, t);
  }
  if (dlogits) {
    *dlogits = Tensor::matrix(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < targets.size(); ++r)
      for (std::size_t c = 0; c < logits.cols(); ++c)
        dlogits->at(r, c) =
            (std::exp(logp.at(r, c)) - (static_cast<std::size_t>(targets[r]) == c ? 1.0 : 0.0)) * inv_n;
  }
  return loss * inv_n;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace eegrl
