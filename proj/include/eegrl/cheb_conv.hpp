#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "eegrl/graph.hpp"
#include "eegrl/tensor.hpp"

namespace eegrl {

/// Chebyshev filter coefficients, stored K × in × out (theta_k is an in × out block).
struct ChebLayerWeights {
  Tensor theta;

  ChebLayerWeights() = default;
  ChebLayerWeights(std::size_t in_channels, std::size_t out_channels, std::size_t order)
      : theta({order, in_channels, out_channels}) {}

  ChebLayerWeights(std::size_t in_channels, std::size_t out_channels, std::size_t order, Rng& rng)
      : ChebLayerWeights(in_channels, out_channels, order) {
    for (std::size_t k = 0; k < order; ++k)
      glorot_uniform(block(k), in_channels, out_channels, rng);
  }

  std::size_t order() const { return theta.dim(0); }
  std::size_t in_channels() const { return theta.dim(1); }
  std::size_t out_channels() const { return theta.dim(2); }

  std::span<double> block(std::size_t k) {
    const std::size_t sz = in_channels() * out_channels();
    return theta.data().subspan(k * sz, sz);
  }
  std::span<const double> block(std::size_t k) const {
    const std::size_t sz = in_channels() * out_channels();
    return theta.data().subspan(k * sz, sz);
  }
  ConstMatrixView block_view(std::size_t k) const {
    return as_matrix(block(k), in_channels(), out_channels());
  }
};

/// Chebyshev basis X_0..X_{K-1} kept for the backward pass.
struct ChebCache {
  std::vector<Tensor> basis;
  std::size_t batch = 0;
};

// Batched activations use node-major layout: row (node * batch + b) holds the channels of
// node `node` in sample `b`. Viewed as nodes × (batch·channels) the same buffer is the
// operand of the Laplacian products, so no transposes are needed.

/// Sum_k T_k(L~) X theta_k via X_0 = X, X_1 = L~X, X_k = 2 L~ X_{k-1} - X_{k-2}.
/// `x` is (nodes·batch) × in_channels in node-major order.
inline Tensor cheb_conv_batch(const Tensor& x, std::size_t batch, const Tensor& l_tilde,
                              const ChebLayerWeights& w, ChebCache* cache = nullptr) {
  const std::size_t n = l_tilde.rows();
  const std::size_t c_in = w.in_channels();
  const std::size_t order = w.order();
  if (order == 0) throw DimensionError("cheb_conv: polynomial order must be >= 1");
  if (l_tilde.rank() != 2 || l_tilde.cols() != n)
    throw DimensionError("cheb_conv: scaled Laplacian must be square");
  if (x.rank() != 2 || x.rows() != n * batch || x.cols() != c_in)
    throw DimensionError("cheb_conv: input " + shape_string(x.shape()) + " does not match " +
                         std::to_string(n) + " nodes x " + std::to_string(batch) + " batch x " +
                         std::to_string(c_in) + " channels");
  const std::size_t wide = batch * c_in;
  const auto lap = l_tilde.view();

  std::vector<Tensor> basis;
  basis.reserve(order);
  basis.push_back(x);
  if (order > 1) {
    Tensor x1 = Tensor::matrix(n * batch, c_in);
    as_matrix(x1.data(), n, wide).noalias() = lap * as_matrix(basis[0].data(), n, wide);
    basis.push_back(std::move(x1));
  }
  for (std::size_t k = 2; k < order; ++k) {
    Tensor xk = Tensor::matrix(n * batch, c_in);
    auto out = as_matrix(xk.data(), n, wide);
    out.noalias() = 2.0 * lap * as_matrix(basis[k - 1].data(), n, wide);
    out -= as_matrix(basis[k - 2].data(), n, wide);
    basis.push_back(std::move(xk));
  }

  Tensor y = Tensor::matrix(n * batch, w.out_channels());
  for (std::size_t k = 0; k < order; ++k) y.view().noalias() += basis[k].view() * w.block_view(k);

  if (cache) {
    cache->basis = std::move(basis);
    cache->batch = batch;
  }
  return y;
}

/// Single-sample form: x is nodes × in_channels.
inline Tensor cheb_conv(const Tensor& x, const ScaledLaplacian& l_tilde, const ChebLayerWeights& w) {
  return cheb_conv_batch(x, 1, l_tilde.matrix, w);
}

/// Backward of cheb_conv_batch. Accumulates dtheta into w.theta's grad buffer and, when
/// `d_l_tilde` is non-null, dLoss/dL~ into it. Returns dLoss/dx.
inline Tensor cheb_conv_backward(const ChebCache& cache, const Tensor& l_tilde, ChebLayerWeights& w,
                                 const Tensor& dy, Tensor* d_l_tilde = nullptr) {
  const std::size_t n = l_tilde.rows();
  const std::size_t batch = cache.batch;
  const std::size_t c_in = w.in_channels();
  const std::size_t order = w.order();
  const std::size_t wide = batch * c_in;
  const auto lap = l_tilde.view();

  auto dtheta = w.theta.grad();
  const std::size_t blk = c_in * w.out_channels();
  std::vector<Tensor> g(order);
  for (std::size_t k = 0; k < order; ++k) {
    as_matrix(dtheta.subspan(k * blk, blk), c_in, w.out_channels()).noalias() +=
        cache.basis[k].view().transpose() * dy.view();
    g[k] = Tensor::matrix(n * batch, c_in);
    g[k].view().noalias() = dy.view() * w.block_view(k).transpose();
  }

  std::optional<MatrixView> dl;
  if (d_l_tilde) {
    if (d_l_tilde->shape() != l_tilde.shape()) *d_l_tilde = Tensor::matrix(n, n);
    dl.emplace(d_l_tilde->view());
  }
  for (std::size_t k = order; k-- > 2;) {
    const auto gk = as_matrix(std::as_const(g[k]).data(), n, wide);
    as_matrix(g[k - 1].data(), n, wide).noalias() += 2.0 * lap.transpose() * gk;
    as_matrix(g[k - 2].data(), n, wide) -= gk;
    if (dl) dl->noalias() += 2.0 * gk * as_matrix(cache.basis[k - 1].data(), n, wide).transpose();
  }
  if (order > 1) {
    const auto g1 = as_matrix(std::as_const(g[1]).data(), n, wide);
    as_matrix(g[0].data(), n, wide).noalias() += lap.transpose() * g1;
    if (dl) dl->noalias() += g1 * as_matrix(cache.basis[0].data(), n, wide).transpose();
  }
  return std::move(g[0]);
}

}  // namespace eegrl
