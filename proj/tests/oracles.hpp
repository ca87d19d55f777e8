#pragma once

// Independent reference implementations used only by the tests and the acceptance binary.

#include <Eigen/Eigenvalues>

#include <cmath>
#include <vector>

#include "eegrl/cheb_conv.hpp"
#include "eegrl/graph.hpp"
#include "eegrl/tensor.hpp"

namespace oracle {

using eegrl::Tensor;

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c = Tensor::matrix(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  return c;
}

inline Tensor random_matrix(std::size_t r, std::size_t c, eegrl::Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.data()) v = d(rng);
  return t;
}

/// Symmetric nonnegative adjacency with zero diagonal and every node connected.
inline Tensor random_symmetric_graph(std::size_t n, eegrl::Rng& rng) {
  std::uniform_real_distribution<double> w(0.1, 2.0);
  std::bernoulli_distribution keep(0.6);
  Tensor a = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (keep(rng) || j == i + 1) a.at(i, j) = a.at(j, i) = w(rng);
  return a;
}

inline Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t.at(i, j);
  return m;
}

inline Eigen::VectorXd eigenvalues_symmetric(const Tensor& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(m));
  return es.eigenvalues();
}

/// Graph Fourier filtering done literally: eigendecompose L, rescale the spectrum to
/// [-1, 1], evaluate each Chebyshev polynomial on the eigenvalues, and transform back.
inline Tensor dense_spectral_conv(const Tensor& x, const Tensor& laplacian,
                                  const eegrl::ChebLayerWeights& w) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(laplacian));
  const Eigen::MatrixXd u = es.eigenvectors();
  const Eigen::VectorXd lam = es.eigenvalues();
  const double lmax = lam.maxCoeff();
  const std::size_t n = laplacian.rows();
  const std::size_t order = w.order();

  Eigen::MatrixXd xin = to_eigen(x);
  Eigen::MatrixXd xhat = u.transpose() * xin;
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, w.out_channels());
  for (std::size_t k = 0; k < order; ++k) {
    Eigen::VectorXd tk(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double s = 2.0 * lam[i] / lmax - 1.0;
      tk[i] = std::cos(static_cast<double>(k) * std::acos(std::clamp(s, -1.0, 1.0)));
    }
    Eigen::MatrixXd theta(w.in_channels(), w.out_channels());
    for (std::size_t a = 0; a < w.in_channels(); ++a)
      for (std::size_t b = 0; b < w.out_channels(); ++b)
        theta(a, b) = w.block(k)[a * w.out_channels() + b];
    y += u * tk.asDiagonal() * xhat * theta;
  }
  Tensor out = Tensor::matrix(n, w.out_channels());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w.out_channels(); ++j) out.at(i, j) = y(i, j);
  return out;
}

}  // namespace oracle
