#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "eegrl/core.hpp"

namespace eegrl {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixView = Eigen::Map<RowMajorMatrix>;
using ConstMatrixView = Eigen::Map<const RowMajorMatrix>;

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major float64 tensor with an optional gradient buffer of the same shape.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size())
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged rows in Tensor::from_rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const {
    require_rank2();
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank2();
    return shape_[1];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * shape_[1], shape_[1]}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * shape_[1], shape_[1]};
  }

  bool has_grad() const { return !grad_.empty(); }

  /// Gradient accumulator; allocated (zeroed) on first access.
  std::span<double> grad() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
    return grad_;
  }
  std::span<const double> grad() const { return grad_; }

  void zero_grad() { grad_.assign(data_.size(), 0.0); }
  void drop_grad() { grad_.clear(); }

  void reshape(std::vector<std::size_t> shape) {
    if (element_count(shape) != data_.size())
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    shape_ = std::move(shape);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  MatrixView view() {
    require_rank2();
    return MatrixView(data_.data(), static_cast<Eigen::Index>(shape_[0]),
                      static_cast<Eigen::Index>(shape_[1]));
  }
  ConstMatrixView view() const {
    require_rank2();
    return ConstMatrixView(data_.data(), static_cast<Eigen::Index>(shape_[0]),
                           static_cast<Eigen::Index>(shape_[1]));
  }
  MatrixView grad_view() {
    require_rank2();
    auto g = grad();
    return MatrixView(g.data(), static_cast<Eigen::Index>(shape_[0]),
                      static_cast<Eigen::Index>(shape_[1]));
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  void require_rank2() const {
    if (shape_.size() != 2)
      throw DimensionError("expected a matrix, got shape " + shape_string(shape_));
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

inline ConstMatrixView as_matrix(std::span<const double> data, std::size_t rows, std::size_t cols) {
  if (data.size() != rows * cols) throw DimensionError("matrix view size mismatch");
  return ConstMatrixView(data.data(), static_cast<Eigen::Index>(rows),
                         static_cast<Eigen::Index>(cols));
}

inline MatrixView as_matrix(std::span<double> data, std::size_t rows, std::size_t cols) {
  if (data.size() != rows * cols) throw DimensionError("matrix view size mismatch");
  return MatrixView(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, std::string_view what) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(what) + ": shape " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

/// C = A·B for A (m×k) and B (k×n).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  Tensor c = Tensor::matrix(a.rows(), b.cols());
  c.view().noalias() = a.view() * b.view();
  return c;
}

/// Accumulates dA += dC·Bᵀ and dB += Aᵀ·dC into the operands' gradient buffers.
inline void matmul_backward(Tensor& a, Tensor& b, const Tensor& dc) {
  if (dc.rank() != 2 || dc.rows() != a.rows() || dc.cols() != b.cols())
    throw DimensionError("matmul_backward: upstream gradient has shape " +
                         shape_string(dc.shape()));
  a.grad_view().noalias() += dc.view() * b.view().transpose();
  b.grad_view().noalias() += a.view().transpose() * dc.view();
}

inline Tensor transpose(const Tensor& a) {
  Tensor t = Tensor::matrix(a.cols(), a.rows());
  t.view() = a.view().transpose();
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Glorot/Xavier uniform fill for a fan_in × fan_out weight block.
inline void glorot_uniform(std::span<double> out, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : out) v = dist(rng);
}

}  // namespace eegrl
