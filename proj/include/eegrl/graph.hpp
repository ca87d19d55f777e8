#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "eegrl/tensor.hpp"

namespace eegrl {

/// Fixed fully connected pattern: zero diagonal, ones elsewhere.
class BaseAdjacency {
 public:
  explicit BaseAdjacency(std::size_t n_nodes = 64) : matrix_(Tensor::matrix(n_nodes, n_nodes, 1.0)) {
    for (std::size_t i = 0; i < n_nodes; ++i) matrix_.at(i, i) = 0.0;
  }

  std::size_t nodes() const { return matrix_.rows(); }
  double operator()(std::size_t i, std::size_t j) const { return matrix_.at(i, j); }
  const Tensor& matrix() const { return matrix_; }
  std::size_t edge_count() const { return nodes() * (nodes() - 1); }

 private:
  Tensor matrix_;
};

/// Trainable real-valued multiplier on the base adjacency. Frozen entries (pruned edges and
/// the structural zeros of the base pattern) hold exactly 0 and never receive gradient.
class AdjacencyMask {
 public:
  AdjacencyMask() = default;

  explicit AdjacencyMask(const BaseAdjacency& base)
      : values_(base.matrix()), frozen_(base.nodes() * base.nodes(), 0) {
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (base.matrix()[i] == 0.0) frozen_[i] = 1;
    base_count_ = base.edge_count();
  }

  /// Builds a mask over an arbitrary n×n pattern; `frozen` marks entries outside the live set.
  static AdjacencyMask from_entries(std::size_t n, std::vector<double> values,
                                    std::vector<std::uint8_t> frozen, std::size_t base_count) {
    if (values.size() != n * n || frozen.size() != n * n)
      throw DimensionError("AdjacencyMask::from_entries: expected " + std::to_string(n * n) +
                           " entries");
    AdjacencyMask m;
    m.values_ = Tensor({n, n}, std::move(values));
    m.frozen_ = std::move(frozen);
    m.base_count_ = base_count;
    m.enforce_frozen();
    return m;
  }

  std::size_t nodes() const { return values_.empty() ? 0 : values_.rows(); }
  Tensor& values() { return values_; }
  const Tensor& values() const { return values_; }

  bool frozen(std::size_t i, std::size_t j) const { return frozen_[i * nodes() + j] != 0; }
  bool frozen_flat(std::size_t k) const { return frozen_[k] != 0; }
  const std::vector<std::uint8_t>& frozen_flags() const { return frozen_; }

  void freeze_flat(std::size_t k) {
    frozen_[k] = 1;
    values_[k] = 0.0;
  }

  /// Re-applies the hard zero (and gradient gate) on frozen entries.
  void enforce_frozen() {
    const bool has_grad = values_.has_grad();
    for (std::size_t k = 0; k < frozen_.size(); ++k) {
      if (!frozen_[k]) continue;
      values_[k] = 0.0;
      if (has_grad) values_.grad()[k] = 0.0;
    }
  }

  std::size_t live_count() const {
    std::size_t c = 0;
    for (auto f : frozen_) c += f ? 0 : 1;
    return c;
  }

  std::size_t nonzero_count() const {
    std::size_t c = 0;
    for (double v : values_.data()) c += v != 0.0 ? 1 : 0;
    return c;
  }

  std::size_t base_count() const { return base_count_; }

  /// Fraction of nonzero mask entries over nonzero base entries.
  double density() const {
    return static_cast<double>(nonzero_count()) / static_cast<double>(base_count_);
  }

 private:
  Tensor values_;
  std::vector<std::uint8_t> frozen_;
  std::size_t base_count_ = 0;
};

inline Tensor effective_adjacency(const BaseAdjacency& base, const AdjacencyMask& mask) {
  if (base.nodes() != mask.nodes())
    throw DimensionError("effective_adjacency: base has " + std::to_string(base.nodes()) +
                         " nodes, mask has " + std::to_string(mask.nodes()));
  Tensor a = base.matrix();
  for (std::size_t k = 0; k < a.size(); ++k)
    a[k] = mask.frozen_flat(k) ? 0.0 : a[k] * mask.values()[k];
  return a;
}

struct NormalizedLaplacian {
  Tensor matrix;
  // Nodes whose (signed) degree was not positive; their D^{-1/2} entry is taken as 0.
  std::vector<std::size_t> isolated;
  std::vector<double> inv_sqrt_degree;
};

/// L = I - D^{-1/2} A D^{-1/2} with D_ii = sum_j A_ij.
inline NormalizedLaplacian normalized_laplacian(const Tensor& adj) {
  if (adj.rank() != 2 || adj.rows() != adj.cols())
    throw DimensionError("normalized_laplacian: adjacency must be square, got " +
                         shape_string(adj.shape()));
  const std::size_t n = adj.rows();
  NormalizedLaplacian out;
  out.inv_sqrt_degree.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += adj.at(i, j);
    if (d > 0.0)
      out.inv_sqrt_degree[i] = 1.0 / std::sqrt(d);
    else
      out.isolated.push_back(i);
  }
  if (!out.isolated.empty()) {
    std::ostringstream os;
    os << "normalized_laplacian: " << out.isolated.size()
       << " node(s) with non-positive degree treated as isolated (first: " << out.isolated.front()
       << ")";
    warn(os.str());
  }
  const auto& s = out.inv_sqrt_degree;
  out.matrix = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.matrix.at(i, j) = (i == j ? 1.0 : 0.0) - s[i] * adj.at(i, j) * s[j];
  return out;
}

/// Gradient of a scalar loss with respect to the adjacency, given dLoss/dL.
inline Tensor normalized_laplacian_backward(const Tensor& adj, const NormalizedLaplacian& lap,
                                            const Tensor& d_lap) {
  const std::size_t n = adj.rows();
  const auto& s = lap.inv_sqrt_degree;
  Tensor d_adj = Tensor::matrix(n, n);
  std::vector<double> ds(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double g = -d_lap.at(i, j);  // gradient w.r.t. N = S A S
      d_adj.at(i, j) += g * s[i] * s[j];
      ds[i] += g * adj.at(i, j) * s[j];
      ds[j] += g * s[i] * adj.at(i, j);
    }
  for (std::size_t i = 0; i < n; ++i) {
    if (s[i] == 0.0) continue;
    // s = d^{-1/2}  =>  ds/dd = -1/2 d^{-3/2} = -1/2 s^3
    const double dd = ds[i] * (-0.5 * s[i] * s[i] * s[i]);
    for (std::size_t j = 0; j < n; ++j) d_adj.at(i, j) += dd;
  }
  return d_adj;
}

struct PowerIterationResult {
  double eigenvalue = 0.0;
  std::vector<double> vector;
  bool converged = false;
  std::size_t iterations = 0;
};

/// Dominant eigenpair by power iteration with a Rayleigh-quotient estimate. Converged once
/// the residual ||Mv - lambda v|| is at most tol * max(1, |lambda|). On clustered spectra the
/// vector can lag long after the estimate has stopped moving; an estimate that changes by
/// less than tol^2 * max(1, |lambda|) for `patience` consecutive steps is also accepted.
inline PowerIterationResult power_iteration(const Tensor& m, double tol = 1e-8,
                                            std::size_t max_iter = 10000,
                                            std::size_t patience = 200) {
  const std::size_t n = m.rows();
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  Rng rng(0x5eedULL);
  std::uniform_real_distribution<double> dist(0.5, 1.5);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  v.normalize();

  const auto mat = m.view();
  PowerIterationResult r;
  Eigen::VectorXd mv = mat * v;
  double lambda = v.dot(mv);
  std::size_t settled_streak = 0;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    const double norm = mv.norm();
    r.iterations = it;
    if (norm == 0.0 || !std::isfinite(norm)) {
      lambda = 0.0;
      break;
    }
    v = mv / norm;
    mv.noalias() = mat * v;
    const double next = v.dot(mv);
    const double scale = std::max(1.0, std::abs(next));
    const double residual = (mv - next * v).norm();
    settled_streak = std::abs(next - lambda) <= tol * tol * scale ? settled_streak + 1 : 0;
    lambda = next;
    if (residual <= tol * scale || settled_streak > patience) {
      r.converged = true;
      break;
    }
  }
  r.eigenvalue = lambda;
  r.vector.assign(v.data(), v.data() + v.size());
  return r;
}

struct PowerIterationOptions {
  double tol = 1e-8;
  std::size_t max_iter = 10000;
  double fallback_lambda = 2.0;
};

/// L~ = 2 L / lambda_max - I.
struct ScaledLaplacian {
  Tensor matrix;
  double lambda_max = 2.0;
  // True when power iteration failed or found a non-positive dominant eigenvalue and the
  // fallback lambda_max was used instead.
  bool fallback = false;
  // Right and left dominant eigenvectors of L, used by the backward pass.
  std::vector<double> right;
  std::vector<double> left;
};

inline bool is_symmetric(const Tensor& m, double tol = 1e-12) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j)
      if (std::abs(m.at(i, j) - m.at(j, i)) > tol) return false;
  return true;
}

inline ScaledLaplacian scale_laplacian(const Tensor& lap, const PowerIterationOptions& opts = {}) {
  if (lap.rank() != 2 || lap.rows() != lap.cols())
    throw DimensionError("scale_laplacian: Laplacian must be square");
  const std::size_t n = lap.rows();
  ScaledLaplacian out;
  const auto right = power_iteration(lap, opts.tol, opts.max_iter);
  if (!right.converged || !(right.eigenvalue > 1e-12)) {
    out.fallback = true;
    out.lambda_max = opts.fallback_lambda;
    std::ostringstream os;
    os << "scale_laplacian: power iteration "
       << (right.converged ? "found non-positive lambda_max " : "did not converge, last estimate ")
       << right.eigenvalue << "; falling back to lambda_max = " << opts.fallback_lambda;
    warn(os.str());
  } else {
    out.lambda_max = right.eigenvalue;
    out.right = right.vector;
    if (is_symmetric(lap)) {
      out.left = right.vector;
    } else {
      const auto left = power_iteration(transpose(lap), opts.tol, opts.max_iter);
      out.left = left.vector;
    }
  }
  out.matrix = lap;
  const double scale = 2.0 / out.lambda_max;
  for (double& v : out.matrix.data()) v *= scale;
  for (std::size_t i = 0; i < n; ++i) out.matrix.at(i, i) -= 1.0;
  return out;
}

/// dLoss/dL given dLoss/dL~, including the dependence of lambda_max on L
/// (d lambda / dL_ij = u_i v_j / (u . v) for left/right eigenvectors u, v).
inline Tensor scale_laplacian_backward(const Tensor& lap, const ScaledLaplacian& scaled,
                                       const Tensor& d_scaled) {
  const std::size_t n = lap.rows();
  const double lambda = scaled.lambda_max;
  Tensor d_lap = d_scaled;
  for (double& v : d_lap.data()) v *= 2.0 / lambda;
  if (scaled.fallback || scaled.right.empty()) return d_lap;

  double inner = 0.0;
  for (std::size_t k = 0; k < lap.size(); ++k) inner += d_scaled[k] * lap[k];
  const double d_lambda = -2.0 / (lambda * lambda) * inner;
  double uv = 0.0;
  for (std::size_t i = 0; i < n; ++i) uv += scaled.left[i] * scaled.right[i];
  if (std::abs(uv) < 1e-12) return d_lap;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      d_lap.at(i, j) += d_lambda * scaled.left[i] * scaled.right[j] / uv;
  return d_lap;
}

/// Full chain mask -> effective adjacency -> normalized Laplacian -> scaled Laplacian.
struct GraphOperator {
  Tensor adjacency;
  NormalizedLaplacian laplacian;
  ScaledLaplacian scaled;
};

inline GraphOperator build_graph(const BaseAdjacency& base, const AdjacencyMask& mask,
                                 const PowerIterationOptions& opts = {}) {
  GraphOperator g;
  g.adjacency = effective_adjacency(base, mask);
  g.laplacian = normalized_laplacian(g.adjacency);
  g.scaled = scale_laplacian(g.laplacian.matrix, opts);
  return g;
}

/// Adds dLoss/dmask into the mask's gradient buffer given dLoss/dL~.
inline void graph_backward(const BaseAdjacency& base, AdjacencyMask& mask, const GraphOperator& g,
                           const Tensor& d_scaled) {
  const Tensor d_lap = scale_laplacian_backward(g.laplacian.matrix, g.scaled, d_scaled);
  const Tensor d_adj = normalized_laplacian_backward(g.adjacency, g.laplacian, d_lap);
  auto grad = mask.values().grad();
  for (std::size_t k = 0; k < grad.size(); ++k)
    if (!mask.frozen_flat(k)) grad[k] += d_adj[k] * base.matrix()[k];
}

// Text format:
//   # adjacency-mask nodes=<n> live=<k> base=<b> density=<d>
//   <row> <col> <value>        (one line per live entry; absent entries are frozen)
inline void write_mask(std::ostream& os, const AdjacencyMask& mask) {
  const std::size_t n = mask.nodes();
  os << "# adjacency-mask nodes=" << n << " live=" << mask.live_count()
     << " base=" << mask.base_count() << " density=" << std::setprecision(17) << mask.density()
     << '\n';
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (!mask.frozen(i, j)) os << i << ' ' << j << ' ' << mask.values().at(i, j) << '\n';
}

inline AdjacencyMask read_mask(std::istream& is) {
  std::string header;
  if (!std::getline(is, header) || header.rfind("# adjacency-mask", 0) != 0)
    throw ParseError("mask file: missing '# adjacency-mask' header");
  std::size_t n = 0, live = 0, base = 0;
  double density = -1.0;
  std::istringstream hs(header.substr(16));
  std::string field;
  while (hs >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw ParseError("mask file: bad header field '" + field + "'");
    const std::string key = field.substr(0, eq);
    const std::string val = field.substr(eq + 1);
    if (key == "nodes") n = std::stoul(val);
    else if (key == "live") live = std::stoul(val);
    else if (key == "base") base = std::stoul(val);
    else if (key == "density") density = std::stod(val);
  }
  if (n == 0 || base == 0) throw ParseError("mask file: header must give nodes and base");
  std::vector<double> values(n * n, 0.0);
  std::vector<std::uint8_t> frozen(n * n, 1);
  std::size_t row = 0, col = 0, count = 0;
  double value = 0.0;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (!(ls >> row >> col >> value) || row >= n || col >= n)
      throw ParseError("mask file: bad entry on line " + std::to_string(line_no));
    values[row * n + col] = value;
    frozen[row * n + col] = 0;
    ++count;
  }
  if (count != live)
    throw ParseError("mask file: header declares " + std::to_string(live) + " live entries, found " +
                     std::to_string(count));
  auto mask = AdjacencyMask::from_entries(n, std::move(values), std::move(frozen), base);
  if (density >= 0.0 && std::abs(mask.density() - density) > 1e-9)
    throw ParseError("mask file: density in header does not match entries");
  return mask;
}

}  // namespace eegrl
