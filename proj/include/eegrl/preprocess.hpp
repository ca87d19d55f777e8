#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "eegrl/core.hpp"

namespace eegrl {

/// Second-order IIR notch (RBJ biquad), normalized so a0 = 1.
struct NotchFilter {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;

  static NotchFilter design(double freq, double rate, double q) {
    if (!(rate > 0.0)) throw ContractError("notch: sample rate must be positive");
    if (!(freq > 0.0) || freq >= rate / 2.0)
      throw ContractError("notch: frequency " + std::to_string(freq) + " Hz is not below Nyquist (" +
                          std::to_string(rate / 2.0) + " Hz)");
    if (!(q > 0.0)) throw ContractError("notch: quality factor must be positive");
    const double w0 = 2.0 * std::numbers::pi * freq / rate;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    NotchFilter f;
    f.b0 = 1.0 / a0;
    f.b1 = -2.0 * std::cos(w0) / a0;
    f.b2 = 1.0 / a0;
    f.a1 = -2.0 * std::cos(w0) / a0;
    f.a2 = (1.0 - alpha) / a0;
    return f;
  }

  double dc_gain() const { return (b0 + b1 + b2) / (1.0 + a1 + a2); }

  double pole_radius() const { return std::sqrt(std::abs(a2)); }

  /// Transposed direct form II starting from the steady state of a constant input `x0`.
  void run(std::span<double> x) const {
    if (x.empty()) return;
    const double g = dc_gain();
    double z1 = (g - b0) * x[0];
    double z2 = (b2 - a2 * g) * x[0];
    for (double& v : x) {
      const double in = v;
      const double y = b0 * in + z1;
      z1 = b1 * in - a1 * y + z2;
      z2 = b2 * in - a2 * y;
      v = y;
    }
  }
};

/// Zero-phase notch: forward and backward passes over an odd extension of the signal.
inline void notch_filter(std::span<double> signal, double freq, double rate, double q = 30.0) {
  const NotchFilter f = NotchFilter::design(freq, rate, q);
  const std::size_t n = signal.size();
  if (n < 2) return;
  const auto pad = static_cast<std::size_t>(std::ceil(std::log(1e8) / (1.0 - f.pole_radius())));
  const std::size_t mirrored = std::min(n - 1, pad);
  std::vector<double> ext(n + 2 * pad);
  for (std::size_t k = 0; k < pad; ++k) {
    const std::size_t m = std::min(k, mirrored - 1);
    ext[pad - 1 - k] = 2.0 * signal[0] - signal[m + 1];
    ext[pad + n + k] = 2.0 * signal[n - 1] - signal[n - 2 - m];
  }
  std::copy(signal.begin(), signal.end(), ext.begin() + static_cast<std::ptrdiff_t>(pad));
  f.run(ext);
  std::reverse(ext.begin(), ext.end());
  f.run(ext);
  std::reverse(ext.begin(), ext.end());
  std::copy_n(ext.begin() + static_cast<std::ptrdiff_t>(pad), n, signal.begin());
}

inline std::vector<double> notch_filtered(std::vector<double> signal, double freq, double rate, double q = 30.0) {
  notch_filter(signal, freq, rate, q);
  return signal;
}

/// In-place zero-mean, unit population-variance scaling. A constant signal becomes all
/// zeros and a warning is emitted.
inline void znorm(std::span<double> x) {
  if (x.empty()) return;
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  if (sd <= 1e-12 * std::max(1.0, std::abs(mean))) {
    warn("znorm: constant signal (zero standard deviation); output set to zeros");
    std::fill(x.begin(), x.end(), 0.0);
    return;
  }
  for (double& v : x) v = (v - mean) / sd;
}

inline std::vector<double> znormed(std::vector<double> x) {
  znorm(x);
  return x;
}

}  // namespace eegrl
