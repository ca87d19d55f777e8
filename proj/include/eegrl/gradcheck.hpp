#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>

#include "eegrl/tensor.hpp"

namespace eegrl {

struct GradCheckOptions {
  double h = 1e-6;
  // Fraction of entries per tensor to check; 1.0 checks every entry.
  double sample_fraction = 1.0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares the analytic gradients stored in each parameter's grad buffer against
/// central differences of `f`. The error per entry is
/// |analytic - numeric| / max(1, |numeric|).
inline GradCheckReport finite_diff_report(const std::function<double()>& f,
                                          std::span<Tensor* const> params,
                                          const GradCheckOptions& options = {}) {
  if (!(options.h >= 1e-6 && options.h <= 1e-4))
    throw ContractError("finite_diff_check: step h must lie in [1e-6, 1e-4]");

  Rng rng(options.seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p];
    if (!t.has_grad()) throw ContractError("finite_diff_check: parameter has no gradient buffer");
    const std::vector<double> analytic(std::as_const(t).grad().begin(),
                                       std::as_const(t).grad().end());
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (options.sample_fraction < 1.0 && coin(rng) >= options.sample_fraction) continue;
      const double saved = t[i];
      t[i] = saved + options.h;
      const double up = f();
      t[i] = saved - options.h;
      const double down = f();
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * options.h);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      ++report.checked;
      if (err > report.max_rel_error || !std::isfinite(err)) {
        report.max_rel_error = std::isfinite(err) ? err : INFINITY;
        report.worst_param = p;
        report.worst_index = i;
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

inline double finite_diff_check(const std::function<double()>& f, std::span<Tensor* const> params,
                                double h) {
  return finite_diff_report(f, params, GradCheckOptions{.h = h}).max_rel_error;
}

}  // namespace eegrl
