#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "periscope/tensor.hpp"

// Shared finite-difference gradient checking helpers. `f` must rebuild its
// graph on every call (tensors are write-once) and return a scalar.

inline std::vector<double> numeric_grad(const std::function<periscope::TensorPtr()>& f,
                                        const periscope::TensorPtr& t, double h = 1e-5) {
  std::vector<double> g(t->data.size());
  for (size_t i = 0; i < t->data.size(); ++i) {
    const double keep = t->data[i];
    t->data[i] = keep + h;
    const double up = f()->data[0];
    t->data[i] = keep - h;
    const double dn = f()->data[0];
    t->data[i] = keep;
    g[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

/// Symmetric relative error: |a-n| / max(eps, |a|+|n|).
inline double max_rel_err(const std::vector<double>& analytic,
                          const std::vector<double>& numeric, double eps = 1e-6) {
  double worst = 0.0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max(eps, std::abs(analytic[i]) + std::abs(numeric[i]));
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

/// Runs f once, backprops, and compares t's analytic gradient against central
/// differences. Returns the worst relative error.
inline double gradcheck(const std::function<periscope::TensorPtr()>& f,
                        const periscope::TensorPtr& t, double h = 1e-5) {
  auto loss = f();
  loss->backward();
  std::vector<double> analytic = t->grad;
  return max_rel_err(analytic, numeric_grad(f, t, h));
}
