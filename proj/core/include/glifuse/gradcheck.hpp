#pragma once

// Finite-difference verification of reverse-mode gradients. Runs in
// 64-bit; central differences with per-coordinate step
// h = 1e-5 * max(1, |x|), reporting the max over coordinates of
// |analytic - numeric| / max(1, |numeric|).

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "glifuse/tensor.hpp"

namespace glifuse {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_leaf = 0;
  std::size_t worst_coord = 0;
  double tolerance = 0.0;

  bool passed() const { return max_rel_error < tolerance; }
};

// `make_loss` must rebuild a scalar loss from the current values of
// `leaves` on every invocation.
inline GradCheckReport grad_check(
    const std::function<Tensor<double>()>& make_loss,
    std::vector<Tensor<double>> leaves, double tol = 1e-4) {
  GradCheckReport report;
  report.tolerance = tol;

  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  Tensor<double> loss = make_loss();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& leaf : leaves) {
    analytic.push_back(leaf.grad());
  }

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& values = leaves[li].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double x = values[i];
      const double h = 1e-5 * std::max(1.0, std::abs(x));
      values[i] = x + h;
      const double up = make_loss().item();
      values[i] = x - h;
      const double down = make_loss().item();
      values[i] = x;
      const double numeric = (up - down) / (2.0 * h);
      const double rel = std::abs(analytic[li][i] - numeric) /
                         std::max(1.0, std::abs(numeric));
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_leaf = li;
        report.worst_coord = i;
      }
    }
  }
  return report;
}

}  // namespace glifuse
