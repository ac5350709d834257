#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vlora/core/autograd.hpp"

namespace vlora {

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int probes = 0;
  std::string worst;  // "leaf[index]" of the worst probe

  bool ok(double tol = 1e-3) const { return probes > 0 && max_rel_err < tol; }
};

// Compares analytic gradients of a scalar-valued graph against central finite
// differences. `build_loss` must rebuild the graph from the current leaf
// values on every call; leaves are perturbed in place between calls.
template <typename T>
GradCheckResult check_gradients(const std::function<Var<T>()>& build_loss,
                                std::vector<std::pair<std::string, Var<T>>> leaves, Rng& rng,
                                int probes_per_leaf = 20, double step = 1e-5) {
  GradCheckResult res;
  for (auto& [name, leaf] : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  Var<T> loss = build_loss();
  loss.backward();

  for (auto& [name, leaf] : leaves) {
    const int64_t n = leaf.size();
    const int probes = static_cast<int>(std::min<int64_t>(probes_per_leaf, n));
    for (int k = 0; k < probes; ++k) {
      const int64_t idx =
          n <= probes_per_leaf ? k : static_cast<int64_t>(rng.below(static_cast<uint64_t>(n)));
      T& slot = leaf.value()[idx];
      const T orig = slot;
      slot = orig - static_cast<T>(step);
      const double f_minus = static_cast<double>(build_loss().scalar());
      slot = orig + static_cast<T>(step);
      const double f_plus = static_cast<double>(build_loss().scalar());
      slot = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double analytic = leaf.has_grad() ? static_cast<double>(leaf.grad()[idx]) : 0.0;
      const double abs_err = std::abs(analytic - numeric);
      const double denom = std::max(std::abs(analytic), std::abs(numeric));
      res.probes++;
      res.max_abs_err = std::max(res.max_abs_err, abs_err);
      // Tiny true gradients are compared absolutely; relative error there is
      // finite-difference noise, not implementation error.
      if (denom > 1e-6) {
        const double rel = abs_err / denom;
        if (rel > res.max_rel_err) {
          res.max_rel_err = rel;
          res.worst = name + "[" + std::to_string(idx) + "]";
        }
      } else if (abs_err > 1e-7) {
        if (1.0 > res.max_rel_err) res.worst = name + "[" + std::to_string(idx) + "]";
        res.max_rel_err = std::max(res.max_rel_err, 1.0);
      }
    }
  }
  return res;
}

}  // namespace vlora
