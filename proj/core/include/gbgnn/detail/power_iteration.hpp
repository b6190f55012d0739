#pragma once

#include <cmath>
#include <random>
#include <string>

#include "gbgnn/error.hpp"
#include "gbgnn/types.hpp"

namespace gbgnn {

template <class Apply, class ApplyTranspose>
double operator_norm_of(Index n, Apply&& apply, ApplyTranspose&& apply_t,
                        double tol) {
  if (n < 1) throw invalid_argument("operator_norm: dimension must be >= 1");
  // Fixed-seed start vector; a constant vector can be orthogonal to the top
  // singular direction.
  std::mt19937_64 rng(0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unif(0.5, 1.5);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = unif(rng);
  v.normalize();

  double previous = -1.0;
  double estimate = 0.0;
  const Index max_iterations = 10 * n;
  for (Index it = 0; it < max_iterations; ++it) {
    const Vector w = apply(v);
    estimate = w.norm();  // sqrt of the Rayleigh quotient of P^T P
    if (estimate == 0.0) return 0.0;
    Vector u = apply_t(w);
    const double u_norm = u.norm();
    if (u_norm == 0.0) return 0.0;
    v = u / u_norm;
    if (previous >= 0.0 && std::abs(estimate - previous) <= tol * estimate) {
      return estimate;
    }
    previous = estimate;
  }
  throw numeric_error("operator_norm: no convergence after " +
                      std::to_string(max_iterations) +
                      " iterations; last estimate " + std::to_string(estimate));
}

}  // namespace gbgnn
