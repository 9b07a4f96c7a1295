#pragma once

#include <cmath>
#include <numbers>

#include <boost/math/special_functions/erf.hpp>

namespace tiered {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) * (0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
}

inline double normal_quantile(double p) {
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

/// Smooth surrogate for max{0, u}: u * Phi(u / h).
inline double gelu(double u, double h) { return u * normal_cdf(u / h); }

/// d/du gelu(u, h); replaces the hard 0/1 rule in smoothed corrections.
inline double gelu_derivative(double u, double h) {
  const double t = u / h;
  return normal_cdf(t) + t * normal_pdf(t);
}

}  // namespace tiered
