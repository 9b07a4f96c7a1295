#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bounds.hpp"
#include "errors.hpp"
#include "gaussian.hpp"
#include "nuisance.hpp"
#include "partition.hpp"
#include "rng.hpp"
#include "table.hpp"

namespace tiered {

/// Estimated (uncentered) influence-function pieces for one unit and their
/// combination with the individualized rules.
struct CorrectionRecord {
  std::size_t row = 0;
  std::vector<double> d_r;  // D^R_k, k = 1..K-1
  std::vector<double> d_s;  // D^S_k, k = 1..K-1
  double d_lambda = 0.0;
  double d_upsilon = 0.0;
};

/// Correction terms for unit u of `p` (which must carry propensities). With
/// h > 0 the hard rules are replaced by the gelu derivative at the same
/// arguments.
inline CorrectionRecord correction(const UnitPredictions& p, std::size_t u,
                                   const ObservationTable& t, const TierPartition& c,
                                   Contrast contrast = Contrast::benefit, double h = 0.0) {
  const std::size_t row = p.rows[u];
  const double pi = p.pi.at(u);
  if (!(pi > 0.0 && pi < 1.0))
    throw NumericalError("positivity violation: propensity " + std::to_string(pi) +
                         " at row " + std::to_string(row));
  const int a = t.a[row];
  const double y = t.y[row];
  const int ra = tier_arm(contrast), sa = survival_arm(contrast);
  const auto arm_weight = [&](int arm) {
    if (a != arm) return 0.0;
    return arm == 1 ? 1.0 / pi : 1.0 / (1.0 - pi);
  };
  const double wr = arm_weight(ra), ws = arm_weight(sa);
  const std::size_t tier = c.tier_of(y);

  CorrectionRecord rec;
  rec.row = row;
  rec.d_r.resize(p.inner);
  rec.d_s.resize(p.inner);
  for (std::size_t k = 1; k <= p.inner; ++k) {
    const double r = p.tier(u, ra, k), s = p.surv(u, sa, k);
    const double dr = wr == 0.0 ? 0.0 : wr * ((tier == k ? 1.0 : 0.0) - r);
    const double ds = ws == 0.0 ? 0.0 : ws * ((y > c.cut(k) ? 1.0 : 0.0) - s);
    rec.d_r[k - 1] = dr;
    rec.d_s[k - 1] = ds;
    const double lam = h > 0.0 ? gelu_derivative(r + s - 1.0, h) : (lambda_rule(r, s) ? 1.0 : 0.0);
    const double ups = h > 0.0 ? gelu_derivative(r - s, h) : (upsilon_rule(r, s) ? 1.0 : 0.0);
    rec.d_lambda += (dr + ds) * lam;
    rec.d_upsilon += dr - (dr - ds) * ups;
  }
  return rec;
}

template <Nuisance N>
CorrectionRecord eif_components(const N& nuisance, const ObservationTable& t, std::size_t row,
                                const TierPartition& c, Contrast contrast = Contrast::benefit) {
  const std::size_t rows[] = {row};
  return correction(predict_units(nuisance, t, rows, c, true), 0, t, c, contrast);
}

/// Corrected per-unit values (Lambda_i + dLambda_i, Upsilon_i + dUpsilon_i).
inline std::vector<Eigen::Vector2d> corrected_values(const UnitPredictions& p,
                                                     const ObservationTable& t,
                                                     const TierPartition& c, Contrast contrast,
                                                     double h = 0.0) {
  std::vector<Eigen::Vector2d> v(p.size());
  for (std::size_t u = 0; u < p.size(); ++u) {
    const auto rec = correction(p, u, t, c, contrast, h);
    v[u] = unit_bounds(p, u, contrast, h) + Eigen::Vector2d(rec.d_lambda, rec.d_upsilon);
  }
  return v;
}

/// One-step corrected bounds on held-out data: plug-in plus the stratum mean
/// of the corrections, with covariance Cov(corrected values) / |J(x)|. The
/// nuisance must have been fitted on data disjoint from `eval_data`.
template <Nuisance N>
BoundsEstimate one_step(const N& nuisance, const ObservationTable& eval_data, int stratum,
                        const TierPartition& c, Contrast contrast = Contrast::benefit) {
  const auto rows = detail::stratum_rows(eval_data, stratum);
  if (rows.size() < 2)
    throw NumericalError("stratum " + std::to_string(stratum) +
                         " needs at least 2 evaluation units for a covariance");
  const auto p = predict_units(nuisance, eval_data, rows, c, true);
  auto e = detail::mean_estimate(corrected_values(p, eval_data, c, contrast), stratum,
                                 Method::one_step, contrast);
  detail::flag_nuisance(nuisance, e);
  mark_out_of_space(e);
  return e;
}

/// One-step correction of the gelu-smoothed surrogate bounds.
template <Nuisance N>
BoundsEstimate one_step_gelu(const N& nuisance, const ObservationTable& eval_data, int stratum,
                             const TierPartition& c, double h,
                             Contrast contrast = Contrast::benefit) {
  if (!(h > 0.0)) throw ConfigError("gelu smoothing h must be > 0");
  const auto rows = detail::stratum_rows(eval_data, stratum);
  if (rows.size() < 2)
    throw NumericalError("stratum " + std::to_string(stratum) +
                         " needs at least 2 evaluation units for a covariance");
  const auto p = predict_units(nuisance, eval_data, rows, c, true);
  auto e = detail::mean_estimate(corrected_values(p, eval_data, c, contrast, h), stratum,
                                 Method::one_step_gelu, contrast);
  e.smoothing = h;
  detail::flag_nuisance(nuisance, e);
  mark_out_of_space(e);
  return e;
}

/// Seeded train/evaluation split; `train_fraction` of the rows go to training.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_sample(
    std::size_t n, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("split fraction must lie in (0, 1)");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto eng = make_stream(seed, "split");
  std::shuffle(idx.begin(), idx.end(), eng);
  const auto cut = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
  std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut));
  std::vector<std::size_t> eval(idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end());
  std::sort(train.begin(), train.end());
  std::sort(eval.begin(), eval.end());
  return {std::move(train), std::move(eval)};
}

struct InvSqrtResult {
  Eigen::Matrix2d t;
  bool ridge_applied = false;
};

/// (sigma + ridge * I)^{-1/2} for a symmetric PSD 2x2 matrix, through its
/// closed-form eigendecomposition. Eigenvalues under 1e-8 * trace / 2 are
/// lifted to that floor and reported through ridge_applied.
inline InvSqrtResult matrix_inv_sqrt(const Eigen::Matrix2d& sigma, double ridge = 0.0) {
  if (!(ridge >= 0.0)) throw ConfigError("ridge must be >= 0");
  if (!sigma.allFinite()) throw NumericalError("covariance has non-finite entries");
  const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
  if (std::abs(sigma(0, 1) - sigma(1, 0)) > 1e-12 * scale)
    throw NumericalError("matrix is not symmetric");
  Eigen::Matrix2d s = sigma;
  s(0, 1) = s(1, 0) = 0.5 * (sigma(0, 1) + sigma(1, 0));
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig;
  eig.computeDirect(s);
  Eigen::Vector2d vals = eig.eigenvalues();
  if (vals.minCoeff() < -1e-12 * scale) throw NumericalError("matrix is not positive semidefinite");
  vals.array() += ridge;
  const double floor = std::max(1e-8 * vals.sum() / 2.0, 1e-300);
  InvSqrtResult out;
  for (int k = 0; k < 2; ++k) {
    if (vals[k] < floor) {
      vals[k] = floor;
      out.ridge_applied = true;
    }
  }
  const Eigen::Matrix2d& v = eig.eigenvectors();
  out.t = v * vals.cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose();
  return out;
}

struct UncertaintyRegion {
  int stratum = 0;
  double lo = 0.0;
  double hi = 0.0;
  double level = 0.95;
  double s_hat = 0.0;
  std::size_t mc_draws = 0;
  std::vector<std::string> flags;
};

/// Empirical quantile with linear interpolation between order statistics.
inline double empirical_quantile(std::vector<double> v, double p) {
  if (v.empty()) throw NumericalError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Region [lower - s, upper + s] with s the (1 - (1 - level) / 2) quantile of
/// max{s_L, -s_U} for (s_L, s_U) ~ N(0, covariance).
inline UncertaintyRegion uncertainty_region(const BoundsEstimate& est, double level = 0.95,
                                            std::size_t draws = 100000, std::uint64_t seed = 0) {
  if (!est.covariance) throw NumericalError("estimate carries no covariance");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must lie in (0, 1)");
  if (draws == 0) throw ConfigError("need at least one Monte Carlo draw");
  const Eigen::Matrix2d& omega = *est.covariance;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig;
  eig.computeDirect(0.5 * (omega + omega.transpose()));
  if (eig.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, omega.cwiseAbs().maxCoeff()))
    throw NumericalError("covariance is not positive semidefinite");
  const Eigen::Matrix2d root =
      eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

  auto eng = make_stream(seed, "uncertainty", static_cast<std::uint64_t>(est.stratum));
  std::normal_distribution<double> z;
  std::vector<double> stat(draws);
  for (auto& s : stat) {
    const Eigen::Vector2d e(z(eng), z(eng));
    const Eigen::Vector2d d = root * e;
    s = std::max(d[0], -d[1]);
  }
  UncertaintyRegion r;
  r.stratum = est.stratum;
  r.level = level;
  r.mc_draws = draws;
  r.s_hat = empirical_quantile(std::move(stat), 1.0 - (1.0 - level) / 2.0);
  r.lo = est.lower - r.s_hat;
  r.hi = est.upper + r.s_hat;
  if (draws < 1000) r.flags.push_back("few_draws");
  return r;
}

/// Per-bound Wald interval check: is `truth` inside estimate +- z * se?
inline std::pair<bool, bool> wald_covers(const BoundsEstimate& est, double true_lower,
                                         double true_upper, double level = 0.95) {
  if (!est.covariance) return {false, false};
  const double z = normal_quantile(1.0 - (1.0 - level) / 2.0);
  const double se_lo = std::sqrt(std::max(0.0, (*est.covariance)(0, 0)));
  const double se_hi = std::sqrt(std::max(0.0, (*est.covariance)(1, 1)));
  return {std::abs(est.lower - true_lower) <= z * se_lo,
          std::abs(est.upper - true_upper) <= z * se_hi};
}

}  // namespace tiered
