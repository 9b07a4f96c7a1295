#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bounds.hpp"
#include "errors.hpp"
#include "inference.hpp"
#include "nuisance.hpp"
#include "partition.hpp"
#include "rng.hpp"
#include "table.hpp"

namespace tiered {

/// What one scan step saw, for diagnostics.
struct S1SStep {
  std::size_t j = 0;  // units fitted on
  int stratum = 0;
  std::size_t batch_units = 0;
  Eigen::Matrix2d covariance;  // batch covariance of corrected values, before any ridge
  Eigen::Matrix2d t;           // stabilizing matrix applied
  bool ridge_applied = false;
};

struct S1SConfig {
  NuisanceConfig nuisance{};
  std::size_t initial_batch = 0;  // l; units 1..l seed the first fit
  std::uint64_t seed = 0;         // permutation stream
  double ridge = 0.0;
  std::size_t cold_refit_every = 250;  // propensity refits from zero this often
  std::size_t refit_every = 1;         // experimental: reuse a fit for several steps
  Contrast contrast = Contrast::benefit;
  std::function<void(const S1SStep&)> observer;  // called after every step
};

/// Running sums for one stratum: m = sum T psi_j, M = sum T, n = count.
struct StabilizerState {
  Eigen::Vector2d m = Eigen::Vector2d::Zero();
  Eigen::Matrix2d M = Eigen::Matrix2d::Zero();
  std::size_t n = 0;
  std::size_t ridge_steps = 0;
};

struct S1SResult {
  std::vector<BoundsEstimate> estimates;  // one per stratum, ascending id
  std::map<int, StabilizerState> states;
  std::vector<std::size_t> permutation;  // row order used for the scan
  std::uint64_t permutation_seed = 0;
  std::size_t steps = 0;
  std::size_t ridge_steps = 0;
  std::size_t nonconverged_fits = 0;
};

/// n^{-1/2} M (psi_hat - psi): approximately standard bivariate normal when
/// the stabilized estimator is centred at psi.
inline Eigen::Vector2d standardized_residual(const StabilizerState& s, const BoundsEstimate& est,
                                             double true_lower, double true_upper) {
  const Eigen::Vector2d diff(est.lower - true_lower, est.upper - true_upper);
  return s.M * diff / std::sqrt(static_cast<double>(s.n));
}

/// Stabilized one-step estimation with per-stratum 2x2 stabilizing matrices.
///
/// The rows are permuted once. For j = l, ..., n-1 the nuisance is fitted on
/// the first j rows; the next row's stratum x' receives the plug-in bounds
/// over batch units in x' plus the next row's out-of-sample correction,
/// weighted by the inverse square root of the covariance of the in-batch
/// corrected values. The final estimate is M^{-1} m with covariance n M^{-2}.
inline S1SResult s1s(const ObservationTable& data, const TierPartition& c, const S1SConfig& cfg) {
  const std::size_t n = data.rows();
  const std::size_t l = cfg.initial_batch;
  if (!(l > 0 && l < n)) throw ConfigError("initial batch size l must satisfy 0 < l < n");
  if (cfg.refit_every == 0 || cfg.cold_refit_every == 0)
    throw ConfigError("refit intervals must be positive");

  S1SResult res;
  res.permutation_seed = cfg.seed;
  res.permutation.resize(n);
  std::iota(res.permutation.begin(), res.permutation.end(), std::size_t{0});
  {
    auto eng = make_stream(cfg.seed, "s1s-permutation");
    std::shuffle(res.permutation.begin(), res.permutation.end(), eng);
  }
  const ObservationTable t = data.subset(res.permutation);

  const CompiledBasis pbasis(cfg.nuisance.propensity_basis, t);
  OutcomeAccumulator outcome(CompiledBasis(cfg.nuisance.outcome_basis, t));
  for (std::size_t i = 0; i < l; ++i) outcome.add(t, i);

  std::map<int, std::vector<std::size_t>> batch_rows;
  for (std::size_t i = 0; i < l; ++i) batch_rows[t.x[i]].push_back(i);
  for (int s : t.strata()) res.states[s];

  NuisancePair nuisance;
  bool have_fit = false;
  std::size_t fits = 0;
  for (std::size_t j = l; j < n; ++j) {
    if (!have_fit || (j - l) % cfg.refit_every == 0) {
      const bool cold = !have_fit || fits % cfg.cold_refit_every == 0;
      IrlsOptions opts = cfg.nuisance.irls;
      opts.check_rank = cold;
      const Eigen::VectorXd warm =
          have_fit ? nuisance.propensity_model.coefficients() : Eigen::VectorXd();
      nuisance.propensity_model = fit_propensity_prefix(t, j, cfg.nuisance.link, pbasis,
                                                        cfg.nuisance.clip, opts,
                                                        cold ? nullptr : &warm);
      nuisance.outcome_model = outcome.model();
      if (!nuisance.converged()) ++res.nonconverged_fits;
      have_fit = true;
      ++fits;
    }

    const int xs = t.x[j];
    auto& in_batch = batch_rows[xs];
    if (in_batch.size() < 2)
      throw DataError("stratum " + std::to_string(xs) +
                      " has fewer than 2 units in the batch; increase l");
    std::vector<std::size_t> rows = in_batch;
    rows.push_back(j);
    const auto p = predict_units(nuisance, t, rows, c, true);
    const std::size_t m = in_batch.size();

    Eigen::Vector2d plug = Eigen::Vector2d::Zero();
    std::vector<Eigen::Vector2d> corrected(m);
    for (std::size_t u = 0; u < m; ++u) {
      const Eigen::Vector2d b = unit_bounds(p, u, cfg.contrast);
      const auto rec = correction(p, u, t, c, cfg.contrast);
      plug += b;
      corrected[u] = b + Eigen::Vector2d(rec.d_lambda, rec.d_upsilon);
    }
    plug /= static_cast<double>(m);
    const auto next = correction(p, m, t, c, cfg.contrast);

    const Eigen::Matrix2d cov = sample_covariance(corrected);
    const auto inv = matrix_inv_sqrt(cov, cfg.ridge);
    auto& st = res.states[xs];
    if (inv.ridge_applied) {
      ++res.ridge_steps;
      ++st.ridge_steps;
    }
    st.m += inv.t * (plug + Eigen::Vector2d(next.d_lambda, next.d_upsilon));
    st.M += inv.t;
    ++st.n;
    ++res.steps;
    if (cfg.observer) cfg.observer({j, xs, m, cov, inv.t, inv.ridge_applied});

    // Unit j joins the batch for the next step.
    outcome.add(t, j);
    in_batch.push_back(j);
  }

  for (const auto& [stratum, st] : res.states) {
    if (st.n < 2)
      throw DataError("stratum " + std::to_string(stratum) + " absorbed only " +
                      std::to_string(st.n) +
                      " out-of-sample corrections (need 2); use more data or a smaller l");
    const Eigen::Matrix2d Minv = st.M.inverse();
    const Eigen::Vector2d psi = Minv * st.m;
    Eigen::Matrix2d omega = static_cast<double>(st.n) * Minv * Minv;
    omega(0, 1) = omega(1, 0) = 0.5 * (omega(0, 1) + omega(1, 0));
    BoundsEstimate e;
    e.stratum = stratum;
    e.method = Method::s1s;
    e.contrast = cfg.contrast;
    e.lower = psi[0];
    e.upper = psi[1];
    e.covariance = omega;
    e.n_units = st.n;
    if (st.ridge_steps > 0) e.add_flag("ridge_applied");
    if (res.nonconverged_fits > 0) e.add_flag("nonconverged_fits");
    mark_out_of_space(e);
    res.estimates.push_back(e);
  }
  return res;
}

}  // namespace tiered
