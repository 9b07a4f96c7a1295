#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss.hpp>

#include "basis.hpp"
#include "errors.hpp"
#include "gaussian.hpp"
#include "nuisance.hpp"
#include "parallel.hpp"
#include "partition.hpp"
#include "rng.hpp"
#include "table.hpp"

namespace tiered {

/// The benchmark structural model:
///   v, W1 ~ Unif(-1, 1); X = 1[v > 0]; W2 = 1[v^2 > 0.25]
///   A = 1[exposure_scale (W1 + 2X - 1) + u_A > 0],  u_A ~ N(0, 1)
///   Y = (2A - 1) + (W1 + X)(1 + 0.5(2A - 1)) - immunity A W2 (W1 + X + 2) + u_Y,
///   u_Y ~ N(0, sigma^2), shared by both potential outcomes.
struct ScmParams {
  double sigma = 2.0;
  double exposure_scale = 0.5;
  double immunity = 1.0;
};

inline TierPartition benchmark_partition() { return TierPartition({-1.42, 1.09}); }

/// E[Y | W1, W2, X, A = a]. With full immunity the W2 = 1 branch is written
/// in its reduced form 0.5 (W1 + X) - 1 so both arms agree bitwise.
inline double scm_mean(double w1, double w2, double x, int a, const ScmParams& p = {}) {
  if (w2 == 1.0 && p.immunity == 1.0) return 0.5 * (w1 + x) - 1.0;
  const double s = 2.0 * a - 1.0;
  return s + (w1 + x) * (1.0 + 0.5 * s) - p.immunity * a * w2 * (w1 + x + 2.0);
}

inline double scm_propensity(double w1, double x, const ScmParams& p = {}) {
  return normal_cdf(p.exposure_scale * (w1 + 2.0 * x - 1.0));
}

struct SimulatedData {
  ObservationTable observed;
  OracleOutcomes oracle;
};

/// n i.i.d. draws from the structural model; deterministic in `seed`.
inline SimulatedData simulate(std::size_t n, std::uint64_t seed, const ScmParams& p = {}) {
  if (n < 1) throw ConfigError("simulate needs n >= 1");
  auto eng = make_stream(seed, "data");
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::normal_distribution<double> gauss;
  SimulatedData d;
  d.observed.covariate_names = {"w1", "w2"};
  d.observed.w.reserve(2 * n);
  d.oracle.y0.reserve(n);
  d.oracle.y1.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = unif(eng);
    const double w1 = unif(eng);
    const double ua = gauss(eng);
    const double uy = p.sigma * gauss(eng);
    const int x = v > 0.0 ? 1 : 0;
    const double w2 = v * v > 0.25 ? 1.0 : 0.0;
    const int a = p.exposure_scale * (w1 + 2.0 * x - 1.0) + ua > 0.0 ? 1 : 0;
    const double y0 = scm_mean(w1, w2, x, 0, p) + uy;
    const double y1 = scm_mean(w1, w2, x, 1, p) + uy;
    const double wrow[] = {w1, w2};
    d.observed.push_back(wrow, x, a, a ? y1 : y0);
    d.oracle.y0.push_back(y0);
    d.oracle.y1.push_back(y1);
  }
  return d;
}

/// Closed-form nuisance of the structural model, usable wherever a fitted
/// NuisancePair is (the table needs covariates named w1 and w2).
class ScmTruth {
 public:
  ScmTruth(const ObservationTable& layout, ScmParams p = {}, ClipBounds clip = {})
      : p_(p), clip_(clip) {
    const auto i1 = layout.covariate_index("w1");
    const auto i2 = layout.covariate_index("w2");
    if (!i1 || !i2) throw DataError("structural-model truth needs covariates w1 and w2");
    w1_ = *i1;
    w2_ = *i2;
  }

  double propensity(const ObservationTable& t, std::size_t i) const {
    return std::clamp(scm_propensity(t.cov(i, w1_), t.x[i], p_), clip_.lo, clip_.hi);
  }

  double mean(const ObservationTable& t, std::size_t i, int a) const {
    return scm_mean(t.cov(i, w1_), t.cov(i, w2_), t.x[i], a, p_);
  }

  void survival(const ObservationTable& t, std::size_t i, int a, const TierPartition& c,
                std::span<double> out) const {
    gaussian_survival(mean(t, i, a), p_.sigma, c, out);
  }

 private:
  ScmParams p_;
  ClipBounds clip_;
  std::size_t w1_ = 0, w2_ = 1;
};

/// The structural model written as a probit propensity on {1, w1, x} and a
/// linear outcome on the saturated interaction basis.
inline NuisancePair scm_truth_as_models(const ObservationTable& layout, const ScmParams& p = {},
                                        ClipBounds clip = {}) {
  Eigen::VectorXd pc(3);
  pc << -p.exposure_scale, p.exposure_scale, 2.0 * p.exposure_scale;
  Eigen::VectorXd oc(9);
  oc << -1.0, 0.5, 0.5, 2.0, 1.0, 1.0, -2.0 * p.immunity, -p.immunity, -p.immunity;
  return {PropensityModel(Link::probit, CompiledBasis(default_propensity_basis(), layout), pc, clip),
          OutcomeModel(CompiledBasis(saturated_outcome_basis(), layout), oc, p.sigma)};
}

/// Conditional means of the immune subgroup (W2 = 1) from the two unreduced
/// arm formulas.
inline std::pair<double, double> immune_subgroup_check(double w1, double x) {
  const double mu0 = -1.0 + (w1 + x) * (1.0 + 0.5 * -1.0);
  const double mu1 = 1.0 + (w1 + x) * (1.0 + 0.5) - (w1 + x + 2.0);
  return {mu0, mu1};
}

struct OracleResult {
  int stratum = 0;
  double pb_true = 0.0;
  double ph_true = 0.0;
  double lower_true = 0.0;  // Lambda(x)
  double upper_true = 0.0;  // Upsilon(x)
  double harm_lower_true = 0.0;
  double harm_upper_true = 0.0;
  double mono_lower_true = 0.0;
  double mono_upper_true = 0.0;
  std::size_t mc_samples = 0;  // 0 for quadrature
  double mc_std_error = 0.0;   // of pb_true
  double bound_std_error = 0.0;  // largest standard error among the bounds
};

namespace oracle_detail {

// Per-covariate-value quantities, coded directly from the Gaussian CDF and
// kept separate from the estimator path.
struct Integrands {
  double pb, ph, lower, upper, harm_lower, harm_upper, mono_lower, mono_upper;
};

inline Integrands integrands(double w1, double w2, int x, const TierPartition& c,
                             const ScmParams& p) {
  const double mu0 = scm_mean(w1, w2, x, 0, p);
  const double mu1 = scm_mean(w1, w2, x, 1, p);
  const double s = p.sigma;
  const std::size_t K = c.tiers();
  // P(Y^a <= t)
  auto F = [&](double mu, double t) {
    if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
    return normal_cdf((t - mu) / s);
  };
  auto R = [&](double mu, std::size_t k) { return F(mu, c.cut(k)) - F(mu, c.cut(k - 1)); };
  auto S = [&](double mu, std::size_t k) { return 1.0 - F(mu, c.cut(k)); };

  Integrands g{};
  const double d = mu1 - mu0;
  for (std::size_t k = 1; k < K; ++k) {
    const double ck = c.cut(k);
    // Y^1 = Y^0 + d: benefit needs Y^0 in I_k and Y^0 > c_k - d.
    const double from = std::max(c.cut(k - 1), ck - d);
    g.pb += std::max(0.0, F(mu0, ck) - F(mu0, from));
    const double from_h = std::max(c.cut(k - 1), ck + d);
    g.ph += std::max(0.0, F(mu1, ck) - F(mu1, from_h));
    g.lower += std::max(0.0, R(mu0, k) + S(mu1, k) - 1.0);
    g.upper += std::min(R(mu0, k), S(mu1, k));
    g.harm_lower += std::max(0.0, R(mu1, k) + S(mu0, k) - 1.0);
    g.harm_upper += std::min(R(mu1, k), S(mu0, k));
  }
  const double base = S(mu1, 1) - R(mu0, K);
  g.mono_lower = g.mono_upper = base;
  for (std::size_t k = 2; k + 1 <= K; ++k) {
    g.mono_lower -= std::min(R(mu0, k), R(mu1, k));
    g.mono_upper -= std::max(0.0, R(mu0, k) + R(mu1, k) - 1.0);
  }
  return g;
}

// v | X = x is uniform on (0, 1) or (-1, 0).
inline double draw_v(int stratum, Engine& eng) {
  std::uniform_real_distribution<double> half(0.0, 1.0);
  const double u = half(eng);
  return stratum == 1 ? u : -u;
}

}  // namespace oracle_detail

/// Monte Carlo ground truth for one stratum. PB and PH come from the shared-
/// noise joint of the potential outcomes; the bounds average the closed-form
/// integrands over simulated covariates. Draws are made in fixed chunks, so
/// the result does not depend on `threads`.
inline OracleResult oracle_truth(int stratum, const TierPartition& c, std::size_t mc_samples,
                                 std::uint64_t seed, const ScmParams& p = {},
                                 unsigned threads = 1) {
  if (stratum != 0 && stratum != 1) throw DataError("unknown stratum " + std::to_string(stratum));
  if (mc_samples < 10000) throw ConfigError("oracle needs at least 10^4 Monte Carlo samples");
  constexpr std::size_t chunk = 1 << 16;
  const std::size_t chunks = (mc_samples + chunk - 1) / chunk;
  struct Sums {
    double sum[8] = {};
    double sq[8] = {};
  };
  std::vector<Sums> parts(chunks);
  parallel_for(chunks, threads, [&](std::size_t ci) {
    auto eng = make_stream(seed, "oracle", (static_cast<std::uint64_t>(stratum) << 32) | ci);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::normal_distribution<double> gauss;
    const std::size_t begin = ci * chunk, end = std::min(mc_samples, begin + chunk);
    auto& acc = parts[ci];
    for (std::size_t i = begin; i < end; ++i) {
      const double v = oracle_detail::draw_v(stratum, eng);
      const double w1 = unif(eng);
      const double uy = p.sigma * gauss(eng);
      const double w2 = v * v > 0.25 ? 1.0 : 0.0;
      const double y0 = scm_mean(w1, w2, stratum, 0, p) + uy;
      const double y1 = scm_mean(w1, w2, stratum, 1, p) + uy;
      const auto t0 = c.tier_of(y0), t1 = c.tier_of(y1);
      const auto g = oracle_detail::integrands(w1, w2, stratum, c, p);
      const double vals[8] = {t1 > t0 ? 1.0 : 0.0, t1 < t0 ? 1.0 : 0.0, g.lower, g.upper,
                              g.harm_lower, g.harm_upper, g.mono_lower, g.mono_upper};
      for (int k = 0; k < 8; ++k) {
        acc.sum[k] += vals[k];
        acc.sq[k] += vals[k] * vals[k];
      }
    }
  });
  Sums total;
  for (const auto& part : parts)
    for (int k = 0; k < 8; ++k) {
      total.sum[k] += part.sum[k];
      total.sq[k] += part.sq[k];
    }
  const double n = static_cast<double>(mc_samples);
  double mean[8], se[8];
  for (int k = 0; k < 8; ++k) {
    mean[k] = total.sum[k] / n;
    se[k] = std::sqrt(std::max(0.0, total.sq[k] / n - mean[k] * mean[k]) / n);
  }
  OracleResult r;
  r.stratum = stratum;
  r.pb_true = mean[0];
  r.ph_true = mean[1];
  r.lower_true = mean[2];
  r.upper_true = mean[3];
  r.harm_lower_true = mean[4];
  r.harm_upper_true = mean[5];
  r.mono_lower_true = mean[6];
  r.mono_upper_true = mean[7];
  r.mc_samples = mc_samples;
  r.mc_std_error = se[0];
  r.bound_std_error = *std::max_element(se + 2, se + 8);
  return r;
}

/// Deterministic counterpart of oracle_truth: composite Gauss-Legendre over W1
/// for each value of W2 (probability 1/2 each within either stratum), with
/// PB and PH integrated in closed form given the covariates.
inline OracleResult oracle_quadrature(int stratum, const TierPartition& c, const ScmParams& p = {},
                                      std::size_t panels = 512) {
  if (stratum != 0 && stratum != 1) throw DataError("unknown stratum " + std::to_string(stratum));
  using Rule = boost::math::quadrature::gauss<double, 15>;
  double acc[8] = {};
  const double width = 2.0 / static_cast<double>(panels);
  for (double w2 : {0.0, 1.0}) {
    for (std::size_t k = 0; k < panels; ++k) {
      const double a = -1.0 + width * static_cast<double>(k);
      for (int q = 0; q < 8; ++q) {
        acc[q] += 0.5 * Rule::integrate(
                            [&](double w1) {
                              const auto g = oracle_detail::integrands(w1, w2, stratum, c, p);
                              const double v[8] = {g.pb,         g.ph,         g.lower,
                                                   g.upper,      g.harm_lower, g.harm_upper,
                                                   g.mono_lower, g.mono_upper};
                              return v[q];
                            },
                            a, a + width) /
                  2.0;
      }
    }
  }
  OracleResult r;
  r.stratum = stratum;
  r.pb_true = acc[0];
  r.ph_true = acc[1];
  r.lower_true = acc[2];
  r.upper_true = acc[3];
  r.harm_lower_true = acc[4];
  r.harm_upper_true = acc[5];
  r.mono_lower_true = acc[6];
  r.mono_upper_true = acc[7];
  return r;
}

}  // namespace tiered
