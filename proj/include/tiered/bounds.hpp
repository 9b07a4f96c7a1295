#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "gaussian.hpp"
#include "nuisance.hpp"
#include "partition.hpp"
#include "table.hpp"

namespace tiered {

/// Which counterfactual query the bounds target. Benefit pairs the tier
/// probability of the untreated arm with the survival of the treated arm;
/// harm swaps the arms.
enum class Contrast { benefit, harm };

inline std::string to_string(Contrast c) { return c == Contrast::benefit ? "benefit" : "harm"; }

/// Arm whose tier probabilities R_k enter the bounds.
constexpr int tier_arm(Contrast c) { return c == Contrast::benefit ? 0 : 1; }
/// Arm whose survival probabilities S_k enter the bounds.
constexpr int survival_arm(Contrast c) { return c == Contrast::benefit ? 1 : 0; }

// Fréchet pieces for one threshold, with r = R_k(tier arm), s = S_k(survival arm).
inline double lower_term(double r, double s) { return std::max(0.0, r + s - 1.0); }
inline double upper_term(double r, double s) { return std::min(r, s); }
inline bool lambda_rule(double r, double s) { return r + s - 1.0 > 0.0; }
inline bool upsilon_rule(double r, double s) { return r - s > 0.0; }

/// Per-unit nuisance evaluations for a set of table rows: clipped
/// propensity and the survival vectors of both arms.
struct UnitPredictions {
  std::size_t inner = 0;  // K - 1
  std::vector<std::size_t> rows;
  std::vector<double> pi;
  std::vector<double> s0;
  std::vector<double> s1;

  std::size_t size() const { return rows.size(); }

  std::span<const double> survival(std::size_t u, int arm) const {
    const auto& s = arm == 0 ? s0 : s1;
    return {s.data() + u * inner, inner};
  }

  /// S_k for k in [0, K] with the boundary conventions S_0 = 1, S_K = 0.
  double surv(std::size_t u, int arm, std::size_t k) const {
    if (k == 0) return 1.0;
    if (k > inner) return 0.0;
    return (arm == 0 ? s0 : s1)[u * inner + k - 1];
  }

  /// R_k = S_{k-1} - S_k for k in [1, K].
  double tier(std::size_t u, int arm, std::size_t k) const {
    return surv(u, arm, k - 1) - surv(u, arm, k);
  }
};

template <Nuisance N>
UnitPredictions predict_units(const N& nuisance, const ObservationTable& t,
                              std::span<const std::size_t> rows, const TierPartition& c,
                              bool with_propensity = true) {
  UnitPredictions p;
  p.inner = c.inner();
  p.rows.assign(rows.begin(), rows.end());
  p.s0.resize(rows.size() * p.inner);
  p.s1.resize(rows.size() * p.inner);
  if (with_propensity) p.pi.resize(rows.size());
  for (std::size_t u = 0; u < rows.size(); ++u) {
    nuisance.survival(t, rows[u], 0, c, std::span<double>(p.s0.data() + u * p.inner, p.inner));
    nuisance.survival(t, rows[u], 1, c, std::span<double>(p.s1.data() + u * p.inner, p.inner));
    if (with_propensity) p.pi[u] = nuisance.propensity(t, rows[u]);
  }
  return p;
}

struct UnitBoundContribution {
  std::size_t row = 0;
  std::vector<double> lambda_terms;
  std::vector<double> upsilon_terms;
  double lambda = 0.0;
  double upsilon = 0.0;
};

inline UnitBoundContribution unit_contribution(const UnitPredictions& p, std::size_t u,
                                               Contrast contrast = Contrast::benefit) {
  UnitBoundContribution out;
  out.row = p.rows[u];
  const int ra = tier_arm(contrast), sa = survival_arm(contrast);
  for (std::size_t k = 1; k <= p.inner; ++k) {
    const double r = p.tier(u, ra, k), s = p.surv(u, sa, k);
    out.lambda_terms.push_back(lower_term(r, s));
    out.upsilon_terms.push_back(upper_term(r, s));
    out.lambda += out.lambda_terms.back();
    out.upsilon += out.upsilon_terms.back();
  }
  return out;
}

template <Nuisance N>
UnitBoundContribution unit_contributions(const N& nuisance, const ObservationTable& t,
                                         std::size_t row, const TierPartition& c,
                                         Contrast contrast = Contrast::benefit) {
  const std::size_t rows[] = {row};
  return unit_contribution(predict_units(nuisance, t, rows, c, false), 0, contrast);
}

/// (Lambda_i, Upsilon_i) for one unit. With h > 0 the max/min kinks are
/// replaced by gelu(u, h) and r - gelu(r - s, h).
inline Eigen::Vector2d unit_bounds(const UnitPredictions& p, std::size_t u, Contrast contrast,
                                   double h = 0.0) {
  const int ra = tier_arm(contrast), sa = survival_arm(contrast);
  Eigen::Vector2d v = Eigen::Vector2d::Zero();
  for (std::size_t k = 1; k <= p.inner; ++k) {
    const double r = p.tier(u, ra, k), s = p.surv(u, sa, k);
    if (h > 0.0) {
      v[0] += gelu(r + s - 1.0, h);
      v[1] += r - gelu(r - s, h);
    } else {
      v[0] += lower_term(r, s);
      v[1] += upper_term(r, s);
    }
  }
  return v;
}

struct RulePair {
  std::vector<int> lambda;
  std::vector<int> upsilon;
};

/// Individualized rules: strict inequalities, so exact ties give 0.
template <Nuisance N>
RulePair rules(const N& nuisance, const ObservationTable& t, std::size_t row,
               const TierPartition& c, Contrast contrast = Contrast::benefit) {
  const std::size_t rows[] = {row};
  const auto p = predict_units(nuisance, t, rows, c, false);
  RulePair out;
  for (std::size_t k = 1; k <= c.inner(); ++k) {
    const double r = p.tier(0, tier_arm(contrast), k), s = p.surv(0, survival_arm(contrast), k);
    out.lambda.push_back(lambda_rule(r, s));
    out.upsilon.push_back(upsilon_rule(r, s));
  }
  return out;
}

enum class Method { plug_in, one_step, one_step_gelu, s1s, mono_plug_in };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::plug_in: return "plug-in";
    case Method::one_step: return "1S";
    case Method::one_step_gelu: return "1S-gelu";
    case Method::s1s: return "S1S";
    case Method::mono_plug_in: return "mono-plug-in";
  }
  return "?";
}

struct BoundsEstimate {
  int stratum = 0;
  Method method = Method::plug_in;
  Contrast contrast = Contrast::benefit;
  double lower = 0.0;
  double upper = 0.0;
  std::optional<Eigen::Matrix2d> covariance;
  std::size_t n_units = 0;
  double smoothing = 0.0;  // gelu h, 0 when unused
  std::vector<std::string> flags;

  bool has_flag(const std::string& f) const {
    return std::find(flags.begin(), flags.end(), f) != flags.end();
  }
  void add_flag(const std::string& f) {
    if (!has_flag(f)) flags.push_back(f);
  }
  bool in_parameter_space() const { return 0.0 <= lower && lower <= upper && upper <= 1.0; }
};

inline void mark_out_of_space(BoundsEstimate& e) {
  if (!e.in_parameter_space()) e.add_flag("out_of_space");
}

/// Opt-in projection onto {0 <= lower <= upper <= 1}; crossing bounds collapse
/// to their midpoint.
inline BoundsEstimate project_to_parameter_space(BoundsEstimate e) {
  e.lower = std::clamp(e.lower, 0.0, 1.0);
  e.upper = std::clamp(e.upper, 0.0, 1.0);
  if (e.lower > e.upper) e.lower = e.upper = 0.5 * (e.lower + e.upper);
  e.add_flag("projected");
  return e;
}

/// Sample covariance (n - 1 denominator) of 2-vectors.
inline Eigen::Matrix2d sample_covariance(std::span<const Eigen::Vector2d> v) {
  if (v.size() < 2) throw NumericalError("covariance needs at least two units");
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& x : v) mean += x;
  mean /= static_cast<double>(v.size());
  Eigen::Matrix2d c = Eigen::Matrix2d::Zero();
  for (const auto& x : v) c += (x - mean) * (x - mean).transpose();
  c /= static_cast<double>(v.size() - 1);
  c(0, 1) = c(1, 0) = 0.5 * (c(0, 1) + c(1, 0));
  return c;
}

namespace detail {

inline std::vector<std::size_t> stratum_rows(const ObservationTable& t, int stratum) {
  auto rows = t.rows_in_stratum(stratum);
  if (rows.empty()) throw DataError("stratum " + std::to_string(stratum) + " has no units");
  return rows;
}

inline BoundsEstimate mean_estimate(std::span<const Eigen::Vector2d> values, int stratum,
                                    Method method, Contrast contrast) {
  BoundsEstimate e;
  e.stratum = stratum;
  e.method = method;
  e.contrast = contrast;
  e.n_units = values.size();
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& v : values) mean += v;
  mean /= static_cast<double>(values.size());
  e.lower = mean[0];
  e.upper = mean[1];
  if (values.size() >= 2) e.covariance = sample_covariance(values) / static_cast<double>(values.size());
  return e;
}

template <Nuisance N>
void flag_nuisance(const N& n, BoundsEstimate& e) {
  if constexpr (requires { n.degenerate(); }) {
    if (n.degenerate()) e.add_flag("degenerate_sigma");
  }
  if constexpr (requires { n.converged(); }) {
    if (!n.converged()) e.add_flag("nonconverged_fits");
  }
}

}  // namespace detail

/// Plug-in bounds: stratum means of the per-unit Fréchet integrands over the
/// empirical W | X = x. The covariance is the sample covariance of the unit
/// values divided by the stratum size.
template <Nuisance N>
BoundsEstimate plugin_bounds(const N& nuisance, const ObservationTable& data, int stratum,
                             const TierPartition& c, Contrast contrast = Contrast::benefit) {
  const auto rows = detail::stratum_rows(data, stratum);
  const auto p = predict_units(nuisance, data, rows, c, false);
  std::vector<Eigen::Vector2d> values(p.size());
  for (std::size_t u = 0; u < p.size(); ++u) values[u] = unit_bounds(p, u, contrast);
  auto e = detail::mean_estimate(values, stratum, Method::plug_in, contrast);
  detail::flag_nuisance(nuisance, e);
  return e;
}

template <Nuisance N>
BoundsEstimate harm_bounds(const N& nuisance, const ObservationTable& data, int stratum,
                           const TierPartition& c) {
  return plugin_bounds(nuisance, data, stratum, c, Contrast::harm);
}

/// Per-unit bounds under strong monotonicity with a nonharmful exposure.
inline Eigen::Vector2d unit_mono_bounds(const UnitPredictions& p, std::size_t u) {
  const std::size_t K = p.inner + 1;
  const double base = p.surv(u, 1, 1) - p.tier(u, 0, K);
  double lo = base, hi = base;
  for (std::size_t k = 2; k + 1 <= K; ++k) {
    const double r0 = p.tier(u, 0, k), r1 = p.tier(u, 1, k);
    lo -= std::min(r0, r1);
    hi -= std::max(0.0, r0 + r1 - 1.0);
  }
  return {lo, hi};
}

template <Nuisance N>
BoundsEstimate mono_bounds(const N& nuisance, const ObservationTable& data, int stratum,
                           const TierPartition& c) {
  if (c.tiers() < 3)
    throw ConfigError("monotone bounds collapse to point identification for K = 2");
  const auto rows = detail::stratum_rows(data, stratum);
  const auto p = predict_units(nuisance, data, rows, c, false);
  std::vector<Eigen::Vector2d> values(p.size());
  for (std::size_t u = 0; u < p.size(); ++u) values[u] = unit_mono_bounds(p, u);
  auto e = detail::mean_estimate(values, stratum, Method::mono_plug_in, Contrast::benefit);
  detail::flag_nuisance(nuisance, e);
  return e;
}

/// Fraction of stratum units whose fitted integrands sit within `tol` of a
/// kink for some threshold: an empirical view of the ambiguity set.
template <Nuisance N>
double ambiguity_set_mass(const N& nuisance, const ObservationTable& data, int stratum,
                          const TierPartition& c, double tol,
                          Contrast contrast = Contrast::benefit) {
  const auto rows = detail::stratum_rows(data, stratum);
  const auto p = predict_units(nuisance, data, rows, c, false);
  std::size_t hits = 0;
  for (std::size_t u = 0; u < p.size(); ++u) {
    for (std::size_t k = 1; k <= p.inner; ++k) {
      const double r = p.tier(u, tier_arm(contrast), k), s = p.surv(u, survival_arm(contrast), k);
      if (std::abs(r + s - 1.0) <= tol || std::abs(r - s) <= tol) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(p.size());
}

}  // namespace tiered
