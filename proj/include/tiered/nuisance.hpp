#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "basis.hpp"
#include "errors.hpp"
#include "gaussian.hpp"
#include "partition.hpp"
#include "table.hpp"

namespace tiered {

enum class Link { logit, probit };

inline std::string to_string(Link link) { return link == Link::logit ? "logit" : "probit"; }

inline Link parse_link(const std::string& s) {
  if (s == "logit") return Link::logit;
  if (s == "probit") return Link::probit;
  throw ConfigError("unknown link '" + s + "' (expected logit or probit)");
}

/// Propensity predictions are clipped into [lo, hi].
struct ClipBounds {
  double lo = 0.01;
  double hi = 0.99;
};

struct IrlsOptions {
  int max_iterations = 100;
  double tolerance = 1e-10;  // on the per-row score norm
  bool check_rank = true;
};

struct FitDiagnostics {
  int iterations = 0;
  double score_norm = 0.0;
  bool converged = false;
  bool separated = false;  // fitted probabilities numerically 0 or 1
};

namespace detail {

// Design matrix of the first `rows` rows of t.
inline Eigen::MatrixXd design(const CompiledBasis& basis, const ObservationTable& t,
                              std::size_t rows, std::optional<int> exposure = std::nullopt) {
  Eigen::MatrixXd X(rows, basis.size());
  std::vector<double> buf(basis.size());
  for (std::size_t i = 0; i < rows; ++i) {
    basis.row(t, i, exposure.value_or(t.a[i]), buf);
    for (std::size_t k = 0; k < buf.size(); ++k) X(i, k) = buf[k];
  }
  return X;
}

inline void require_full_rank(const Eigen::MatrixXd& X, const BasisSpec& spec,
                              const std::string& what) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  const auto rank = static_cast<std::size_t>(qr.rank());
  if (rank >= spec.size()) return;
  std::string cols;
  const auto& perm = qr.colsPermutation().indices();
  for (std::size_t k = rank; k < spec.size(); ++k) {
    if (!cols.empty()) cols += ", ";
    cols += spec[static_cast<std::size_t>(perm[static_cast<Eigen::Index>(k)])];
  }
  throw DataError(what + " design is rank deficient; collinear columns: " + cols);
}

struct LinkEval {
  double p;      // P(A=1)
  double log_p;  // log p
  double log_q;  // log(1-p)
  double score;  // d loglik / d eta, per unit residual (a - p) scale included
  double weight; // Fisher information weight
};

inline LinkEval eval_link(Link link, double eta, int a) {
  LinkEval e{};
  if (link == Link::logit) {
    eta = std::clamp(eta, -700.0, 700.0);
    e.p = 1.0 / (1.0 + std::exp(-eta));
    e.log_p = -std::log1p(std::exp(-eta));
    e.log_q = -std::log1p(std::exp(eta));
    e.weight = e.p * (1.0 - e.p);
    e.score = a - e.p;
  } else {
    eta = std::clamp(eta, -35.0, 35.0);
    e.p = normal_cdf(eta);
    const double q = normal_cdf(-eta);
    e.log_p = std::log(e.p);
    e.log_q = std::log(q);
    const double dens = normal_pdf(eta);
    const double pq = std::max(e.p * q, 1e-300);
    e.weight = dens * dens / pq;
    e.score = dens * (a - e.p) / pq;
  }
  return e;
}

}  // namespace detail

/// pi(w, x) = P(A = 1 | W = w, X = x) as a GLM with logit or probit link.
class PropensityModel {
 public:
  PropensityModel() = default;
  PropensityModel(Link link, CompiledBasis basis, Eigen::VectorXd coef, ClipBounds clip,
                  FitDiagnostics diagnostics = {})
      : link_(link), basis_(std::move(basis)), coef_(std::move(coef)), clip_(clip),
        diagnostics_(diagnostics) {
    if (!(0.0 < clip_.lo && clip_.lo < clip_.hi && clip_.hi < 1.0))
      throw ConfigError("propensity clip bounds must satisfy 0 < lo < hi < 1");
  }

  double raw(const ObservationTable& t, std::size_t i) const {
    const double eta = basis_.dot(t, i, t.a[i], coef_);
    return link_ == Link::logit ? 1.0 / (1.0 + std::exp(-eta)) : normal_cdf(eta);
  }

  double predict(const ObservationTable& t, std::size_t i) const {
    return std::clamp(raw(t, i), clip_.lo, clip_.hi);
  }

  Link link() const { return link_; }
  const CompiledBasis& basis() const { return basis_; }
  const Eigen::VectorXd& coefficients() const { return coef_; }
  ClipBounds clip() const { return clip_; }
  const FitDiagnostics& diagnostics() const { return diagnostics_; }

 private:
  Link link_ = Link::logit;
  CompiledBasis basis_;
  Eigen::VectorXd coef_;
  ClipBounds clip_;
  FitDiagnostics diagnostics_;
};

inline double bernoulli_loglik(Link link, const Eigen::MatrixXd& X, std::span<const int> a,
                               const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = X * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const auto e = detail::eval_link(link, eta[i], a[static_cast<std::size_t>(i)]);
    ll += a[static_cast<std::size_t>(i)] ? e.log_p : e.log_q;
  }
  return ll;
}

/// Maximum-likelihood propensity fit on the first `rows` rows by iteratively
/// reweighted least squares (Fisher scoring) with step halving. Perfect
/// separation leaves diagnostics().converged == false instead of throwing.
inline PropensityModel fit_propensity_prefix(const ObservationTable& t, std::size_t rows, Link link,
                                             const CompiledBasis& basis, ClipBounds clip = {},
                                             IrlsOptions opts = {},
                                             const Eigen::VectorXd* warm_start = nullptr) {
  if (rows == 0) throw DataError("propensity fit needs at least one row");
  if (basis.uses_exposure()) throw ConfigError("propensity basis cannot reference the exposure 'a'");
  std::size_t treated = 0;
  for (std::size_t i = 0; i < rows; ++i) treated += static_cast<std::size_t>(t.a[i]);
  if (treated == 0 || treated == rows)
    throw DataError("degenerate exposure: every unit has a = " + std::to_string(t.a[0]));

  const Eigen::MatrixXd X = detail::design(basis, t, rows);
  if (opts.check_rank) detail::require_full_rank(X, basis.spec(), "propensity");
  const std::span<const int> a(t.a.data(), rows);

  const auto q = static_cast<Eigen::Index>(basis.size());
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(q);
  if (warm_start && warm_start->size() == q) beta = *warm_start;

  FitDiagnostics diag;
  double ll = bernoulli_loglik(link, X, a, beta);
  Eigen::VectorXd score(q), wt(X.rows());
  for (diag.iterations = 0; diag.iterations <= opts.max_iterations; ++diag.iterations) {
    const Eigen::VectorXd eta = X * beta;
    Eigen::VectorXd resid(X.rows());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const auto e = detail::eval_link(link, eta[i], a[static_cast<std::size_t>(i)]);
      resid[i] = e.score;
      wt[i] = e.weight;
    }
    score.noalias() = X.transpose() * resid;
    diag.score_norm = score.norm() / static_cast<double>(rows);
    if (diag.score_norm < opts.tolerance) {
      diag.converged = true;
      break;
    }
    if (diag.iterations == opts.max_iterations) break;
    const Eigen::MatrixXd info = X.transpose() * wt.asDiagonal() * X;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success || ldlt.isNegative()) break;
    const Eigen::VectorXd step = ldlt.solve(score);
    if (!step.allFinite()) break;
    double scale = 1.0;
    Eigen::VectorXd next = beta + step;
    double ll_next = bernoulli_loglik(link, X, a, next);
    while (ll_next < ll - 1e-12 * std::abs(ll) && scale > 1e-10) {
      scale *= 0.5;
      next = beta + scale * step;
      ll_next = bernoulli_loglik(link, X, a, next);
    }
    beta = next;
    ll = ll_next;
    // Diverging coefficients mean (quasi-)separation.
    if (beta.cwiseAbs().maxCoeff() > 1e3) break;
  }
  // Under separation the score vanishes while the coefficients run off, so a
  // small score alone does not certify a finite maximum.
  const Eigen::VectorXd eta = X * beta;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double p = link == Link::logit ? 1.0 / (1.0 + std::exp(-eta[i])) : normal_cdf(eta[i]);
    if (p < 1e-10 || p > 1.0 - 1e-10) {
      diag.separated = true;
      diag.converged = false;
      break;
    }
  }
  return PropensityModel(link, basis, beta, clip, diag);
}

inline PropensityModel fit_propensity(const ObservationTable& t, Link link, const BasisSpec& spec,
                                      ClipBounds clip = {}, IrlsOptions opts = {},
                                      const Eigen::VectorXd* warm_start = nullptr) {
  if (t.rows() == 0) throw DataError("propensity fit needs a nonempty table");
  return fit_propensity_prefix(t, t.rows(), link, CompiledBasis(spec, t), clip, opts, warm_start);
}

/// Gaussian homoskedastic outcome model: Y | W, X, A ~ N(mu(W, X, A), sigma^2)
/// with mu linear in a basis.
class OutcomeModel {
 public:
  OutcomeModel() = default;
  OutcomeModel(CompiledBasis basis, Eigen::VectorXd coef, double sigma)
      : basis_(std::move(basis)), coef_(std::move(coef)), sigma_(sigma) {
    if (!(sigma_ >= 0.0) || !std::isfinite(sigma_)) throw NumericalError("outcome sigma must be finite and >= 0");
  }

  double mean(const ObservationTable& t, std::size_t i, int a) const {
    return basis_.dot(t, i, a, coef_);
  }

  double sigma() const { return sigma_; }
  /// sigma == 0: survival degenerates to a step function.
  bool degenerate() const { return sigma_ == 0.0; }
  const CompiledBasis& basis() const { return basis_; }
  const Eigen::VectorXd& coefficients() const { return coef_; }

 private:
  CompiledBasis basis_;
  Eigen::VectorXd coef_;
  double sigma_ = 1.0;
};

/// S_k = P(Y > c_k) = 1 - Phi((c_k - mu) / sigma) for k = 1..K-1.
inline void gaussian_survival(double mu, double sigma, const TierPartition& c,
                              std::span<double> out) {
  const auto cuts = c.thresholds();
  for (std::size_t k = 0; k < cuts.size(); ++k) {
    if (sigma > 0.0)
      out[k] = normal_cdf((mu - cuts[k]) / sigma);
    else
      out[k] = mu > cuts[k] ? 1.0 : 0.0;
  }
}

inline std::vector<double> survival(double mu, double sigma, const TierPartition& c) {
  std::vector<double> s(c.inner());
  gaussian_survival(mu, sigma, c, s);
  return s;
}

/// R_k = S_{k-1} - S_k with S_0 = 1 and S_K = 0, as a length-K vector.
inline std::vector<double> tier_probs_from_survival(std::span<const double> s) {
  std::vector<double> r(s.size() + 1);
  double prev = 1.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    r[k] = prev - s[k];
    prev = s[k];
  }
  r[s.size()] = prev;
  return r;
}

inline std::vector<double> tier_probs(double mu, double sigma, const TierPartition& c) {
  return tier_probs_from_survival(survival(mu, sigma, c));
}

namespace detail {

inline double degenerate_sigma_floor(double rss_over_n, std::span<const double> y) {
  double scale = 0.0;
  for (double v : y) scale += v * v;
  scale = std::sqrt(scale / static_cast<double>(std::max<std::size_t>(1, y.size())));
  const double sigma = std::sqrt(std::max(0.0, rss_over_n));
  return sigma <= 1e-9 * std::max(1.0, scale) ? 0.0 : sigma;
}

}  // namespace detail

/// Least-squares fit of mu; sigma^2 = RSS / n.
inline OutcomeModel fit_outcome_prefix(const ObservationTable& t, std::size_t rows,
                                       const CompiledBasis& basis) {
  if (rows < basis.size() + 1)
    throw DataError("outcome fit needs more rows (" + std::to_string(rows) +
                    ") than basis columns + 1 (" + std::to_string(basis.size() + 1) + ")");
  const Eigen::MatrixXd X = detail::design(basis, t, rows);
  detail::require_full_rank(X, basis.spec(), "outcome");
  const Eigen::Map<const Eigen::VectorXd> y(t.y.data(), static_cast<Eigen::Index>(rows));
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  const Eigen::VectorXd beta = qr.solve(y);
  const double rss = (y - X * beta).squaredNorm();
  const double sigma = detail::degenerate_sigma_floor(rss / static_cast<double>(rows),
                                                      std::span<const double>(t.y.data(), rows));
  return OutcomeModel(basis, beta, sigma);
}

inline OutcomeModel fit_outcome(const ObservationTable& t, const BasisSpec& spec) {
  return fit_outcome_prefix(t, t.rows(), CompiledBasis(spec, t));
}

/// Running normal equations for growing-prefix least squares; gives the same
/// fit as fit_outcome_prefix without revisiting earlier rows.
class OutcomeAccumulator {
 public:
  explicit OutcomeAccumulator(CompiledBasis basis)
      : basis_(std::move(basis)),
        xtx_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(basis_.size()),
                                   static_cast<Eigen::Index>(basis_.size()))),
        xty_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis_.size()))),
        row_(basis_.size()) {}

  void add(const ObservationTable& t, std::size_t i) {
    basis_.row(t, i, t.a[i], row_);
    const Eigen::Map<const Eigen::VectorXd> f(row_.data(), static_cast<Eigen::Index>(row_.size()));
    xtx_.selfadjointView<Eigen::Lower>().rankUpdate(f);
    xty_ += f * t.y[i];
    yty_ += t.y[i] * t.y[i];
    ++rows_;
  }

  std::size_t rows() const { return rows_; }

  OutcomeModel model() const {
    if (rows_ < basis_.size() + 1) throw DataError("outcome fit needs more rows than basis columns + 1");
    const Eigen::MatrixXd full = xtx_.selfadjointView<Eigen::Lower>();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(full);
    if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14)
      throw DataError("outcome design is rank deficient in the current batch");
    const Eigen::VectorXd beta = ldlt.solve(xty_);
    const double rss = std::max(0.0, yty_ - beta.dot(xty_));
    const double rms = std::sqrt(yty_ / static_cast<double>(rows_));
    const double sigma_raw = std::sqrt(rss / static_cast<double>(rows_));
    const double sigma = sigma_raw <= 1e-7 * std::max(1.0, rms) ? 0.0 : sigma_raw;
    return OutcomeModel(basis_, beta, sigma);
  }

 private:
  CompiledBasis basis_;
  Eigen::MatrixXd xtx_;
  Eigen::VectorXd xty_;
  double yty_ = 0.0;
  std::size_t rows_ = 0;
  std::vector<double> row_;
};

/// Anything that yields clipped propensities and per-arm threshold survival
/// probabilities for a table row. The fitted NuisancePair and the simulation
/// model's closed-form truth both satisfy this.
template <typename N>
concept Nuisance = requires(const N& n, const ObservationTable& t, std::size_t i,
                            const TierPartition& c, std::span<double> out) {
  { n.propensity(t, i) } -> std::convertible_to<double>;
  n.survival(t, i, 0, c, out);
};

struct NuisancePair {
  PropensityModel propensity_model;
  OutcomeModel outcome_model;

  double propensity(const ObservationTable& t, std::size_t i) const {
    return propensity_model.predict(t, i);
  }
  void survival(const ObservationTable& t, std::size_t i, int a, const TierPartition& c,
                std::span<double> out) const {
    gaussian_survival(outcome_model.mean(t, i, a), outcome_model.sigma(), c, out);
  }
  bool degenerate() const { return outcome_model.degenerate(); }
  bool converged() const { return propensity_model.diagnostics().converged; }
};

/// Learner configuration shared by every estimator.
struct NuisanceConfig {
  Link link = Link::logit;
  BasisSpec propensity_basis = default_propensity_basis();
  BasisSpec outcome_basis = saturated_outcome_basis();
  ClipBounds clip{};
  IrlsOptions irls{};
};

inline NuisancePair fit_nuisance_prefix(const ObservationTable& t, std::size_t rows,
                                        const NuisanceConfig& cfg) {
  return {fit_propensity_prefix(t, rows, cfg.link, CompiledBasis(cfg.propensity_basis, t),
                                cfg.clip, cfg.irls),
          fit_outcome_prefix(t, rows, CompiledBasis(cfg.outcome_basis, t))};
}

inline NuisancePair fit_nuisance(const ObservationTable& t, const NuisanceConfig& cfg) {
  return fit_nuisance_prefix(t, t.rows(), cfg);
}

inline nlohmann::json to_json(const PropensityModel& m) {
  nlohmann::json terms = m.basis().spec();
  std::vector<double> coef(m.coefficients().data(), m.coefficients().data() + m.coefficients().size());
  return {{"link", to_string(m.link())},
          {"basis", terms},
          {"coefficients", coef},
          {"clip", {m.clip().lo, m.clip().hi}},
          {"converged", m.diagnostics().converged},
          {"separated", m.diagnostics().separated},
          {"iterations", m.diagnostics().iterations},
          {"score_norm", m.diagnostics().score_norm}};
}

inline nlohmann::json to_json(const OutcomeModel& m) {
  std::vector<double> coef(m.coefficients().data(), m.coefficients().data() + m.coefficients().size());
  return {{"basis", m.basis().spec()},
          {"coefficients", coef},
          {"sigma", m.sigma()},
          {"degenerate", m.degenerate()}};
}

}  // namespace tiered
