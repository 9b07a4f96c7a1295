#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <gtest/gtest.h>

#include <tiered/nuisance.hpp>
#include <tiered/rng.hpp>
#include <tiered/simulation.hpp>

using namespace tiered;

namespace {

// One binary covariate: the saturated GLM has closed-form cell MLEs.
ObservationTable binary_design(std::size_t n, std::uint64_t seed) {
  auto eng = make_stream(seed, "test-binary");
  std::bernoulli_distribution coin(0.4);
  std::normal_distribution<double> noise;
  ObservationTable t;
  t.covariate_names = {"w1"};
  for (std::size_t i = 0; i < n; ++i) {
    const double w = coin(eng) ? 1.0 : 0.0;
    const double p = w ? 0.7 : 0.25;
    const int a = std::bernoulli_distribution(p)(eng) ? 1 : 0;
    const double row[] = {w};
    t.push_back(row, 0, a, 1.0 + 2.0 * a - w + noise(eng));
  }
  return t;
}

}  // namespace

TEST(Basis, ParsesProductsAndRejectsUnknownNames) {
  ObservationTable t;
  t.covariate_names = {"w1", "w2"};
  const double r[] = {2.0, 3.0};
  t.push_back(r, 1, 1, 0.0);
  const CompiledBasis b({"1", "w1", "a*w2", "x*w1*w2", "a"}, t);
  std::vector<double> row(5);
  b.row(t, 0, 0, row);
  EXPECT_EQ(row, (std::vector<double>{1, 2, 0, 6, 0}));
  b.row(t, 0, 1, row);
  EXPECT_EQ(row, (std::vector<double>{1, 2, 3, 6, 1}));
  EXPECT_TRUE(b.uses_exposure());
  const std::vector<double> beta = {1, 1, 1, 1, 1};
  EXPECT_DOUBLE_EQ(b.dot(t, 0, 1, beta), 13.0);
  EXPECT_THROW(CompiledBasis({"1", "w9"}, t), ConfigError);
  EXPECT_THROW(CompiledBasis({}, t), ConfigError);
}

TEST(Propensity, LogitMatchesClosedFormCellMle) {
  const auto t = binary_design(4000, 1);
  const auto m = fit_propensity(t, Link::logit, {"1", "w1"});
  ASSERT_TRUE(m.diagnostics().converged);
  double n0 = 0, a0 = 0, n1 = 0, a1 = 0;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    (t.cov(i, 0) ? n1 : n0) += 1;
    (t.cov(i, 0) ? a1 : a0) += t.a[i];
  }
  const auto logit = [](double p) { return std::log(p / (1 - p)); };
  EXPECT_NEAR(m.coefficients()[0], logit(a0 / n0), 1e-8);
  EXPECT_NEAR(m.coefficients()[1], logit(a1 / n1) - logit(a0 / n0), 1e-8);
}

TEST(Propensity, ProbitMatchesClosedFormCellMle) {
  const auto t = binary_design(4000, 2);
  const auto m = fit_propensity(t, Link::probit, {"1", "w1"});
  ASSERT_TRUE(m.diagnostics().converged);
  double n0 = 0, a0 = 0, n1 = 0, a1 = 0;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    (t.cov(i, 0) ? n1 : n0) += 1;
    (t.cov(i, 0) ? a1 : a0) += t.a[i];
  }
  const boost::math::normal_distribution<double> z;
  const double q0 = boost::math::quantile(z, a0 / n0), q1 = boost::math::quantile(z, a1 / n1);
  EXPECT_NEAR(m.coefficients()[0], q0, 1e-7);
  EXPECT_NEAR(m.coefficients()[1], q1 - q0, 1e-7);
}

TEST(Propensity, RecoversStructuralProbitAtLargeN) {
  const auto d = simulate(200000, 3);
  const auto m = fit_propensity(d.observed, Link::probit, default_propensity_basis());
  EXPECT_NEAR(m.coefficients()[0], -0.5, 0.02);
  EXPECT_NEAR(m.coefficients()[1], 0.5, 0.02);
  EXPECT_NEAR(m.coefficients()[2], 1.0, 0.02);
}

TEST(Propensity, WarmStartReachesTheSameFixedPoint) {
  const auto d = simulate(3000, 4);
  const auto cold = fit_propensity(d.observed, Link::logit, default_propensity_basis());
  Eigen::VectorXd warm(3);
  warm << 0.3, -0.2, 0.1;
  const auto hot = fit_propensity(d.observed, Link::logit, default_propensity_basis(), {}, {}, &warm);
  EXPECT_TRUE((cold.coefficients() - hot.coefficients()).cwiseAbs().maxCoeff() < 1e-8);
}

TEST(Propensity, ClipsPredictions) {
  ObservationTable t;
  t.covariate_names = {"w1"};
  for (int i = 0; i < 40; ++i) {
    const double w[] = {i < 20 ? 0.0 : 1.0};
    t.push_back(w, 0, (i % 20) < 19 ? (i < 20 ? 0 : 1) : (i < 20 ? 1 : 0), 0.0);
  }
  const auto m = fit_propensity(t, Link::logit, {"1", "w1"}, {0.1, 0.9});
  for (std::size_t i = 0; i < t.rows(); ++i) {
    EXPECT_GE(m.predict(t, i), 0.1);
    EXPECT_LE(m.predict(t, i), 0.9);
  }
}

TEST(Propensity, NamedErrors) {
  auto t = binary_design(50, 5);
  EXPECT_THROW(fit_propensity(t, Link::logit, {"1", "a"}), ConfigError);
  // Collinear columns are named in the message.
  ObservationTable c;
  c.covariate_names = {"w1", "w2"};
  for (int i = 0; i < 30; ++i) {
    const double w[] = {static_cast<double>(i % 5), 2.0 * (i % 5)};
    c.push_back(w, 0, i % 2, 0.0);
  }
  try {
    fit_propensity(c, Link::logit, {"1", "w1", "w2"});
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_TRUE(msg.find("w1") != std::string::npos || msg.find("w2") != std::string::npos) << msg;
  }
  for (auto& a : t.a) a = 1;
  EXPECT_THROW(fit_propensity(t, Link::logit, {"1", "w1"}), DataError);
  EXPECT_THROW(parse_link("cloglog"), ConfigError);
}

TEST(Propensity, SeparationIsReportedNotThrown) {
  ObservationTable t;
  t.covariate_names = {"w1"};
  for (int i = 0; i < 40; ++i) {
    const double w[] = {static_cast<double>(i)};
    t.push_back(w, 0, i >= 20 ? 1 : 0, 0.0);
  }
  const auto m = fit_propensity(t, Link::logit, {"1", "w1"});
  EXPECT_FALSE(m.diagnostics().converged);
  EXPECT_TRUE(m.diagnostics().separated);
}

TEST(Outcome, LeastSquaresAgreesWithNormalEquationsAndAccumulator) {
  const auto d = simulate(5000, 6);
  const auto& t = d.observed;
  const auto m = fit_outcome(t, saturated_outcome_basis());
  // Independent route: dense normal equations.
  const CompiledBasis b(saturated_outcome_basis(), t);
  Eigen::MatrixXd X(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(b.size()));
  std::vector<double> row(b.size());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    b.row(t, i, t.a[i], row);
    for (std::size_t k = 0; k < b.size(); ++k) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = row[k];
  }
  const Eigen::Map<const Eigen::VectorXd> y(t.y.data(), static_cast<Eigen::Index>(t.rows()));
  const Eigen::VectorXd beta = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  EXPECT_LT((beta - m.coefficients()).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_NEAR(m.sigma(), std::sqrt((y - X * beta).squaredNorm() / static_cast<double>(t.rows())), 1e-9);

  OutcomeAccumulator acc(b);
  for (std::size_t i = 0; i < t.rows(); ++i) acc.add(t, i);
  const auto am = acc.model();
  EXPECT_LT((am.coefficients() - m.coefficients()).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(am.sigma(), m.sigma(), 1e-8);
}

TEST(Outcome, RecoversStructuralCoefficients) {
  const auto d = simulate(200000, 7);
  const auto m = fit_outcome(d.observed, saturated_outcome_basis());
  const double truth[] = {-1, 0.5, 0.5, 2, 1, 1, -2, -1, -1};
  for (int k = 0; k < 9; ++k) EXPECT_NEAR(m.coefficients()[k], truth[k], 0.08) << k;
  EXPECT_NEAR(m.sigma(), 2.0, 0.02);
}

TEST(Outcome, ConstantResponseIsDegenerate) {
  auto d = simulate(500, 8);
  for (auto& y : d.observed.y) y = 0.7;
  const auto m = fit_outcome(d.observed, saturated_outcome_basis());
  EXPECT_TRUE(m.degenerate());
  const TierPartition c({0.0, 1.0});
  const auto s = survival(m.mean(d.observed, 0, 1), m.sigma(), c);
  EXPECT_EQ(s, (std::vector<double>{1.0, 0.0}));
}

TEST(Outcome, TooFewRowsIsADataError) {
  const auto d = simulate(5, 9);
  EXPECT_THROW(fit_outcome(d.observed, saturated_outcome_basis()), DataError);
}

TEST(Survival, TierProbabilitiesSumToOne) {
  const TierPartition c({-1.42, 1.09});
  for (double mu : {-3.0, 0.0, 0.4, 5.0}) {
    const auto r = tier_probs(mu, 2.0, c);
    double total = 0;
    for (double v : r) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-15);
    const boost::math::normal_distribution<double> yd(mu, 2.0);
    EXPECT_NEAR(r[0], boost::math::cdf(yd, -1.42), 1e-14);
    EXPECT_NEAR(r[2], 1 - boost::math::cdf(yd, 1.09), 1e-14);
  }
}

TEST(Nuisance, TrueModelsMatchClosedFormTruth) {
  const auto d = simulate(300, 10);
  const auto& t = d.observed;
  const ScmTruth truth(t);
  const auto models = scm_truth_as_models(t);
  const TierPartition c({-1.42, 1.09});
  std::vector<double> s1(2), s2(2);
  for (std::size_t i = 0; i < t.rows(); ++i) {
    EXPECT_NEAR(truth.propensity(t, i), models.propensity(t, i), 1e-15);
    for (int a : {0, 1}) {
      truth.survival(t, i, a, c, s1);
      models.survival(t, i, a, c, s2);
      EXPECT_NEAR(s1[0], s2[0], 1e-14);
      EXPECT_NEAR(s1[1], s2[1], 1e-14);
    }
  }
}
