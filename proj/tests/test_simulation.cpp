#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include <tiered/simulation.hpp>

using namespace tiered;

// Reference values from an independent adaptive-quadrature integration of
// the structural model, frozen to six decimals.
TEST(Oracle, QuadratureMatchesFrozenReference) {
  const auto c = benchmark_partition();
  const auto q0 = oracle_quadrature(0, c);
  const auto q1 = oracle_quadrature(1, c);
  EXPECT_NEAR(q0.pb_true, 0.303123, 1e-4);
  EXPECT_NEAR(q0.lower_true, 0.163861, 1e-4);
  EXPECT_NEAR(q0.upper_true, 0.689281, 1e-4);
  EXPECT_NEAR(q0.harm_upper_true, 0.425706, 1e-4);
  EXPECT_NEAR(q0.mono_lower_true, 0.177104, 1e-4);
  EXPECT_NEAR(q0.mono_upper_true, 0.573656, 1e-4);
  EXPECT_NEAR(q1.pb_true, 0.367797, 1e-4);
  EXPECT_NEAR(q1.lower_true, 0.246916, 1e-4);
  EXPECT_NEAR(q1.upper_true, 0.662231, 1e-4);
  EXPECT_NEAR(q1.harm_upper_true, 0.366512, 1e-4);
  EXPECT_NEAR(q1.mono_lower_true, 0.262352, 1e-4);
  EXPECT_NEAR(q1.mono_upper_true, 0.604092, 1e-4);
  for (const auto& q : {q0, q1}) {
    EXPECT_NEAR(q.ph_true, 0.0, 1e-12);
    EXPECT_NEAR(q.harm_lower_true, 0.0, 1e-12);
    EXPECT_LE(q.lower_true, q.pb_true);
    EXPECT_LE(q.pb_true, q.upper_true);
    EXPECT_LE(q.lower_true, q.mono_lower_true);
    EXPECT_LE(q.mono_upper_true, q.upper_true);
    EXPECT_EQ(q.mc_samples, 0u);
  }
}

TEST(Oracle, QuadratureIsConvergedInPanels) {
  const auto c = benchmark_partition();
  for (int s : {0, 1}) {
    const auto a = oracle_quadrature(s, c, {}, 128);
    const auto b = oracle_quadrature(s, c, {}, 512);
    EXPECT_NEAR(a.pb_true, b.pb_true, 1e-6);
    EXPECT_NEAR(a.upper_true, b.upper_true, 1e-6);
  }
}

TEST(Oracle, MonteCarloAgreesWithQuadrature) {
  const auto c = benchmark_partition();
  for (int s : {0, 1}) {
    const auto mc = oracle_truth(s, c, 200000, 17);
    const auto q = oracle_quadrature(s, c);
    EXPECT_EQ(mc.mc_samples, 200000u);
    EXPECT_GT(mc.mc_std_error, 0.0);
    EXPECT_NEAR(mc.pb_true, q.pb_true, 4 * mc.mc_std_error);
    const double tol = 4 * mc.bound_std_error;
    EXPECT_NEAR(mc.lower_true, q.lower_true, tol);
    EXPECT_NEAR(mc.upper_true, q.upper_true, tol);
    EXPECT_NEAR(mc.mono_lower_true, q.mono_lower_true, tol);
    EXPECT_NEAR(mc.mono_upper_true, q.mono_upper_true, tol);
    EXPECT_EQ(mc.ph_true, 0.0);
  }
}

TEST(Oracle, ThreadCountDoesNotChangeMonteCarlo) {
  const auto c = benchmark_partition();
  const auto a = oracle_truth(0, c, 300000, 5, {}, 1);
  const auto b = oracle_truth(0, c, 300000, 5, {}, 4);
  EXPECT_EQ(a.pb_true, b.pb_true);
  EXPECT_EQ(a.lower_true, b.lower_true);
  EXPECT_EQ(a.upper_true, b.upper_true);
}

TEST(Oracle, NamedErrors) {
  const auto c = benchmark_partition();
  EXPECT_THROW(oracle_truth(2, c, 100000, 1), DataError);
  EXPECT_THROW(oracle_truth(0, c, 100, 1), ConfigError);
  EXPECT_THROW(oracle_quadrature(-1, c), DataError);
}

// Tier of Y^0 versus Y^1 directly from the simulated potential outcomes.
TEST(Simulate, EmpiricalBenefitMatchesTruth) {
  const auto c = benchmark_partition();
  const auto d = simulate(200000, 23);
  for (int s : {0, 1}) {
    double hits = 0, harms = 0, count = 0;
    for (std::size_t i = 0; i < d.observed.rows(); ++i) {
      if (d.observed.x[i] != s) continue;
      ++count;
      const auto t0 = c.tier_of(d.oracle.y0[i]);
      const auto t1 = c.tier_of(d.oracle.y1[i]);
      hits += t1 > t0;
      harms += t1 < t0;
    }
    const double pb = hits / count;
    const double se = std::sqrt(pb * (1 - pb) / count);
    EXPECT_NEAR(pb, oracle_quadrature(s, c).pb_true, 4 * se);
    EXPECT_EQ(harms, 0.0);
  }
}

TEST(Simulate, ImmuneSubgroupHasEqualArmMeans) {
  for (double w1 : {-1.0, -0.3, 0.0, 0.7, 1.0})
    for (double x : {0.0, 1.0}) {
      const auto [m0, m1] = immune_subgroup_check(w1, x);
      EXPECT_NEAR(m0, m1, 1e-15);
      EXPECT_EQ(scm_mean(w1, 1.0, x, 0), scm_mean(w1, 1.0, x, 1));
      EXPECT_NEAR(scm_mean(w1, 1.0, x, 0), m0, 1e-15);
    }
}

TEST(Simulate, PotentialOutcomesShareNoise) {
  const auto d = simulate(5000, 3);
  for (std::size_t i = 0; i < d.observed.rows(); ++i) {
    const double w1 = d.observed.cov(i, 0), w2 = d.observed.cov(i, 1);
    const int x = d.observed.x[i];
    EXPECT_NEAR(d.oracle.y1[i] - d.oracle.y0[i], scm_mean(w1, w2, x, 1) - scm_mean(w1, w2, x, 0),
                1e-12);
    EXPECT_EQ(d.observed.y[i], d.observed.a[i] ? d.oracle.y1[i] : d.oracle.y0[i]);
  }
}

TEST(Simulate, CovariateLawAndPropensity) {
  const auto d = simulate(100000, 8).observed;
  double x1 = 0, w2 = 0, treated = 0, expected = 0;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    x1 += d.x[i];
    w2 += d.cov(i, 1);
    treated += d.a[i];
    expected += scm_propensity(d.cov(i, 0), d.x[i]);
  }
  const double n = static_cast<double>(d.rows());
  EXPECT_NEAR(x1 / n, 0.5, 0.01);
  EXPECT_NEAR(w2 / n, 0.5, 0.01);
  EXPECT_NEAR(treated / n, expected / n, 0.01);
}

TEST(Simulate, DeterministicAndNamed) {
  const auto a = simulate(100, 42), b = simulate(100, 42), c = simulate(100, 43);
  EXPECT_EQ(a.observed.y, b.observed.y);
  EXPECT_NE(a.observed.y, c.observed.y);
  EXPECT_EQ(a.observed.covariate_names, (std::vector<std::string>{"w1", "w2"}));
  std::ostringstream out;
  write_csv(out, a.observed);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "w1,w2,x,a,y");
  EXPECT_THROW(simulate(0, 1), ConfigError);
}

TEST(Simulate, TruthModelsReproduceClosedFormNuisance) {
  const auto d = simulate(500, 9).observed;
  const ScmTruth truth(d);
  const auto models = scm_truth_as_models(d);
  const auto c = benchmark_partition();
  for (std::size_t i = 0; i < d.rows(); ++i) {
    EXPECT_NEAR(models.propensity(d, i), truth.propensity(d, i), 1e-12);
    double s1[2], s2[2];
    for (int a : {0, 1}) {
      truth.survival(d, i, a, c, s1);
      models.survival(d, i, a, c, s2);
      EXPECT_NEAR(s1[0], s2[0], 1e-12);
      EXPECT_NEAR(s1[1], s2[1], 1e-12);
    }
  }
}
