#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include <tiered/partition.hpp>
#include <tiered/rng.hpp>
#include <tiered/table.hpp>
#include <tiered/witness.hpp>

namespace test_support {

// Nuisance with per-row values set directly by the test.
struct FixedNuisance {
  std::vector<double> pi;
  std::vector<std::vector<double>> s0;  // survival S_1..S_{K-1}, arm 0
  std::vector<std::vector<double>> s1;  // arm 1

  double propensity(const tiered::ObservationTable&, std::size_t i) const { return pi[i]; }
  void survival(const tiered::ObservationTable&, std::size_t i, int a, const tiered::TierPartition&,
                std::span<double> out) const {
    const auto& s = a == 0 ? s0[i] : s1[i];
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = s[k];
  }
};

// Tail sums S_k = sum_{j > k} r_j of a tier distribution, k = 1..K-1.
inline std::vector<double> survival_from_tiers(const std::vector<double>& r) {
  std::vector<double> s(r.size() - 1);
  double tail = 0.0;
  for (std::size_t k = r.size() - 1; k >= 1; --k) {
    tail += r[k];
    s[k - 1] = tail;
  }
  return s;
}

inline std::vector<double> random_simplex(std::size_t k, tiered::Engine& eng) {
  std::gamma_distribution<double> g(0.7, 1.0);
  std::vector<double> v(k);
  double total = 0.0;
  for (auto& x : v) total += (x = g(eng) + 1e-12);
  for (auto& x : v) x /= total;
  return v;
}

// Range of P(tier(Y1) > tier(Y0)) over all couplings with the given margins,
// optionally restricted to monotone couplings, by linear programming.
inline std::pair<double, double> coupling_range(const std::vector<double>& m0,
                                                const std::vector<double>& m1, bool monotone) {
  const std::size_t k = m0.size();
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b)
      if (!monotone || a <= b) cells.emplace_back(a, b);
  const auto nv = static_cast<Eigen::Index>(cells.size());
  const auto nc = static_cast<Eigen::Index>(2 * k - 1);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(nc, nv);
  Eigen::VectorXd b(nc), cost(nv);
  for (Eigen::Index v = 0; v < nv; ++v) {
    const auto [r, c] = cells[static_cast<std::size_t>(v)];
    A(static_cast<Eigen::Index>(r), v) = 1.0;
    if (c + 1 < k) A(static_cast<Eigen::Index>(k + c), v) = 1.0;
    cost[v] = r < c ? 1.0 : 0.0;
  }
  for (std::size_t a = 0; a < k; ++a) b[static_cast<Eigen::Index>(a)] = m0[a];
  for (std::size_t c = 0; c + 1 < k; ++c) b[static_cast<Eigen::Index>(k + c)] = m1[c];
  const auto lo = tiered::lp::minimize(A, b, cost);
  const auto hi = tiered::lp::minimize(A, b, -cost);
  return {cost.dot(*lo), cost.dot(*hi)};
}

}  // namespace test_support
