#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "errors.hpp"

namespace tiered {

namespace lp {

/// Minimises c'x subject to A x = b, x >= 0 with a dense two-phase tableau
/// simplex (Bland's rule). Rows with b < 0 are negated first. Returns nullopt
/// when the constraints are infeasible. Problems here have a few dozen
/// variables, so no attempt is made at sparsity or warm starts.
inline std::optional<Eigen::VectorXd> minimize(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                               const Eigen::VectorXd& c, double eps = 1e-12) {
  const Eigen::Index m = A.rows(), n = A.cols();
  // Tableau columns: n structural, m artificial, 1 rhs.
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m + 1, n + m + 1);
  std::vector<Eigen::Index> basis(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    const double sgn = b[i] < 0 ? -1.0 : 1.0;
    T.row(i).head(n) = sgn * A.row(i);
    T(i, n + i) = 1.0;
    T(i, n + m) = sgn * b[i];
    basis[static_cast<std::size_t>(i)] = n + i;
  }

  auto pivot = [&](Eigen::Index r, Eigen::Index col) {
    T.row(r) /= T(r, col);
    for (Eigen::Index i = 0; i <= m; ++i)
      if (i != r && T(i, col) != 0.0) T.row(i) -= T(i, col) * T.row(r);
    basis[static_cast<std::size_t>(r)] = col;
  };

  // Runs simplex on objective row m over columns [0, ncols).
  auto run = [&](Eigen::Index ncols) {
    for (int guard = 0; guard < 100000; ++guard) {
      Eigen::Index enter = -1;
      for (Eigen::Index j = 0; j < ncols; ++j)
        if (T(m, j) < -eps) {
          enter = j;
          break;
        }
      if (enter < 0) return true;
      Eigen::Index leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < m; ++i) {
        if (T(i, enter) > eps) {
          const double ratio = T(i, n + m) / T(i, enter);
          if (ratio < best - eps ||
              (std::abs(ratio - best) <= eps && leave >= 0 &&
               basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)])) {
            best = ratio;
            leave = i;
          }
        }
      }
      if (leave < 0) return false;  // unbounded
      pivot(leave, enter);
    }
    throw NumericalError("simplex iteration limit reached");
  };

  // Phase 1: minimise the sum of artificials.
  T.row(m).setZero();
  for (Eigen::Index i = 0; i < m; ++i) T.row(m) -= T.row(i);
  for (Eigen::Index i = 0; i < m; ++i) T(m, n + i) = 0.0;
  run(n + m);
  if (-T(m, n + m) > 1e-9) return std::nullopt;

  // Drive zero-level artificials out of the basis where possible.
  for (Eigen::Index i = 0; i < m; ++i) {
    if (basis[static_cast<std::size_t>(i)] < n) continue;
    for (Eigen::Index j = 0; j < n; ++j)
      if (std::abs(T(i, j)) > 1e-9) {
        pivot(i, j);
        break;
      }
  }

  // Phase 2 on structural columns only.
  T.row(m).setZero();
  T.row(m).head(n) = c.transpose();
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index bj = basis[static_cast<std::size_t>(i)];
    if (bj < n && T(m, bj) != 0.0) T.row(m) -= T(m, bj) * T.row(i);
  }
  if (!run(n)) throw NumericalError("linear program is unbounded");

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index bj = basis[static_cast<std::size_t>(i)];
    if (bj < n) x[bj] = T(i, n + m);
  }
  return x;
}

}  // namespace lp

/// Joint tier probabilities q(a, b) = P(Y^0 in I_a, Y^1 in I_b), 0-based.
struct CounterfactualCellMatrix {
  Eigen::MatrixXd q;

  std::size_t tiers() const { return static_cast<std::size_t>(q.rows()); }
  Eigen::VectorXd margins0() const { return q.rowwise().sum(); }
  Eigen::VectorXd margins1() const { return q.colwise().sum().transpose(); }
  double trace() const { return q.trace(); }

  double benefit() const {
    double s = 0.0;
    for (Eigen::Index a = 0; a < q.rows(); ++a)
      for (Eigen::Index b = a + 1; b < q.cols(); ++b) s += q(a, b);
    return s;
  }

  double harm() const {
    double s = 0.0;
    for (Eigen::Index a = 0; a < q.rows(); ++a)
      for (Eigen::Index b = 0; b < a; ++b) s += q(a, b);
    return s;
  }

  /// No mass on Y^0 tier above Y^1 tier (nonharmful exposure).
  bool monotone(double tol = 0.0) const { return harm() <= tol; }

  /// Rows indexed by the Y^1 tier, columns by the Y^0 tier, so a monotone
  /// matrix prints as lower triangular.
  Eigen::MatrixXd display() const { return q.transpose(); }
};

struct Witness {
  std::size_t k = 0;
  std::vector<double> margins0;
  std::vector<double> margins1;
  CounterfactualCellMatrix least;  // smallest benefit
  CounterfactualCellMatrix most;   // largest benefit
  bool unique = false;
};

/// A monotone coupling of two tier distributions exists iff Y^1 first-order
/// stochastically dominates Y^0.
inline bool monotone_coupling_exists(std::span<const double> m0, std::span<const double> m1,
                                     double tol = 1e-12) {
  double c0 = 0.0, c1 = 0.0;
  for (std::size_t k = 0; k < m0.size(); ++k) {
    c0 += m0[k];
    c1 += m1[k];
    if (c1 > c0 + tol) return false;
  }
  return true;
}

/// Two monotone cell matrices with the given tier margins: the ones with the
/// smallest and largest probability of benefit. For K >= 3 these generally
/// differ, showing the benefit is not pinned down by the margins even under
/// monotonicity.
inline Witness nonidentifiability_witness(std::size_t k, std::span<const double> margins0,
                                          std::span<const double> margins1) {
  if (k <= 2)
    throw ConfigError("K = " + std::to_string(k) +
                      ": the monotone system is uniquely solvable for K <= 2");
  if (margins0.size() != k || margins1.size() != k)
    throw ConfigError("margins must have K entries");
  for (auto m : {margins0, margins1}) {
    double total = 0.0;
    for (double v : m) {
      if (!(v >= 0.0)) throw ConfigError("margins must be nonnegative");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("margins must sum to one");
  }

  // Variables: q(a, b) for a <= b, row-major.
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a; b < k; ++b) cells.emplace_back(a, b);
  const auto nv = static_cast<Eigen::Index>(cells.size());
  // K row-sum constraints and K - 1 column-sum constraints (the last is implied).
  const auto nc = static_cast<Eigen::Index>(2 * k - 1);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(nc, nv);
  Eigen::VectorXd rhs(nc);
  for (Eigen::Index v = 0; v < nv; ++v) {
    const auto [a, b] = cells[static_cast<std::size_t>(v)];
    A(static_cast<Eigen::Index>(a), v) = 1.0;
    if (b + 1 < k) A(static_cast<Eigen::Index>(k + b), v) = 1.0;
  }
  for (std::size_t a = 0; a < k; ++a) rhs[static_cast<Eigen::Index>(a)] = margins0[a];
  for (std::size_t b = 0; b + 1 < k; ++b) rhs[static_cast<Eigen::Index>(k + b)] = margins1[b];

  Eigen::VectorXd benefit(nv);
  for (Eigen::Index v = 0; v < nv; ++v)
    benefit[v] = cells[static_cast<std::size_t>(v)].first < cells[static_cast<std::size_t>(v)].second;

  const auto lo = lp::minimize(A, rhs, benefit);
  if (!lo) throw DataError("infeasible margins: no monotone coupling exists");
  const auto hi = lp::minimize(A, rhs, -benefit);
  if (!hi) throw DataError("infeasible margins: no monotone coupling exists");

  auto to_matrix = [&](const Eigen::VectorXd& x) {
    CounterfactualCellMatrix m;
    m.q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    for (Eigen::Index v = 0; v < nv; ++v) {
      const auto [a, b] = cells[static_cast<std::size_t>(v)];
      m.q(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = std::max(0.0, x[v]);
    }
    return m;
  };
  Witness w;
  w.k = k;
  w.margins0.assign(margins0.begin(), margins0.end());
  w.margins1.assign(margins1.begin(), margins1.end());
  w.least = to_matrix(*lo);
  w.most = to_matrix(*hi);
  w.unique = std::abs(w.most.benefit() - w.least.benefit()) <= 1e-9;
  return w;
}

inline nlohmann::json to_json(const Witness& w) {
  auto rows = [](const Eigen::MatrixXd& m) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)].push_back(m(i, j));
    return out;
  };
  return {{"K", w.k},
          {"margins0", w.margins0},
          {"margins1", w.margins1},
          {"Q_a", rows(w.least.display())},
          {"Q_b", rows(w.most.display())},
          {"pb_a", w.least.benefit()},
          {"pb_b", w.most.benefit()},
          {"unique", w.unique}};
}

}  // namespace tiered
