#pragma once

#include <cctype>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bounds.hpp"
#include "errors.hpp"
#include "inference.hpp"
#include "nuisance.hpp"
#include "parallel.hpp"
#include "partition.hpp"
#include "rng.hpp"
#include "simulation.hpp"
#include "stabilized.hpp"

namespace tiered {

struct EstimatorSpec {
  Method method = Method::plug_in;
  double h = 0.0;  // gelu smoothing

  std::string name() const {
    if (method != Method::one_step_gelu) return to_string(method);
    char buf[48];
    std::snprintf(buf, sizeof buf, "1S-gelu(%g)", h);
    return buf;
  }
};

/// Accepts plug-in, 1S, S1S, 1S-gelu(<h>) (case-insensitive on the letters).
inline EstimatorSpec parse_estimator(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (s == "plug-in" || s == "plugin") return {Method::plug_in, 0.0};
  if (s == "1s") return {Method::one_step, 0.0};
  if (s == "s1s") return {Method::s1s, 0.0};
  const std::string prefix = "1s-gelu(";
  if (s.rfind(prefix, 0) == 0 && s.back() == ')') {
    const std::string num = s.substr(prefix.size(), s.size() - prefix.size() - 1);
    char* end = nullptr;
    const double h = std::strtod(num.c_str(), &end);
    if (end == num.c_str() || *end != '\0' || !(h > 0.0))
      throw ConfigError("gelu smoothing must be a positive number: " + s);
    return {Method::one_step_gelu, h};
  }
  throw ConfigError("unknown estimator '" + s + "'");
}

/// The estimator set of the coverage study.
inline std::vector<EstimatorSpec> all_estimators() {
  return {{Method::plug_in, 0.0},
          {Method::one_step, 0.0},
          {Method::one_step_gelu, 0.05},
          {Method::one_step_gelu, 0.15},
          {Method::s1s, 0.0}};
}

struct BenchmarkConfig {
  std::vector<EstimatorSpec> estimators = all_estimators();
  std::size_t reps = 60;
  std::size_t n = 1500;
  std::size_t l = 600;
  std::uint64_t seed = 0;
  double split = 0.5;  // training fraction for the 1S estimators
  double level = 0.95;
  double ridge = 0.0;
  NuisanceConfig nuisance{};
  ScmParams scm{};
  std::vector<double> thresholds = {-1.42, 1.09};
  unsigned threads = 1;
};

inline BenchmarkConfig benchmark_profile(const std::string& name) {
  BenchmarkConfig cfg;
  if (name == "desk") {
    cfg.n = 1500;
    cfg.l = 600;
    cfg.reps = 60;
  } else if (name == "paper") {
    cfg.n = 5000;
    cfg.l = 2000;
    cfg.reps = 200;
  } else {
    throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
  }
  return cfg;
}

inline void validate(const BenchmarkConfig& cfg) {
  if (cfg.estimators.empty()) throw ConfigError("no estimators selected");
  if (cfg.reps == 0) throw ConfigError("reps must be positive");
  if (cfg.n < 4) throw ConfigError("n must be at least 4");
  for (const auto& e : cfg.estimators) {
    if (e.method == Method::s1s && !(cfg.l > 0 && cfg.l < cfg.n))
      throw ConfigError("S1S needs 0 < l < n");
    if (e.method == Method::one_step_gelu && !(e.h > 0.0))
      throw ConfigError("gelu smoothing h must be > 0");
    if (e.method == Method::mono_plug_in)
      throw ConfigError("the coverage study does not cover monotone bounds");
  }
  if (!(cfg.split > 0.0 && cfg.split < 1.0)) throw ConfigError("split must lie in (0, 1)");
  TierPartition check(cfg.thresholds);
  (void)check;
}

/// Outcome of one estimator on one replicate and stratum.
struct ReplicateCell {
  bool ok = false;
  std::string error;
  double lower = 0.0;
  double upper = 0.0;
  bool cover_lower = false;
  bool cover_upper = false;
  std::vector<std::string> flags;
};

struct BenchmarkRow {
  std::string estimator;
  int stratum = 0;
  double cov_lower_pct = 0.0;
  double cov_upper_pct = 0.0;
  double cov_joint_pct = 0.0;
  double mse_lower = 0.0;
  double mse_upper = 0.0;
  std::size_t failures = 0;
  std::map<std::string, std::size_t> flag_counts;
};

struct BenchmarkReport {
  BenchmarkConfig config;
  std::map<int, OracleResult> truth;
  std::vector<BenchmarkRow> rows;

  const BenchmarkRow& row(const std::string& estimator, int stratum) const {
    for (const auto& r : rows)
      if (r.estimator == estimator && r.stratum == stratum) return r;
    throw ConfigError("no benchmark row for " + estimator + " in stratum " + std::to_string(stratum));
  }
};

inline std::uint64_t replicate_seed(std::uint64_t seed, std::size_t rep) {
  return make_stream(seed, "replicate", rep)();
}

namespace bench_detail {

inline void record(ReplicateCell& cell, const BoundsEstimate& e, const OracleResult& truth,
                   double level) {
  cell.ok = true;
  cell.lower = e.lower;
  cell.upper = e.upper;
  const auto [lo, hi] = wald_covers(e, truth.lower_true, truth.upper_true, level);
  cell.cover_lower = lo;
  cell.cover_upper = hi;
  cell.flags = e.flags;
}

}  // namespace bench_detail

/// Runs every configured estimator on `reps` independent simulated datasets
/// and scores them against the quadrature truth. Failed fits count as
/// non-covering and are tallied per row.
inline BenchmarkReport coverage_benchmark(const BenchmarkConfig& cfg) {
  validate(cfg);
  const TierPartition c(cfg.thresholds);
  BenchmarkReport report;
  report.config = cfg;
  const std::vector<int> strata = {0, 1};
  for (int s : strata) report.truth[s] = oracle_quadrature(s, c, cfg.scm);

  const std::size_t ne = cfg.estimators.size();
  // cells[rep][estimator][stratum]
  std::vector<std::vector<std::vector<ReplicateCell>>> cells(
      cfg.reps, std::vector<std::vector<ReplicateCell>>(ne, std::vector<ReplicateCell>(strata.size())));

  parallel_for(cfg.reps, cfg.threads, [&](std::size_t rep) {
    const std::uint64_t rs = replicate_seed(cfg.seed, rep);
    const ObservationTable data = simulate(cfg.n, rs, cfg.scm).observed;
    auto& out = cells[rep];

    std::optional<NuisancePair> full_fit;
    std::optional<std::pair<NuisancePair, ObservationTable>> split_fit;
    std::optional<S1SResult> s1s_res;

    for (std::size_t e = 0; e < ne; ++e) {
      const auto& spec = cfg.estimators[e];
      for (std::size_t si = 0; si < strata.size(); ++si) {
        auto& cell = out[e][si];
        const int s = strata[si];
        try {
          BoundsEstimate est;
          switch (spec.method) {
            case Method::plug_in:
              if (!full_fit) full_fit = fit_nuisance(data, cfg.nuisance);
              est = plugin_bounds(*full_fit, data, s, c);
              break;
            case Method::one_step:
            case Method::one_step_gelu: {
              if (!split_fit) {
                const auto [train, eval] = split_sample(data.rows(), cfg.split, rs);
                split_fit.emplace(fit_nuisance(data.subset(train), cfg.nuisance), data.subset(eval));
              }
              const auto& [nuis, eval_data] = *split_fit;
              est = spec.method == Method::one_step
                        ? one_step(nuis, eval_data, s, c)
                        : one_step_gelu(nuis, eval_data, s, c, spec.h);
              break;
            }
            case Method::s1s: {
              if (!s1s_res) {
                S1SConfig sc;
                sc.nuisance = cfg.nuisance;
                sc.initial_batch = cfg.l;
                sc.seed = rs;
                sc.ridge = cfg.ridge;
                s1s_res = s1s(data, c, sc);
              }
              bool found = false;
              for (const auto& x : s1s_res->estimates)
                if (x.stratum == s) {
                  est = x;
                  found = true;
                }
              if (!found) throw DataError("stratum missing from S1S output");
              break;
            }
            case Method::mono_plug_in:
              throw ConfigError("unsupported estimator");
          }
          bench_detail::record(cell, est, report.truth.at(s), cfg.level);
        } catch (const std::exception& ex) {
          cell.ok = false;
          cell.error = ex.what();
        }
      }
    }
  });

  for (std::size_t e = 0; e < ne; ++e) {
    for (std::size_t si = 0; si < strata.size(); ++si) {
      const int s = strata[si];
      const auto& truth = report.truth.at(s);
      BenchmarkRow row;
      row.estimator = cfg.estimators[e].name();
      row.stratum = s;
      std::size_t lo = 0, hi = 0, joint = 0, ok = 0;
      double se_lo = 0.0, se_hi = 0.0;
      for (std::size_t rep = 0; rep < cfg.reps; ++rep) {
        const auto& cell = cells[rep][e][si];
        if (!cell.ok) {
          ++row.failures;
          continue;
        }
        ++ok;
        lo += cell.cover_lower;
        hi += cell.cover_upper;
        joint += cell.cover_lower && cell.cover_upper;
        se_lo += (cell.lower - truth.lower_true) * (cell.lower - truth.lower_true);
        se_hi += (cell.upper - truth.upper_true) * (cell.upper - truth.upper_true);
        for (const auto& f : cell.flags) ++row.flag_counts[f];
      }
      const double reps = static_cast<double>(cfg.reps);
      row.cov_lower_pct = 100.0 * static_cast<double>(lo) / reps;
      row.cov_upper_pct = 100.0 * static_cast<double>(hi) / reps;
      row.cov_joint_pct = 100.0 * static_cast<double>(joint) / reps;
      if (ok > 0) {
        row.mse_lower = se_lo / static_cast<double>(ok);
        row.mse_upper = se_hi / static_cast<double>(ok);
      }
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

inline void write_csv(std::ostream& out, const BenchmarkReport& r) {
  out << "estimator,stratum,cov_lower_pct,cov_upper_pct,cov_joint_pct,mse_lower,mse_upper,reps,n,l,seed\n";
  char buf[256];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%s,%d,%.1f,%.1f,%.1f,%.6g,%.6g,%zu,%zu,%zu,%llu\n",
                  row.estimator.c_str(), row.stratum, row.cov_lower_pct, row.cov_upper_pct,
                  row.cov_joint_pct, row.mse_lower, row.mse_upper, r.config.reps, r.config.n,
                  r.config.l, static_cast<unsigned long long>(r.config.seed));
    out << buf;
  }
}

}  // namespace tiered
