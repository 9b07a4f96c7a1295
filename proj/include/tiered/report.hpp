#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "benchmark.hpp"
#include "bounds.hpp"
#include "inference.hpp"
#include "simulation.hpp"
#include "version.hpp"

namespace tiered {

inline nlohmann::json to_json(const BoundsEstimate& e) {
  nlohmann::json j = {{"stratum", e.stratum},
                      {"method", to_string(e.method)},
                      {"contrast", to_string(e.contrast)},
                      {"lower", e.lower},
                      {"upper", e.upper},
                      {"n_units", e.n_units},
                      {"flags", e.flags}};
  if (e.covariance) {
    const auto& c = *e.covariance;
    j["cov"] = {{c(0, 0), c(0, 1)}, {c(1, 0), c(1, 1)}};
  } else {
    j["cov"] = nullptr;
  }
  if (e.method == Method::one_step_gelu) j["h"] = e.smoothing;
  return j;
}

inline nlohmann::json to_json(const UncertaintyRegion& r) {
  return {{"stratum", r.stratum}, {"lo", r.lo},           {"hi", r.hi},
          {"level", r.level},     {"s_hat", r.s_hat},     {"mc_draws", r.mc_draws},
          {"flags", r.flags}};
}

inline nlohmann::json to_json(const OracleResult& r) {
  nlohmann::json j = {{"stratum", r.stratum},
                      {"pb", r.pb_true},
                      {"ph", r.ph_true},
                      {"lower", r.lower_true},
                      {"upper", r.upper_true},
                      {"harm_lower", r.harm_lower_true},
                      {"harm_upper", r.harm_upper_true},
                      {"mono_lower", r.mono_lower_true},
                      {"mono_upper", r.mono_upper_true}};
  if (r.mc_samples > 0) {
    j["mc_samples"] = r.mc_samples;
    j["mc_std_error"] = r.mc_std_error;
    j["bound_std_error"] = r.bound_std_error;
  }
  return j;
}

inline nlohmann::json to_json(const NuisanceConfig& c) {
  return {{"link", to_string(c.link)},
          {"basis_propensity", c.propensity_basis},
          {"basis_outcome", c.outcome_basis},
          {"clip", {c.clip.lo, c.clip.hi}}};
}

inline nlohmann::json to_json(const BenchmarkConfig& c) {
  std::vector<std::string> names;
  for (const auto& e : c.estimators) names.push_back(e.name());
  return {{"estimators", names},     {"reps", c.reps},   {"n", c.n},
          {"l", c.l},                {"seed", c.seed},   {"split", c.split},
          {"level", c.level},        {"ridge", c.ridge}, {"thresholds", c.thresholds},
          {"nuisance", to_json(c.nuisance)}};
}

/// JSON summary of a coverage study: resolved config, truth and per-row
/// coverage with flag and failure counts.
inline nlohmann::json to_json(const BenchmarkReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"estimator", row.estimator},
                    {"stratum", row.stratum},
                    {"cov_lower_pct", row.cov_lower_pct},
                    {"cov_upper_pct", row.cov_upper_pct},
                    {"cov_joint_pct", row.cov_joint_pct},
                    {"mse_lower", row.mse_lower},
                    {"mse_upper", row.mse_upper},
                    {"failures", row.failures},
                    {"flag_counts", row.flag_counts}});
  }
  nlohmann::json truth = nlohmann::json::array();
  for (const auto& [s, t] : r.truth) truth.push_back(to_json(t));
  return {{"version", kVersion}, {"config", to_json(r.config)}, {"truth", truth}, {"rows", rows}};
}

}  // namespace tiered
