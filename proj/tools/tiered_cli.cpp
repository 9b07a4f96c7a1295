// Command-line front end: simulate, estimate, benchmark, witness, oracle.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <tiered/tiered.hpp>

namespace {

using nlohmann::json;
using namespace tiered;

std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  for (const auto& cell : csv::split(s)) {
    if (cell.empty()) throw ConfigError(what + ": empty entry in '" + s + "'");
    out.push_back(csv::parse_double(cell, 0, what));
  }
  return out;
}

std::vector<std::string> parse_names(const std::string& s) {
  std::vector<std::string> out;
  for (auto& cell : csv::split(s))
    if (!cell.empty()) out.push_back(cell);
  return out;
}

/// Options of one subcommand, resolvable from flags or a JSON config file.
/// A flag given on the command line always wins over the file.
class Options {
 public:
  explicit Options(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "JSON file with option values");
  }

  template <typename T>
  CLI::Option* add(const std::string& name, T& var, const std::string& help,
                   const std::string& alias = "") {
    auto* opt = app_->add_option("--" + name + (alias.empty() ? "" : ",--" + alias), var, help);
    if constexpr (!std::is_same_v<T, std::string>) opt->capture_default_str();
    appliers_.push_back([this, name, &var, opt](const json& j) {
      if (opt->count() == 0 && j.contains(name)) var = j.at(name).get<T>();
    });
    return opt;
  }

  CLI::Option* flag(const std::string& name, bool& var, const std::string& help) {
    auto* opt = app_->add_flag("--" + name, var, help);
    appliers_.push_back([name, &var, opt](const json& j) {
      if (opt->count() == 0 && j.contains(name)) var = j.at(name).get<bool>();
    });
    return opt;
  }

  void resolve() const {
    if (config_path_.empty()) return;
    std::ifstream in(config_path_);
    if (!in) throw ConfigError("cannot open config file '" + config_path_ + "'");
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("config file '" + config_path_ + "': " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    try {
      for (const auto& apply : appliers_) apply(j);
    } catch (const json::exception& e) {
      throw ConfigError("config file '" + config_path_ + "': " + e.what());
    }
  }

  const std::string& config_path() const { return config_path_; }

 private:
  CLI::App* app_;
  std::string config_path_;
  std::vector<std::function<void(const json&)>> appliers_;
};

/// Writes to the named file, or stdout for "" and "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
  if (!out) throw ConfigError("failed writing '" + path + "'");
}

unsigned resolve_threads(int requested) {
  if (requested > 0) return static_cast<unsigned>(requested);
  return std::max(1u, std::thread::hardware_concurrency());
}

// Learner flags shared by estimate and benchmark.
struct LearnerFlags {
  std::string link = "logit";
  std::string basis_outcome;
  std::string basis_propensity;
  double clip = 0.01;

  void attach(Options& o) {
    o.add("link", link, "propensity link: logit or probit");
    o.add("basis-outcome", basis_outcome, "comma-separated outcome terms, e.g. 1,w1,a,a*w1");
    o.add("basis-propensity", basis_propensity, "comma-separated propensity terms");
    o.add("clip", clip, "propensity clipping epsilon: scores kept in [eps, 1 - eps]");
  }

  NuisanceConfig resolve(const ObservationTable* layout) const {
    NuisanceConfig cfg;
    cfg.link = parse_link(link);
    if (!(clip > 0.0 && clip < 0.5)) throw ConfigError("--clip must lie in (0, 0.5)");
    cfg.clip = {clip, 1.0 - clip};
    if (!basis_outcome.empty()) {
      cfg.outcome_basis = parse_names(basis_outcome);
    } else if (layout) {
      cfg.outcome_basis = default_outcome_basis(*layout);
    }
    if (!basis_propensity.empty()) {
      cfg.propensity_basis = parse_names(basis_propensity);
    } else if (layout) {
      cfg.propensity_basis = default_propensity_basis(*layout);
    }
    return cfg;
  }

  // The simulation's exact outcome basis when its covariates are present,
  // otherwise main effects with exposure interactions.
  static BasisSpec default_outcome_basis(const ObservationTable& t) {
    if (t.covariates() == 2 && t.covariate_index("w1") && t.covariate_index("w2"))
      return saturated_outcome_basis();
    BasisSpec b = {"1"};
    for (const auto& w : t.covariate_names) b.push_back(w);
    b.insert(b.end(), {"x", "a"});
    for (const auto& w : t.covariate_names) b.push_back("a*" + w);
    b.push_back("a*x");
    return b;
  }

  static BasisSpec default_propensity_basis(const ObservationTable& t) {
    BasisSpec b = {"1"};
    for (const auto& w : t.covariate_names) b.push_back(w);
    b.push_back("x");
    return b;
  }
};

json nuisance_json(const NuisancePair& p) {
  return {{"propensity", to_json(p.propensity_model)}, {"outcome", to_json(p.outcome_model)}};
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  long long n = 5000;
  std::uint64_t seed = 0;
  bool with_oracle = false;
  std::string out;
};

int run_simulate(const SimulateArgs& a) {
  if (a.n < 1) throw ConfigError("--n must be at least 1");
  const auto d = simulate(static_cast<std::size_t>(a.n), a.seed);
  std::ostringstream s;
  write_csv(s, d.observed, a.with_oracle ? &d.oracle : nullptr);
  emit(a.out, s.str());
  return 0;
}

// ---------------------------------------------------------------- estimate

struct EstimateArgs {
  std::string input;
  std::string thresholds;
  std::vector<std::string> estimators = {"plug-in"};
  long long l = 0;
  double h = 0.05;
  long long H = 100000;
  double split = 0.0;
  double level = 0.95;
  double ridge = 0.0;
  std::uint64_t seed = 0;
  bool harm = false;
  bool mono = false;
  bool project = false;
  std::string out;
  LearnerFlags learner;
};

std::vector<EstimatorSpec> resolve_estimators(const std::vector<std::string>& names, double h) {
  std::vector<EstimatorSpec> out;
  auto push = [&](EstimatorSpec e) {
    for (const auto& x : out)
      if (x.method == e.method && x.h == e.h) return;
    out.push_back(e);
  };
  for (const auto& raw : names) {
    for (const auto& name : parse_names(raw)) {
      std::string lower = name;
      std::transform(lower.begin(), lower.end(), lower.begin(),
                     [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
      if (lower == "all") {
        for (const auto& e : all_estimators()) push(e);
      } else if (lower == "1s-gelu") {
        push({Method::one_step_gelu, h});
      } else {
        push(parse_estimator(name));
      }
    }
  }
  if (out.empty()) throw ConfigError("no estimators selected");
  return out;
}

int run_estimate(const EstimateArgs& a) {
  if (a.thresholds.empty()) throw ConfigError("--thresholds is required");
  const TierPartition c(parse_list(a.thresholds, "thresholds"));
  if (a.H < 1) throw ConfigError("--H must be positive");
  if (!(a.level > 0.0 && a.level < 1.0)) throw ConfigError("--level must lie in (0, 1)");
  if (!(a.ridge >= 0.0)) throw ConfigError("--ridge must be >= 0");

  auto estimators = resolve_estimators(a.estimators, a.h);
  // The plug-in estimate is always reported.
  if (std::none_of(estimators.begin(), estimators.end(),
                   [](const EstimatorSpec& e) { return e.method == Method::plug_in; }))
    estimators.insert(estimators.begin(), {Method::plug_in, 0.0});
  const bool wants_split = std::any_of(estimators.begin(), estimators.end(), [](const auto& e) {
    return e.method == Method::one_step || e.method == Method::one_step_gelu;
  });
  const bool wants_s1s = std::any_of(estimators.begin(), estimators.end(),
                                     [](const auto& e) { return e.method == Method::s1s; });
  if (wants_split && !(a.split > 0.0 && a.split < 1.0))
    throw ConfigError("1S estimators need a held-out sample: pass --split <train fraction in (0, 1)>");
  if (a.mono && c.tiers() < 3) throw ConfigError("--mono needs at least three tiers");

  const ObservationTable data = a.input == "-" ? read_csv(std::cin) : read_csv_file(a.input);
  if (wants_s1s && !(a.l > 0 && static_cast<std::size_t>(a.l) < data.rows()))
    throw ConfigError("S1S needs 0 < --l < n (n = " + std::to_string(data.rows()) + ")");
  const NuisanceConfig ncfg = a.learner.resolve(&data);
  const auto strata = data.strata();
  const auto draws = static_cast<std::size_t>(a.H);

  std::vector<Contrast> contrasts = {Contrast::benefit};
  if (a.harm) contrasts.push_back(Contrast::harm);

  const NuisancePair full = fit_nuisance(data, ncfg);
  json nuisance = {{"full_sample", nuisance_json(full)}};

  std::optional<std::pair<NuisancePair, ObservationTable>> split_fit;
  if (wants_split) {
    const auto [train, eval] = split_sample(data.rows(), a.split, a.seed);
    const ObservationTable train_t = data.subset(train);
    split_fit.emplace(fit_nuisance(train_t, ncfg), data.subset(eval));
    nuisance["training_split"] = nuisance_json(split_fit->first);
    nuisance["training_split"]["rows"] = train.size();
  }

  // estimates[contrast][stratum] in selection order.
  std::vector<std::map<int, std::vector<BoundsEstimate>>> results(contrasts.size());
  std::vector<json> s1s_meta;
  for (std::size_t ci = 0; ci < contrasts.size(); ++ci) {
    const Contrast ct = contrasts[ci];
    for (const auto& spec : estimators) {
      if (spec.method == Method::s1s) {
        S1SConfig sc;
        sc.nuisance = ncfg;
        sc.initial_batch = static_cast<std::size_t>(a.l);
        sc.seed = a.seed;
        sc.ridge = a.ridge;
        sc.contrast = ct;
        const auto res = s1s(data, c, sc);
        for (const auto& e : res.estimates) results[ci][e.stratum].push_back(e);
        s1s_meta.push_back({{"contrast", to_string(ct)},
                            {"permutation_seed", res.permutation_seed},
                            {"steps", res.steps},
                            {"ridge_steps", res.ridge_steps},
                            {"nonconverged_fits", res.nonconverged_fits}});
        continue;
      }
      for (int s : strata) {
        BoundsEstimate e;
        switch (spec.method) {
          case Method::plug_in: e = plugin_bounds(full, data, s, c, ct); break;
          case Method::one_step:
            e = one_step(split_fit->first, split_fit->second, s, c, ct);
            break;
          case Method::one_step_gelu:
            e = one_step_gelu(split_fit->first, split_fit->second, s, c, spec.h, ct);
            break;
          default: break;
        }
        results[ci][s].push_back(e);
      }
    }
    if (a.mono && ct == Contrast::benefit)
      for (int s : strata) results[ci][s].push_back(mono_bounds(full, data, s, c));
  }

  auto estimate_json = [&](BoundsEstimate e) {
    if (a.project) e = project_to_parameter_space(e);
    json j = to_json(e);
    if (e.covariance) j["region"] = to_json(uncertainty_region(e, a.level, draws, a.seed));
    return j;
  };

  json out_strata = json::array();
  for (int s : strata) {
    json entry = {{"stratum", s}, {"units", data.rows_in_stratum(s).size()}};
    for (std::size_t ci = 0; ci < contrasts.size(); ++ci) {
      json arr = json::array();
      for (const auto& e : results[ci][s]) arr.push_back(estimate_json(e));
      entry[contrasts[ci] == Contrast::benefit ? "benefit" : "harm"] = arr;
    }
    out_strata.push_back(entry);
  }

  std::vector<std::string> names;
  for (const auto& e : estimators) names.push_back(e.name());
  json config = {{"command", "estimate"},
                 {"input", a.input},
                 {"rows", data.rows()},
                 {"covariates", data.covariate_names},
                 {"thresholds", std::vector<double>(c.thresholds().begin(), c.thresholds().end())},
                 {"estimators", names},
                 {"l", a.l},
                 {"h", a.h},
                 {"H", a.H},
                 {"split", a.split},
                 {"level", a.level},
                 {"ridge", a.ridge},
                 {"seed", a.seed},
                 {"harm", a.harm},
                 {"mono", a.mono},
                 {"project", a.project},
                 {"nuisance", to_json(ncfg)}};
  json report = {{"version", kVersion}, {"config", config}, {"nuisance", nuisance},
                 {"strata", out_strata}};
  if (!s1s_meta.empty()) report["s1s"] = s1s_meta;
  emit(a.out, report.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------- benchmark

struct BenchmarkArgs {
  std::string profile = "desk";
  std::vector<std::string> estimators = {"all"};
  long long n = 0, l = 0, reps = 0;
  std::uint64_t seed = 0;
  double split = 0.5;
  double ridge = 0.0;
  int threads = 0;
  std::string out;
  std::string summary;
  LearnerFlags learner;
};

int run_benchmark(const BenchmarkArgs& a, const CLI::App& sub) {
  BenchmarkConfig cfg = benchmark_profile(a.profile);
  cfg.estimators = resolve_estimators(a.estimators, 0.05);
  if (sub.count("--n") || a.n > 0) cfg.n = static_cast<std::size_t>(std::max(0LL, a.n));
  if (sub.count("--l") || a.l > 0) cfg.l = static_cast<std::size_t>(std::max(0LL, a.l));
  if (sub.count("--reps") || a.reps > 0) cfg.reps = static_cast<std::size_t>(std::max(0LL, a.reps));
  cfg.seed = a.seed;
  cfg.split = a.split;
  cfg.ridge = a.ridge;
  cfg.threads = resolve_threads(a.threads);
  if (!a.learner.basis_outcome.empty() || !a.learner.basis_propensity.empty() ||
      a.learner.link != "logit" || a.learner.clip != 0.01) {
    cfg.nuisance = a.learner.resolve(nullptr);
  }
  const auto report = coverage_benchmark(cfg);
  std::ostringstream csv_text;
  write_csv(csv_text, report);
  emit(a.out, csv_text.str());
  std::string summary = a.summary;
  if (summary.empty() && !a.out.empty() && a.out != "-") summary = a.out + ".json";
  if (!summary.empty()) {
    json j = to_json(report);
    j["config"]["profile"] = a.profile;
    emit(summary, j.dump(2) + "\n");
  }
  return 0;
}

// ---------------------------------------------------------------- witness

struct WitnessArgs {
  long long k = 3;
  std::string margins0 = "0.5,0.3,0.2";
  std::string margins1 = "0.2,0.3,0.5";
  std::string out;
};

int run_witness(const WitnessArgs& a) {
  if (a.k < 1) throw ConfigError("--k must be positive");
  const auto m0 = parse_list(a.margins0, "margins0");
  const auto m1 = parse_list(a.margins1, "margins1");
  const auto w = nonidentifiability_witness(static_cast<std::size_t>(a.k), m0, m1);
  json j = to_json(w);
  j["version"] = kVersion;
  emit(a.out, j.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------- oracle

struct OracleArgs {
  std::string thresholds = "-1.42,1.09";
  std::vector<int> strata = {0, 1};
  long long mc = 1000000;
  long long panels = 512;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out;
};

int run_oracle(const OracleArgs& a) {
  const TierPartition c(parse_list(a.thresholds, "thresholds"));
  if (a.mc < 10000) throw ConfigError("--mc must be at least 10000");
  if (a.panels < 1) throw ConfigError("--panels must be positive");
  json arr = json::array();
  for (int s : a.strata) {
    if (s != 0 && s != 1) throw ConfigError("--stratum must be 0 or 1");
    const auto mc = oracle_truth(s, c, static_cast<std::size_t>(a.mc), a.seed, {},
                                 resolve_threads(a.threads));
    const auto quad = oracle_quadrature(s, c, {}, static_cast<std::size_t>(a.panels));
    arr.push_back({{"stratum", s}, {"monte_carlo", to_json(mc)}, {"quadrature", to_json(quad)}});
  }
  json config = {{"command", "oracle"},
                 {"thresholds", std::vector<double>(c.thresholds().begin(), c.thresholds().end())},
                 {"mc", a.mc},
                 {"panels", a.panels},
                 {"seed", a.seed}};
  emit(a.out, json{{"version", kVersion}, {"config", config}, {"strata", arr}}.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bounds and inference for the probability of tiered benefit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s_sim = app.add_subcommand("simulate", "draw a dataset from the benchmark structural model");
  Options o_sim(s_sim);
  o_sim.add("n", sim.n, "number of rows");
  o_sim.add("seed", sim.seed, "random seed");
  o_sim.flag("with-oracle", sim.with_oracle, "append potential outcomes y0,y1");
  s_sim->add_option("-o,--output", sim.out, "output CSV (default stdout)");

  EstimateArgs est;
  auto* s_est = app.add_subcommand("estimate", "estimate bounds on a CSV with columns w*,x,a,y");
  s_est->set_help_flag("--help", "print this help message and exit");  // -h is the gelu smoothing
  Options o_est(s_est);
  s_est->add_option("input", est.input, "input CSV ('-' for stdin)")->required();
  o_est.add("thresholds", est.thresholds, "comma-separated cut-points c_1 < ... < c_{K-1}");
  o_est.add("estimator", est.estimators, "plug-in, 1s, 1s-gelu, 1s-gelu(<h>), s1s or all",
            "estimators")
      ->delimiter(',');
  o_est.add("l", est.l, "S1S initial batch size");
  o_est.add("h", est.h, "gelu smoothing for 1s-gelu");
  o_est.add("H", est.H, "Monte Carlo draws for uncertainty regions");
  o_est.add("split", est.split, "training fraction for 1S sample splitting");
  o_est.add("level", est.level, "confidence level");
  o_est.add("ridge", est.ridge, "ridge added to S1S batch covariances");
  o_est.add("seed", est.seed, "random seed");
  o_est.flag("harm", est.harm, "also report probability-of-harm bounds");
  o_est.flag("mono", est.mono, "also report plug-in bounds under monotonicity");
  o_est.flag("project", est.project, "project estimates onto 0 <= lower <= upper <= 1");
  s_est->add_option("-o,--output", est.out, "output JSON (default stdout)");
  est.learner.attach(o_est);

  BenchmarkArgs bench;
  auto* s_bench = app.add_subcommand("benchmark", "coverage study on the structural model");
  Options o_bench(s_bench);
  o_bench.add("profile", bench.profile, "desk (n=1500, l=600, 60 reps) or paper (5000, 2000, 200)");
  o_bench.add("estimators", bench.estimators, "comma-separated estimators or all", "estimator")
      ->delimiter(',');
  o_bench.add("n", bench.n, "override sample size");
  o_bench.add("l", bench.l, "override S1S initial batch");
  o_bench.add("reps", bench.reps, "override replication count");
  o_bench.add("seed", bench.seed, "random seed");
  o_bench.add("split", bench.split, "training fraction for 1S");
  o_bench.add("ridge", bench.ridge, "ridge added to S1S batch covariances");
  o_bench.add("threads", bench.threads, "worker threads (0: all cores)");
  s_bench->add_option("-o,--output", bench.out, "output CSV (default stdout)");
  s_bench->add_option("--summary", bench.summary, "JSON summary path (default <output>.json)");
  bench.learner.attach(o_bench);

  WitnessArgs wit;
  auto* s_wit = app.add_subcommand("witness", "two monotone couplings with equal margins, different benefit");
  Options o_wit(s_wit);
  o_wit.add("k", wit.k, "number of tiers");
  o_wit.add("margins0", wit.margins0, "tier probabilities without exposure");
  o_wit.add("margins1", wit.margins1, "tier probabilities with exposure");
  s_wit->add_option("-o,--output", wit.out, "output JSON (default stdout)");

  OracleArgs orc;
  auto* s_orc = app.add_subcommand("oracle", "ground-truth benefit and bounds of the structural model");
  Options o_orc(s_orc);
  o_orc.add("thresholds", orc.thresholds, "comma-separated cut-points");
  o_orc.add("stratum", orc.strata, "strata to evaluate")->delimiter(',');
  o_orc.add("mc", orc.mc, "Monte Carlo draws per stratum");
  o_orc.add("panels", orc.panels, "quadrature panels over w1");
  o_orc.add("seed", orc.seed, "random seed");
  o_orc.add("threads", orc.threads, "worker threads (0: all cores)");
  s_orc->add_option("-o,--output", orc.out, "output JSON (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::config);
  }

  try {
    if (s_sim->parsed()) {
      o_sim.resolve();
      return run_simulate(sim);
    }
    if (s_est->parsed()) {
      o_est.resolve();
      return run_estimate(est);
    }
    if (s_bench->parsed()) {
      o_bench.resolve();
      return run_benchmark(bench, *s_bench);
    }
    if (s_wit->parsed()) {
      o_wit.resolve();
      return run_witness(wit);
    }
    if (s_orc->parsed()) {
      o_orc.resolve();
      return run_oracle(orc);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::config);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::data);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::numerical);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return static_cast<int>(ExitCode::config);
}
