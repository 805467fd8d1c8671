#pragma once

// Run configuration and experiment dispatch behind the command-line tool.
// A config is one JSON document; command-line flags are merged on top of it
// before defaults are applied.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "vbboost/boosting.hpp"
#include "vbboost/divergence_engine.hpp"
#include "vbboost/freq_validation.hpp"
#include "vbboost/io.hpp"
#include "vbboost/lmo.hpp"
#include "vbboost/target_models.hpp"

namespace vbboost {

/// Invalid configuration; the message starts with the offending field.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(field) {}
  [[nodiscard]] const std::string& field() const { return field_; }

 private:
  std::string field_;
};

inline const std::vector<std::string>& known_commands() {
  static const std::vector<std::string> k{
      "boost",      "validate-thm1", "validate-prop1", "validate-convergence",
      "curvature",  "lmo-debug",     "audit-expfam"};
  return k;
}

struct RunConfig {
  std::string command;

  // Conjugate model X_i ~ N(theta, sigma2 I), theta ~ N(mu0, sigma0_2 I).
  int d = 1;
  long n = 100;
  double sigma2 = 1.0;
  double mu0 = 0.0;
  double sigma0_2 = 1.0;
  double theta0 = 0.0;
  bool eq48_mean = false;

  // Family constraints; sigma_n unset means bandwidth_scale * n^(-1/2).
  double M = 2.0;
  double c0 = 1.5;
  std::optional<double> sigma_n;
  double bandwidth_scale = 1.0;

  // Experiments.
  std::vector<long> n_grid;
  int replicates = 200;
  int decomposition_replicates = 20;
  std::size_t decomposition_draws = 100000;

  // Boosting / LMO / divergence budgets.
  int iterations = 10;
  LmoConfig lmo;
  std::size_t eval_mc_samples = 10000;
  int quadrature_nodes = 4096;
  std::size_t curvature_trials = 2000;

  // Exponential-family audit.
  std::string family = "gaussian";
  double audit_lo = -2.0;
  double audit_hi = 2.0;
  int audit_points = 9;
  double alpha = 1.0;
  int mc_draws = 20000;

  std::uint64_t seed = 0;
  std::string seed_source = "default";
  int jobs = 1;
  std::string output_dir;

  [[nodiscard]] double resolved_sigma_n(long n_value) const {
    return sigma_n ? *sigma_n : bandwidth_scale / std::sqrt(static_cast<double>(n_value));
  }
  [[nodiscard]] FamilyConstraints constraints(long n_value) const {
    return FamilyConstraints{M, resolved_sigma_n(n_value), c0, d};
  }
  [[nodiscard]] ConjugateGaussianModel model() const {
    return ConjugateGaussianModel::isotropic(d, sigma2, mu0, sigma0_2, theta0);
  }
  [[nodiscard]] BoostConfig boost_config() const {
    BoostConfig b;
    b.iterations = iterations;
    b.lmo = lmo;
    b.lmo.seed = seed;
    if (d == 1)
      b.eval_budget = QuadratureSpec{quadrature_nodes, 512, 10.0};
    else
      b.eval_budget = MonteCarloBudget{eval_mc_samples, seed};
    b.seed = seed;
    b.curvature_trials = curvature_trials;
    return b;
  }
};

namespace detail {

template <class T>
void read_field(const json& doc, const char* key, T& out) {
  if (!doc.contains(key) || doc.at(key).is_null()) return;
  try {
    out = doc.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(key, "has the wrong type");
  }
}

// Per-command defaults that differ from the struct defaults.
inline void apply_command_defaults(RunConfig& c, const json& doc) {
  auto unset = [&](const char* k) { return !doc.contains(k) || doc.at(k).is_null(); };
  if (c.command == "validate-thm1" || c.command == "validate-prop1") {
    if (unset("n_grid")) c.n_grid = {100, 1000, 10000};
  } else if (c.command == "validate-convergence") {
    if (unset("n_grid")) c.n_grid = {1, 4, 9, 16, 25};
    // Weak prior and a bandwidth just below the posterior scale, so that the
    // posterior sd lies in [sigma_n, sqrt(c0) sigma_n].
    if (unset("sigma0_2")) c.sigma0_2 = 100.0;
    if (unset("bandwidth_scale")) c.bandwidth_scale = 0.9;
    if (unset("lmo_mc_samples")) c.lmo.mc_samples = 128;
    if (unset("lmo_restarts")) c.lmo.restarts = 3;
    if (unset("lmo_max_steps")) c.lmo.max_steps = 30;
  } else if (c.command == "curvature") {
    if (unset("sigma_n") && unset("n")) c.sigma_n = 1.0;
  }
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  const auto& cmds = known_commands();
  if (std::find(cmds.begin(), cmds.end(), c.command) == cmds.end())
    throw ConfigError("command", "unknown command \"" + c.command + "\"");
  if (!(c.c0 > 1.0 && c.c0 < 2.0))
    throw ConfigError("c0", "c0 must lie in (1,2) (got " + format_double(c.c0) + ")");
  if (!(c.M >= 0.0) || !std::isfinite(c.M))
    throw ConfigError("M", "must be a non-negative finite radius");
  if (c.sigma_n && !(*c.sigma_n > 0.0))
    throw ConfigError("sigma_n", "must be positive");
  if (!(c.bandwidth_scale > 0.0)) throw ConfigError("bandwidth_scale", "must be positive");
  if (c.d < 1) throw ConfigError("d", "must be >= 1");
  if (c.n < 1) throw ConfigError("n", "must be >= 1");
  if (!(c.sigma2 > 0.0)) throw ConfigError("sigma2", "must be positive");
  if (!(c.sigma0_2 > 0.0)) throw ConfigError("sigma0_2", "must be positive");
  if (c.replicates < 1) throw ConfigError("replicates", "must be >= 1");
  if (c.iterations < 1) throw ConfigError("iterations", "must be >= 1");
  if (c.lmo.mc_samples < 1) throw ConfigError("lmo_mc_samples", "must be >= 1");
  if (c.lmo.restarts < 1) throw ConfigError("lmo_restarts", "must be >= 1");
  if (c.lmo.max_steps < 0) throw ConfigError("lmo_max_steps", "must be >= 0");
  if (c.quadrature_nodes < 16) throw ConfigError("quadrature_nodes", "must be >= 16");
  if (c.curvature_trials < 1) throw ConfigError("curvature_trials", "must be >= 1");
  if (c.jobs < 1) throw ConfigError("jobs", "must be >= 1");
  if (c.decomposition_replicates < 1)
    throw ConfigError("decomposition_replicates", "must be >= 1");
  if (c.decomposition_draws < 2) throw ConfigError("decomposition_draws", "must be >= 2");
  for (std::size_t i = 0; i < c.n_grid.size(); ++i) {
    if (c.n_grid[i] < 1) throw ConfigError("n_grid", "entries must be >= 1");
    if (i > 0 && c.n_grid[i] <= c.n_grid[i - 1])
      throw ConfigError("n_grid", "must be strictly increasing");
  }
  if (std::abs(c.theta0) * std::sqrt(static_cast<double>(c.d)) > c.M)
    throw ConfigError("theta0", "truth lies outside the mean ball of radius M");
  if (c.family != "gaussian" && c.family != "bernoulli" && c.family != "poisson")
    throw ConfigError("family", "must be one of gaussian, bernoulli, poisson");
  if (c.audit_points < 1) throw ConfigError("audit_points", "must be >= 1");
  if (!(c.audit_hi >= c.audit_lo)) throw ConfigError("audit_hi", "must be >= audit_lo");
  if (!(c.alpha > 0.0 && c.alpha <= 1.0)) throw ConfigError("alpha", "must lie in (0,1]");
  if (c.mc_draws < 2) throw ConfigError("mc_draws", "must be >= 2");
  if (!c.output_dir.empty()) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(c.output_dir, ec);
    if (ec || !fs::is_directory(c.output_dir))
      throw ConfigError("output_dir", "cannot create \"" + c.output_dir + "\"");
    const auto probe = fs::path(c.output_dir) / ".write_probe";
    std::ofstream(probe.string()) << "";
    if (!fs::exists(probe)) throw ConfigError("output_dir", "is not writable");
    fs::remove(probe, ec);
  }
}

/// Resolves a config document. The seed falls back to VBBOOST_SEED, then 0.
inline RunConfig parse_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config", "must be a JSON object");
  RunConfig c;
  detail::read_field(doc, "command", c.command);
  detail::read_field(doc, "d", c.d);
  detail::read_field(doc, "n", c.n);
  detail::read_field(doc, "sigma2", c.sigma2);
  detail::read_field(doc, "mu0", c.mu0);
  detail::read_field(doc, "sigma0_2", c.sigma0_2);
  detail::read_field(doc, "theta0", c.theta0);
  detail::read_field(doc, "eq48_mean", c.eq48_mean);
  detail::read_field(doc, "M", c.M);
  detail::read_field(doc, "c0", c.c0);
  if (doc.contains("sigma_n") && !doc.at("sigma_n").is_null()) {
    double s = 0.0;
    detail::read_field(doc, "sigma_n", s);
    c.sigma_n = s;
  }
  detail::read_field(doc, "bandwidth_scale", c.bandwidth_scale);
  detail::read_field(doc, "n_grid", c.n_grid);
  detail::read_field(doc, "replicates", c.replicates);
  detail::read_field(doc, "decomposition_replicates", c.decomposition_replicates);
  detail::read_field(doc, "decomposition_draws", c.decomposition_draws);
  detail::read_field(doc, "iterations", c.iterations);
  detail::read_field(doc, "lmo_mc_samples", c.lmo.mc_samples);
  detail::read_field(doc, "lmo_restarts", c.lmo.restarts);
  detail::read_field(doc, "lmo_max_steps", c.lmo.max_steps);
  detail::read_field(doc, "eval_mc_samples", c.eval_mc_samples);
  detail::read_field(doc, "quadrature_nodes", c.quadrature_nodes);
  detail::read_field(doc, "curvature_trials", c.curvature_trials);
  detail::read_field(doc, "family", c.family);
  detail::read_field(doc, "audit_lo", c.audit_lo);
  detail::read_field(doc, "audit_hi", c.audit_hi);
  detail::read_field(doc, "audit_points", c.audit_points);
  detail::read_field(doc, "alpha", c.alpha);
  detail::read_field(doc, "mc_draws", c.mc_draws);
  detail::read_field(doc, "jobs", c.jobs);
  detail::read_field(doc, "output_dir", c.output_dir);
  if (doc.contains("seed") && !doc.at("seed").is_null()) {
    detail::read_field(doc, "seed", c.seed);
    c.seed_source = "config";
  } else if (const char* env = std::getenv("VBBOOST_SEED")) {
    try {
      std::size_t used = 0;
      c.seed = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
    } catch (const std::exception&) {
      throw ConfigError("VBBOOST_SEED", "must be a non-negative integer");
    }
    c.seed_source = "VBBOOST_SEED";
  }
  if (c.command.empty()) throw ConfigError("command", "is required");
  detail::apply_command_defaults(c, doc);
  validate(c);
  return c;
}

inline json to_json(const RunConfig& c) {
  return json{{"command", c.command},
              {"d", c.d},
              {"n", c.n},
              {"sigma2", c.sigma2},
              {"mu0", c.mu0},
              {"sigma0_2", c.sigma0_2},
              {"theta0", c.theta0},
              {"eq48_mean", c.eq48_mean},
              {"M", c.M},
              {"c0", c.c0},
              {"sigma_n", c.sigma_n ? json(*c.sigma_n) : json(nullptr)},
              {"bandwidth_scale", c.bandwidth_scale},
              {"n_grid", c.n_grid},
              {"replicates", c.replicates},
              {"decomposition_replicates", c.decomposition_replicates},
              {"decomposition_draws", c.decomposition_draws},
              {"iterations", c.iterations},
              {"lmo_mc_samples", c.lmo.mc_samples},
              {"lmo_restarts", c.lmo.restarts},
              {"lmo_max_steps", c.lmo.max_steps},
              {"eval_mc_samples", c.eval_mc_samples},
              {"quadrature_nodes", c.quadrature_nodes},
              {"curvature_trials", c.curvature_trials},
              {"family", c.family},
              {"audit_lo", c.audit_lo},
              {"audit_hi", c.audit_hi},
              {"audit_points", c.audit_points},
              {"alpha", c.alpha},
              {"mc_draws", c.mc_draws},
              {"seed", c.seed},
              {"seed_source", c.seed_source},
              {"jobs", c.jobs},
              {"output_dir", c.output_dir}};
}

// ---------------------------------------------------------------------------

namespace detail {

struct Artifacts {
  json report;
  // file name -> contents, written in order.
  std::vector<std::pair<std::string, std::string>> files;

  template <class F>
  void add(const std::string& name, F&& writer) {
    std::ostringstream os;
    writer(os);
    files.emplace_back(name, os.str());
  }
};

inline Artifacts run_curvature(const RunConfig& cfg) {
  const auto c = FamilyConstraints::make(cfg.M, cfg.resolved_sigma_n(cfg.n), cfg.c0, cfg.d);
  const auto rep = curvature_sample(c, cfg.curvature_trials, cfg.seed,
                                    QuadratureSpec{cfg.quadrature_nodes, 512, 10.0});
  Artifacts a{to_json(rep), {}};
  a.add("curvature.csv", [&](std::ostream& os) { write_curvature_csv(os, rep); });
  return a;
}

inline Dataset command_dataset(const RunConfig& cfg) {
  return simulate_data(cfg.model(), cfg.n, replicate_seed(cfg.seed, cfg.n, 0));
}

inline PosteriorTarget command_target(const RunConfig& cfg, const Dataset& data) {
  auto t = make_conjugate_target(cfg.model(), data);
  if (cfg.eq48_mean)
    t.exact = posterior_params(cfg.model(), data, PosteriorUpdate::EqualCovMean);
  return t;
}

inline Artifacts run_boost_command(const RunConfig& cfg) {
  const auto data = command_dataset(cfg);
  const auto t = command_target(cfg, data);
  const auto c = FamilyConstraints::make(cfg.M, cfg.resolved_sigma_n(cfg.n), cfg.c0, cfg.d);
  const IsotropicGaussian init(Vector::Zero(cfg.d), c.sigma_n);
  const auto res = run_boost(t, c, init, cfg.boost_config());
  json trace = json::array();
  for (const auto& r : res.trace.records) trace.push_back(to_json(r));
  Artifacts a{json{{"mixture", to_json(res.mixture)},
                   {"trace_header", trace_header_json(res.trace)},
                   {"trace", trace},
                   {"data", dataset_sidecar(data)}},
              {}};
  if (t.exact) {
    a.report["posterior"] = json{{"mu_n", to_json(t.exact->mu_n)},
                                 {"Sigma_n_diag", to_json(t.exact->Sigma_n.diagonal())}};
  }
  a.add("trace.csv", [&](std::ostream& os) { write_trace_csv(os, res.trace); });
  a.add("trace.jsonl", [&](std::ostream& os) { write_trace_jsonl(os, res.trace); });
  a.add("data.csv", [&](std::ostream& os) { write_dataset_csv(os, data); });
  return a;
}

inline Artifacts run_thm1(const RunConfig& cfg) {
  const auto plan = ReplicationPlan::make(cfg.model(), cfg.n_grid, cfg.replicates, cfg.seed,
                                          cfg.M, cfg.c0, BandwidthRule{cfg.bandwidth_scale, 0.5});
  const auto rep = theorem1_experiment(plan, cfg.jobs);
  const long n0 = cfg.n_grid.front();
  const auto dec = decomposition_experiment(cfg.model(), n0, plan.constraints(n0),
                                            cfg.decomposition_replicates,
                                            cfg.decomposition_draws, cfg.seed, cfg.jobs);
  Artifacts a{to_json(rep), {}};
  a.report["decomposition"] = to_json(dec);
  a.add("raw.csv", [&](std::ostream& os) { write_raw_csv(os, rep); });
  a.add("decomposition.csv", [&](std::ostream& os) { write_raw_csv(os, dec); });
  return a;
}

inline Artifacts run_prop1(const RunConfig& cfg) {
  const auto rep = prop1_sweep(cfg.model(), cfg.n_grid, cfg.replicates, cfg.seed, cfg.jobs);
  Artifacts a{to_json(rep), {}};
  a.add("raw.csv", [&](std::ostream& os) { write_raw_csv(os, rep); });
  return a;
}

inline Artifacts run_convergence(const RunConfig& cfg) {
  if (cfg.d != 1) throw ConfigError("d", "validate-convergence requires d = 1");
  ConvergenceSettings s;
  s.M = cfg.M;
  s.c0 = cfg.c0;
  s.bandwidth = BandwidthRule{cfg.bandwidth_scale, 0.5};
  s.boost = cfg.boost_config();
  s.base_seed = cfg.seed;
  std::vector<BoostTrace> traces;
  const auto rep = convergence_sweep(cfg.model(), cfg.n_grid, s, &traces);
  Artifacts a{to_json(rep), {}};
  a.add("raw.csv", [&](std::ostream& os) { write_raw_csv(os, rep); });
  for (std::size_t i = 0; i < traces.size(); ++i)
    a.add("trace_n" + std::to_string(cfg.n_grid[i]) + ".csv",
          [&](std::ostream& os) { write_trace_csv(os, traces[i]); });
  return a;
}

inline Artifacts run_lmo_debug(const RunConfig& cfg) {
  const auto data = command_dataset(cfg);
  const auto t = command_target(cfg, data);
  const auto c = FamilyConstraints::make(cfg.M, cfg.resolved_sigma_n(cfg.n), cfg.c0, cfg.d);
  const GaussianMixture psi(IsotropicGaussian(Vector::Zero(cfg.d), c.sigma_n));
  LmoConfig lc = cfg.lmo;
  lc.seed = cfg.seed;
  const auto res = solve_lmo(psi, t, c, lc, 1.0);
  Artifacts a{json{{"psi_prev", to_json(psi)}, {"lmo", to_json(res)}}, {}};
  if (cfg.d == 1) {
    const QuadratureSpec q{cfg.quadrature_nodes, 512, 10.0};
    const auto grid = lmo_grid_oracle(psi, t, c, GridResolution{}, q);
    a.report["lmo_quadrature_objective"] = lmo_objective_quadrature(res.component, psi, t, q);
    a.report["grid_oracle"] = to_json(grid);
  }
  a.add("lmo_paths.csv", [&](std::ostream& os) {
    os << "restart,step,objective\n";
    for (std::size_t r = 0; r < res.paths.size(); ++r)
      for (std::size_t s = 0; s < res.paths[r].size(); ++s)
        os << r << ',' << s << ',' << format_double(res.paths[r][s]) << '\n';
  });
  return a;
}

inline Artifacts run_audit(const RunConfig& cfg) {
  const auto model = cfg.family == "bernoulli" ? bernoulli_family(cfg.theta0)
                     : cfg.family == "poisson" ? poisson_family(cfg.theta0)
                                               : gaussian_mean_family(cfg.theta0);
  std::vector<Vector> grid;
  for (int i = 0; i < cfg.audit_points; ++i) {
    const double x = cfg.audit_points == 1
                         ? cfg.audit_lo
                         : cfg.audit_lo + (cfg.audit_hi - cfg.audit_lo) * i / (cfg.audit_points - 1);
    grid.push_back(Vector::Constant(1, x));
  }
  const auto audit = check_corollary1_assumptions(model, grid, cfg.alpha, cfg.mc_draws, cfg.seed);
  Artifacts a{to_json(audit), {}};
  a.report["family"] = cfg.family;
  return a;
}

}  // namespace detail

/// Runs the configured command. The JSON report goes to `out`; with an
/// output directory, report.json, metadata.json and the CSV artifacts are
/// written there as well. Returns the process exit status.
inline int dispatch(const RunConfig& cfg, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  detail::Artifacts a;
  const auto& cmd = cfg.command;
  if (cmd == "curvature") a = detail::run_curvature(cfg);
  else if (cmd == "boost") a = detail::run_boost_command(cfg);
  else if (cmd == "validate-thm1") a = detail::run_thm1(cfg);
  else if (cmd == "validate-prop1") a = detail::run_prop1(cfg);
  else if (cmd == "validate-convergence") a = detail::run_convergence(cfg);
  else if (cmd == "lmo-debug") a = detail::run_lmo_debug(cfg);
  else if (cmd == "audit-expfam") a = detail::run_audit(cfg);
  else throw ConfigError("command", "unknown command \"" + cmd + "\"");
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const json meta{{"config", to_json(cfg)},
                  {"seed", cfg.seed},
                  {"seed_source", cfg.seed_source}};
  json report = a.report;
  report["metadata"] = meta;
  out << report.dump(2) << '\n';

  if (!cfg.output_dir.empty()) {
    namespace fs = std::filesystem;
    const fs::path dir(cfg.output_dir);
    std::ofstream(dir / "report.json") << report.dump(2) << '\n';
    json full_meta = meta;
    full_meta["artifacts"] = json::array();
    for (const auto& [name, body] : a.files) {
      std::ofstream f(dir / name, std::ios::binary);
      f << body;
      if (!f) throw std::runtime_error("failed to write " + (dir / name).string());
      full_meta["artifacts"].push_back(name);
    }
    full_meta["runtime_seconds"] = seconds;
    std::ofstream(dir / "metadata.json") << full_meta.dump(2) << '\n';
  }
  return 0;
}

inline json error_report(const std::exception& e) {
  json j{{"status", "error"}, {"message", e.what()}};
  if (const auto* ce = dynamic_cast<const ConfigError*>(&e)) j["field"] = ce->field();
  return j;
}

}  // namespace vbboost
