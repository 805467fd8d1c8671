// Command-line front end. Usage:
//   vbboost <command> [--config file.json] [flags...]
// Flags override fields of the config file.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "vbboost/cli.hpp"

namespace {

template <class T>
void flag(CLI::App& app, vbboost::json& overrides, const std::string& name,
          const std::string& key, const std::string& help) {
  app.add_option_function<T>(
      name, [&overrides, key](const T& v) { overrides[key] = v; }, help);
}

void add_common(CLI::App& app, vbboost::json& o, std::string& config_path) {
  app.add_option("--config", config_path, "JSON config file");
  flag<std::uint64_t>(app, o, "--seed", "seed", "base seed (default: $VBBOOST_SEED, then 0)");
  flag<int>(app, o, "--d", "d", "parameter dimension");
  flag<long>(app, o, "--n", "n", "sample size");
  flag<double>(app, o, "--sigma2", "sigma2", "observation variance");
  flag<double>(app, o, "--mu0", "mu0", "prior mean (per coordinate)");
  flag<double>(app, o, "--sigma0-2", "sigma0_2", "prior variance");
  flag<double>(app, o, "--theta0", "theta0", "true parameter (per coordinate)");
  flag<bool>(app, o, "--eq48-mean", "eq48_mean", "use the equal-covariance posterior mean");
  flag<double>(app, o, "--M", "M", "mean-ball radius (default 2)");
  flag<double>(app, o, "--c0", "c0", "bandwidth ratio, 1 < c0 < 2 (default 1.5)");
  flag<double>(app, o, "--sigma-n", "sigma_n", "bandwidth (default n^-1/2)");
  flag<double>(app, o, "--bandwidth-scale", "bandwidth_scale", "sigma_n = scale * n^-1/2");
  flag<std::vector<long>>(app, o, "--n-grid", "n_grid", "sample sizes");
  flag<int>(app, o, "--replicates", "replicates", "replicates per n (default 200)");
  flag<int>(app, o, "--decomposition-replicates", "decomposition_replicates", "");
  flag<std::size_t>(app, o, "--decomposition-draws", "decomposition_draws", "");
  flag<int>(app, o, "--iterations", "iterations", "boosting iterations K");
  flag<std::size_t>(app, o, "--lmo-mc-samples", "lmo_mc_samples", "");
  flag<int>(app, o, "--lmo-restarts", "lmo_restarts", "");
  flag<int>(app, o, "--lmo-max-steps", "lmo_max_steps", "");
  flag<std::size_t>(app, o, "--eval-mc-samples", "eval_mc_samples", "");
  flag<int>(app, o, "--quadrature-nodes", "quadrature_nodes", "");
  flag<std::size_t>(app, o, "--curvature-trials", "curvature_trials", "");
  flag<std::string>(app, o, "--family", "family", "gaussian | bernoulli | poisson");
  flag<double>(app, o, "--audit-lo", "audit_lo", "");
  flag<double>(app, o, "--audit-hi", "audit_hi", "");
  flag<int>(app, o, "--audit-points", "audit_points", "");
  flag<double>(app, o, "--alpha", "alpha", "Holder exponent for the audit");
  flag<int>(app, o, "--mc-draws", "mc_draws", "");
  flag<int>(app, o, "--jobs", "jobs", "parallel replicate workers");
  flag<std::string>(app, o, "--output-dir", "output_dir", "artifact directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Boosting variational inference with small-bandwidth Gaussian mixtures"};
  app.require_subcommand(1);
  vbboost::json overrides = vbboost::json::object();
  std::string config_path;
  const std::map<std::string, std::string> about{
      {"boost", "run the boosting loop on a conjugate target"},
      {"validate-thm1", "KL(q0 || posterior) quantiles and the KL decomposition"},
      {"validate-prop1", "limit statistics of the posterior around the truth"},
      {"validate-convergence", "boosting with k = ceil(exp(sqrt(n))) over an n grid"},
      {"curvature", "sample the curvature constant and compare with both bounds"},
      {"lmo-debug", "one LMO solve with restart paths"},
      {"audit-expfam", "empirical assumption audit for an exponential family"},
  };
  for (const auto& name : vbboost::known_commands()) {
    auto* sub = app.add_subcommand(name, about.count(name) ? about.at(name) : "");
    add_common(*sub, overrides, config_path);
  }
  CLI11_PARSE(app, argc, argv);

  try {
    vbboost::json doc = vbboost::json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw vbboost::ConfigError("config", "cannot open \"" + config_path + "\"");
      doc = vbboost::json::parse(in);
    }
    for (auto it = overrides.begin(); it != overrides.end(); ++it) doc[it.key()] = it.value();
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (doc.contains("command") && doc["command"] != cmd)
      throw vbboost::ConfigError("command", "config says \"" +
                                                doc["command"].get<std::string>() +
                                                "\" but \"" + cmd + "\" was requested");
    doc["command"] = cmd;
    const auto cfg = vbboost::parse_config(doc);
    return vbboost::dispatch(cfg, std::cout);
  } catch (const vbboost::ConfigError& e) {
    std::cerr << vbboost::error_report(e).dump(2) << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << vbboost::error_report(e).dump(2) << '\n';
    return 1;
  }
}
