#pragma once

// JSON and CSV serialization. Numbers are written in shortest round-trip form
// so that repeated runs produce byte-identical files.

#include <charconv>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vbboost/boosting.hpp"
#include "vbboost/divergence_engine.hpp"
#include "vbboost/freq_validation.hpp"
#include "vbboost/gaussian_family.hpp"
#include "vbboost/lmo.hpp"
#include "vbboost/target_models.hpp"

namespace vbboost {

using json = nlohmann::ordered_json;

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// JSON has no infinities; they are written as strings.
inline json json_number(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

inline double number_from_json(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw std::invalid_argument("expected a number, got \"" + s + "\"");
  }
  return j.get<double>();
}

inline json to_json(const Vector& v) {
  json a = json::array();
  for (long i = 0; i < v.size(); ++i) a.push_back(json_number(v[i]));
  return a;
}

inline Vector vector_from_json(const json& j) {
  if (j.is_number()) return Vector::Constant(1, j.get<double>());
  Vector v(static_cast<long>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<long>(i)] = number_from_json(j[i]);
  return v;
}

// ---------------------------------------------------------------------------
// Family objects

inline json to_json(const IsotropicGaussian& g) {
  return json{{"mean", to_json(g.mean())}, {"sigma", g.sigma()}};
}

inline IsotropicGaussian gaussian_from_json(const json& j) {
  return IsotropicGaussian(vector_from_json(j.at("mean")), j.at("sigma").get<double>());
}

inline json to_json(const GaussianMixture& m) {
  json comps = json::array();
  for (const auto& g : m.components()) comps.push_back(to_json(g));
  return json{{"components", comps}, {"weights", m.weights()}};
}

inline GaussianMixture mixture_from_json(const json& j) {
  std::vector<IsotropicGaussian> comps;
  for (const auto& c : j.at("components")) comps.push_back(gaussian_from_json(c));
  return GaussianMixture(std::move(comps), j.at("weights").get<std::vector<double>>());
}

inline json to_json(const FamilyConstraints& c) {
  return json{{"M", c.M}, {"sigma_n", c.sigma_n}, {"c0", c.c0}, {"d", c.d}};
}

inline json to_json(const DivergenceEstimate& e) {
  return json{{"value", json_number(e.value)},
              {"std_error", json_number(e.std_error)},
              {"method", to_string(e.method)},
              {"samples", e.samples},
              {"normalized", e.normalized}};
}

// ---------------------------------------------------------------------------
// Curvature

inline json to_json(const CurvatureReport& r) {
  json j{{"constraints", to_json(r.constraints)},
         {"paper_bound", json_number(r.paper_bound)},
         {"log_paper_bound", r.log_paper_bound},
         {"rederived_bound", json_number(r.rederived_bound)},
         {"log_rederived_bound", r.log_rederived_bound},
         {"empirical_sup", r.empirical_sup},
         {"trials", r.trials},
         {"seed", r.seed},
         {"paper_bound_exceeded", r.paper_bound_exceeded},
         {"chain_violations", r.chain_violations}};
  if (r.sup_witness)
    j["sup_witness"] = json{{"psi1", to_json(r.sup_witness->psi1)},
                            {"phi", to_json(r.sup_witness->phi)},
                            {"alpha", r.sup_witness->alpha}};
  return j;
}

inline void write_curvature_csv(std::ostream& os, const CurvatureReport& r) {
  os << "trial,alpha,components,scaled_kl,chi2_bound\n";
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    const auto& t = r.records[i];
    os << i << ',' << format_double(t.alpha) << ',' << t.components << ','
       << format_double(t.scaled_kl) << ',' << format_double(t.chi2_bound) << '\n';
  }
}

// ---------------------------------------------------------------------------
// LMO and boosting

inline json to_json(const LmoResult& r) {
  json paths = json::array();
  for (const auto& p : r.paths) {
    json a = json::array();
    for (double v : p) a.push_back(json_number(v));
    paths.push_back(a);
  }
  return json{{"component", to_json(r.component)},
              {"objective", json_number(r.objective)},
              {"oracle_gap_bound", json_number(r.oracle_gap_bound)},
              {"restarts_used", r.restarts_used},
              {"feasible", r.feasible},
              {"paths", paths}};
}

inline json to_json(const BoostRecord& r) {
  return json{{"k", r.k},
              {"gamma", r.gamma},
              {"component", to_json(r.component)},
              {"objective", to_json(r.objective)},
              {"lmo_objective", json_number(r.lmo_objective)},
              {"rate_bound_eq14", json_number(r.rate_bound_eq14)},
              {"rate_bound_eq12", json_number(r.rate_bound_eq12)},
              {"log_rate_bound_eq12", r.log_rate_bound_eq12}};
}

inline json trace_header_json(const BoostTrace& t) {
  return json{{"constraints", to_json(t.constraints)},
              {"initializer", to_json(t.initializer)},
              {"initializer_weight", 0.0},
              {"seed", t.seed},
              {"curvature_source", t.curvature_source},
              {"curvature", json_number(t.curvature)},
              {"log_curvature_paper", t.log_curvature_paper},
              {"log_curvature_rederived", t.log_curvature_rederived}};
}

/// One JSON object per iteration.
inline void write_trace_jsonl(std::ostream& os, const BoostTrace& t) {
  for (const auto& r : t.records) os << to_json(r).dump() << '\n';
}

inline void write_trace_csv(std::ostream& os, const BoostTrace& t) {
  const long d = t.initializer.dim();
  os << "k,gamma";
  for (long i = 0; i < d; ++i) os << ",mu_" << (i + 1);
  os << ",sigma,objective,stderr,bound14,bound12\n";
  for (const auto& r : t.records) {
    os << r.k << ',' << format_double(r.gamma);
    for (long i = 0; i < d; ++i) os << ',' << format_double(r.component.mean()[i]);
    os << ',' << format_double(r.component.sigma()) << ','
       << format_double(r.objective.value) << ',' << format_double(r.objective.std_error)
       << ',' << format_double(r.rate_bound_eq14) << ','
       << format_double(r.rate_bound_eq12) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Experiments

inline json to_json(const ExperimentReport& r) {
  json q = json::array();
  for (const auto& s : r.quantiles)
    q.push_back(json{{"n", s.n},
                     {"statistic", s.statistic},
                     {"count", s.count},
                     {"mean", json_number(s.mean)},
                     {"q50", json_number(s.q50)},
                     {"q95", json_number(s.q95)},
                     {"q99", json_number(s.q99)}});
  json summary = json::object();
  for (const auto& [k, v] : r.summary) summary[k] = json_number(v);
  json checks = json::object();
  for (const auto& [k, v] : r.checks) checks[k] = v;
  json j{{"experiment", r.experiment},
         {"base_seed", r.base_seed},
         {"replicates", r.replicates},
         {"n_grid", r.n_grid},
         {"quantiles", q},
         {"summary", summary},
         {"checks", checks}};
  if (r.summary.count("ks_distance")) j["ks_distance"] = json_number(r.summary.at("ks_distance"));
  return j;
}

inline void write_raw_csv(std::ostream& os, const ExperimentReport& r) {
  os << "n,replicate,statistic,value,seed\n";
  for (const auto& rec : r.raw)
    os << rec.n << ',' << rec.replicate << ',' << rec.statistic << ','
       << format_double(rec.value) << ',' << rec.seed << '\n';
}

inline json to_json(const KlDecomposition& k) {
  return json{{"constant", k.constant},
              {"bandwidth_entropy", k.bandwidth_entropy},
              {"log_marginal", k.log_marginal},
              {"neg_expected_loglik", k.neg_expected_loglik},
              {"expected_neg_log_prior", k.expected_neg_log_prior},
              {"se_loglik", k.se_loglik},
              {"se_prior", k.se_prior},
              {"se_sum", k.se_sum},
              {"sum", k.sum},
              {"four_term_sum", k.four_term_sum()},
              {"direct", k.direct},
              {"draws", k.draws},
              {"seed", k.seed}};
}

inline json to_json(const Corollary1Audit& a) {
  return json{{"min_hessian_eigenvalue", json_number(a.min_hessian_eigenvalue)},
              {"strongly_convex", a.strongly_convex},
              {"alpha", a.alpha},
              {"lipschitz",
               {{"grad", json_number(a.lipschitz.grad)},
                {"hess_times_theta", json_number(a.lipschitz.hess_times_theta)},
                {"grad_outer", json_number(a.lipschitz.grad_outer)},
                {"hess", json_number(a.lipschitz.hess)}}},
              {"max_kl_bregman_gap", json_number(a.max_kl_bregman_gap)},
              {"max_kl_direct_gap", json_number(a.max_kl_direct_gap)},
              {"kl_identity_holds", a.kl_identity_holds},
              {"max_mu2_z", json_number(a.max_mu2_z)},
              {"mu2_matches", a.mu2_matches},
              {"mc_draws", a.mc_draws},
              {"failures", a.failures}};
}

// ---------------------------------------------------------------------------
// Datasets: CSV of points plus a JSON sidecar {n, p, seed, model}.

inline void write_dataset_csv(std::ostream& os, const Dataset& data) {
  for (long j = 0; j < data.p(); ++j) os << (j ? "," : "") << "x_" << (j + 1);
  os << '\n';
  for (long i = 0; i < data.n(); ++i) {
    for (long j = 0; j < data.p(); ++j)
      os << (j ? "," : "") << format_double(data.points(i, j));
    os << '\n';
  }
}

inline json dataset_sidecar(const Dataset& data) {
  return json{{"n", data.n()}, {"p", data.p()}, {"seed", data.seed}, {"model", data.model}};
}

inline Dataset read_dataset(std::istream& csv, const json& sidecar) {
  Dataset data;
  data.seed = sidecar.value("seed", std::uint64_t{0});
  data.model = sidecar.value("model", std::string{});
  const long n = sidecar.at("n").get<long>();
  const long p = sidecar.at("p").get<long>();
  data.points.resize(n, p);
  std::string line;
  std::getline(csv, line);  // header
  for (long i = 0; i < n; ++i) {
    if (!std::getline(csv, line))
      throw std::runtime_error("dataset: expected " + std::to_string(n) + " rows");
    std::stringstream ss(line);
    std::string cell;
    for (long j = 0; j < p; ++j) {
      if (!std::getline(ss, cell, ','))
        throw std::runtime_error("dataset: row " + std::to_string(i) + " is short");
      data.points(i, j) = std::stod(cell);
    }
  }
  data.validate();
  return data;
}

}  // namespace vbboost
