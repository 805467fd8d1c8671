// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "vbboost/cli.hpp"

using namespace vbboost;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

IsotropicGaussian g1(double mu, double sigma) { return IsotropicGaussian(Vector::Constant(1, mu), sigma); }

PosteriorTarget normal_target(double mu, double sigma) {
  PosteriorTarget t;
  t.d = 1;
  t.log_unnorm = [mu, sigma](const Vector& th) {
    return static_cast<double>(oracle::log_normal_pdf(th[0], mu, sigma));
  };
  t.log_normalizer = 0.0;
  return t;
}

GaussianMixture random_mixture(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> K(1, 3);
  std::uniform_real_distribution<double> mu(-2.0, 2.0), sd(0.3, 1.5), w(0.05, 1.0);
  const int k = K(rng);
  std::vector<IsotropicGaussian> comps;
  std::vector<double> ws;
  double tot = 0.0;
  for (int j = 0; j < k; ++j) {
    comps.push_back(g1(mu(rng), sd(rng)));
    ws.push_back(w(rng));
    tot += ws.back();
  }
  for (double& x : ws) x /= tot;
  return GaussianMixture(std::move(comps), std::move(ws));
}

// log int q^2 / p for 1-d normals: 4096-node trapezoid on the log-domain
// integrand, centred at its peak.
long double log_chi2_plus_one_4096(long double mq, long double sq, long double mp, long double sp) {
  const long double a = 1.0L / (sq * sq) - 0.5L / (sp * sp);
  const long double b = mq / (sq * sq) - 0.5L * mp / (sp * sp);
  const long double x0 = b / a;
  const long double w = 1.0L / std::sqrt(a);
  auto g = [&](long double x) { return 2 * oracle::log_normal_pdf(x, mq, sq) - oracle::log_normal_pdf(x, mp, sp); };
  const long double peak = g(x0);
  return peak + std::log(oracle::trapz([&](long double x) { return std::exp(g(x) - peak); }, x0 - 40 * w,
                                       x0 + 40 * w, 4096));
}

// Conjugate d = 1 instance used for the end-to-end boosting check: n = 100
// observations centred so that mu_n = 0, weak prior, sigma_n = 0.9 / sqrt(n).
struct BoostInstance {
  ConjugateGaussianModel model = ConjugateGaussianModel::isotropic(1, 1.0, 0.0, 100.0, 0.0);
  Dataset data;
  PosteriorTarget target;
  FamilyConstraints c = FamilyConstraints::make(0.2, 0.09, 1.5, 1);
  BoostInstance() {
    data = simulate_data(model, 100, replicate_seed(0, 100, 0));
    data.points.array() -= data.points.mean();
    target = make_conjugate_target(model, data);
  }
};

// --------------------------------------------------------------------------

Outcome chi2_closed_form() {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> mu(-3.0, 3.0), sd(0.2, 3.0);
  double worst = 0.0;
  int pairs = 0;
  while (pairs < 100) {
    const double mq = mu(rng), sq = sd(rng), mp = mu(rng), sp = sd(rng);
    if (!(2 * sp * sp > sq * sq)) continue;
    ++pairs;
    const double lib = log1p_chi2_gaussian_gaussian(g1(mq, sq), g1(mp, sp));
    const long double orc = log_chi2_plus_one_4096(mq, sq, mp, sp);
    // |chi2_lib / chi2_oracle - 1| without overflow.
    const long double rel = std::abs(std::expm1(static_cast<long double>(lib) - orc)) / -std::expm1(-orc);
    worst = std::max(worst, static_cast<double>(rel));
  }
  return {worst <= 1e-6, fmt("max relative error %.3g over %d pairs", worst, pairs)};
}

Outcome bregman_identity() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> loc(-1.0, 1.0), sc(0.4, 1.5);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto psi2 = random_mixture(rng);
    const auto psi1 = random_mixture(rng);
    const auto t = normal_target(loc(rng), sc(rng));
    const auto b = bregman(psi2, psi1, t, QuadratureSpec{});
    worst = std::max(worst, std::abs(b.three_term.value - b.direct.value));
  }
  return {worst <= 1e-5, fmt("max |three-term - direct| %.3g over 50 pairs", worst)};
}

Outcome taylor_structure() {
  const auto c = FamilyConstraints::make(1.0, 0.5, 1.5, 1);
  std::mt19937_64 rng(3);
  const double h = 1e-4;
  double worst = 0.0;
  int skipped = 0;
  for (int used = 0; used < 20;) {
    const auto psi1 = detail::random_family_mixture(c, kMaxCurvatureComponents, rng);
    const auto phi = detail::random_family_member(c, rng);
    double minus;
    try {
      minus = kl_path(psi1, phi, -h);
    } catch (const std::domain_error&) {
      // psi1 - h (phi - psi1) is not a density, so the central stencil is undefined.
      ++skipped;
      continue;
    }
    worst = std::max(worst, std::abs((kl_path(psi1, phi, h) - minus) / (2 * h)));
    ++used;
  }
  return {worst <= 1e-6, fmt("max |central difference| at 0 = %.3g over 20 instances (%d draws without a "
                             "density at alpha = -h skipped)",
                             worst, skipped)};
}

Outcome curvature_dominance() {
  const auto c = FamilyConstraints::make(0.5, 0.1, 1.5, 1);
  const auto rep = curvature_sample(c, 10000, 4);
  const bool ok = rep.empirical_sup <= rep.rederived_bound && rep.chain_violations == 0;
  return {ok, fmt("sup %.6g <= rederived %.6g, chain violations %zu, printed bound %.6g exceeded in %zu trials",
                  rep.empirical_sup, rep.rederived_bound, rep.chain_violations, rep.paper_bound,
                  rep.paper_bound_exceeded)};
}

ConjugateGaussianModel standard_model() { return ConjugateGaussianModel::isotropic(1, 1.0, 0.0, 1.0, 0.0); }

Outcome ks_half_chi2() {
  const auto rep = prop1_experiment(standard_model(), 2000, 500, 0);
  const double ks = rep.summary.at("ks_distance");
  return {ks <= 0.08, fmt("KS distance %.4f (limit 0.08)", ks)};
}

Outcome prop1_decay() {
  const std::vector<long> grid{100, 1000, 10000};
  const auto rep = prop1_sweep(standard_model(), grid, 200, 0);
  std::string h, k;
  for (long n : grid) {
    h += fmt(" %.4g", find_summary(rep, n, "hellinger").q50);
    k += fmt(" %.4g", find_summary(rep, n, "kl_sample_mean").q50);
  }
  const double last = find_summary(rep, 10000, "kl_sample_mean").q50;
  const bool ok = rep.checks.at("median_hellinger_decreasing") &&
                  rep.checks.at("median_kl_sample_mean_decreasing") && last < 0.01;
  return {ok, "Hellinger medians" + h + "; recentred KL medians" + k};
}

Outcome theorem1_boundedness() {
  const auto plan = ReplicationPlan::make(standard_model(), {100, 1000, 10000}, 200, 0);
  const auto rep = theorem1_experiment(plan);
  std::string q;
  for (long n : plan.n_grid) q += fmt(" %.4g", rep.summary.at(keyed("q95", n)));
  return {rep.checks.at("q95_within_factor_2"),
          fmt("q95 ratio %.4f;", rep.summary.at("q95_ratio")) + " q95 by n" + q};
}

Outcome decomposition() {
  const long n = 100;
  const auto c = FamilyConstraints::make(2.0, 1.0 / std::sqrt(double(n)), 1.5, 1);
  const auto rep = decomposition_experiment(standard_model(), n, c, 20, 100000, 0);
  return {rep.checks.at("within_3_se"), fmt("max |sum - direct| / SE = %.3f over 20 replicates",
                                            rep.summary.at("max_abs_z"))};
}

Outcome boosting_end_to_end() {
  const BoostInstance inst;
  const auto q0 = q0_reference(inst.c, Vector::Zero(1));
  BoostConfig cfg;
  cfg.iterations = 10;
  const auto res = run_boost(inst.target, inst.c, q0, cfg);
  const double final_kl = res.trace.records.back().objective.value;
  double weight_err = 0.0;
  for (long j = 1; j <= 10; ++j) {
    double w = 2.0 / (j + 1.0);
    for (long l = j; l <= 9; ++l) w *= 1.0 - 2.0 / (l + 2.0);
    weight_err = std::max(weight_err, std::abs(res.mixture.weights()[j - 1] - w));
  }
  const double kl_q0 = kl_to_target(GaussianMixture(q0), inst.target, QuadratureSpec{}).value;
  int violations = 0, tight_violations = 0;
  for (const auto& r : res.trace.records) {
    const double excess = r.objective.value - kl_q0;
    if (excess > 4 * res.trace.curvature / (r.k + 2.0)) ++violations;
    if (excess > rate_bound_eq14(r.k + 1, res.trace.curvature)) ++tight_violations;
  }
  const bool ok = final_kl <= 0.05 && weight_err <= 1e-12 && violations == 0;
  return {ok, fmt("final KL %.4g, max weight error %.2g, 4C/(k+2) violations %d (2C/(k+3): %d), empirical "
                  "curvature %.4g",
                  final_kl, weight_err, violations, tight_violations, res.trace.curvature)};
}

Outcome schedule_and_convergence() {
  const long ns[] = {0, 1, 4, 9, 16, 25};
  const long long expect[] = {1, 3, 8, 21, 55, 149};
  bool sched = true;
  for (int i = 0; i < 6; ++i) {
    const auto oracle = static_cast<long long>(std::ceil(std::exp(std::sqrt(static_cast<long double>(ns[i])))));
    sched = sched && required_iterations(ns[i]) == expect[i] && oracle == expect[i];
  }
  const auto cfg = parse_config(json{{"command", "validate-convergence"}, {"n_grid", {25}}, {"seed", 0}});
  ConvergenceSettings s;
  s.M = cfg.M;
  s.c0 = cfg.c0;
  s.bandwidth = BandwidthRule{cfg.bandwidth_scale, 0.5};
  s.boost = cfg.boost_config();
  s.base_seed = cfg.seed;
  const auto start = std::chrono::steady_clock::now();
  std::vector<BoostTrace> traces;
  const auto rep = convergence_sweep(cfg.model(), cfg.n_grid, s, &traces);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double final_kl = rep.summary.at(keyed("final_kl", 25));
  const bool ok = sched && traces.at(0).records.size() == 149 && std::isfinite(final_kl) && secs < 60.0;
  return {ok, fmt("schedule %s; n=25 ran %zu iterations in %.1f s, final KL %.4g",
                  sched ? "matches" : "MISMATCH", traces.at(0).records.size(), secs, final_kl)};
}

Outcome determinism() {
  namespace fs = std::filesystem;
  const auto root = fs::temp_directory_path() / ("vbboost_acceptance_" + std::to_string(::getpid()));
  const std::vector<json> configs{
      {{"command", "boost"}, {"curvature_trials", 100}},
      {{"command", "validate-thm1"}, {"replicates", 20}, {"decomposition_replicates", 3},
       {"decomposition_draws", 5000}, {"jobs", 2}},
      {{"command", "validate-prop1"}, {"replicates", 50}, {"jobs", 2}},
      {{"command", "validate-convergence"}, {"n_grid", {1, 4, 9}}, {"curvature_trials", 100}},
      {{"command", "curvature"}, {"curvature_trials", 50}},
      {{"command", "lmo-debug"}},
      {{"command", "audit-expfam"}, {"family", "bernoulli"}, {"mc_draws", 2000}},
  };
  int files = 0, diffs = 0;
  for (const auto& base : configs) {
    std::vector<std::vector<std::pair<std::string, std::string>>> runs;
    for (int rep = 0; rep < 2; ++rep) {
      json doc = base;
      doc["seed"] = 17;
      doc["output_dir"] = (root / (base["command"].get<std::string>() + std::to_string(rep))).string();
      std::ostringstream sink;
      dispatch(parse_config(doc), sink);
      std::vector<std::pair<std::string, std::string>> csvs;
      for (const auto& e : fs::directory_iterator(doc["output_dir"].get<std::string>())) {
        if (e.path().extension() != ".csv") continue;
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream body;
        body << in.rdbuf();
        csvs.emplace_back(e.path().filename().string(), body.str());
      }
      std::sort(csvs.begin(), csvs.end());
      runs.push_back(std::move(csvs));
    }
    files += static_cast<int>(runs[0].size());
    if (runs[0] != runs[1]) ++diffs;
  }
  std::error_code ec;
  fs::remove_all(root, ec);
  return {diffs == 0 && files > 0,
          fmt("%d CSV artifacts across %zu commands, %d commands differ", files, configs.size(), diffs)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double limit_s;  // 0: no runtime limit
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "chi-square closed form", 5, chi2_closed_form},
      {2, "Bregman identity", 10, bregman_identity},
      {3, "Taylor structure at alpha = 0", 0, taylor_structure},
      {4, "curvature dominance", 60, curvature_dominance},
      {5, "KL to the truth-centred Gaussian vs half chi-square", 60, ks_half_chi2},
      {6, "Hellinger and recentred KL medians decrease", 0, prop1_decay},
      {7, "KL(q0 || posterior) 95% quantile bounded", 0, theorem1_boundedness},
      {8, "KL(q0 || posterior) decomposition", 0, decomposition},
      {9, "boosting end to end", 120, boosting_end_to_end},
      {10, "iteration schedule and n = 25 convergence run", 0, schedule_and_convergence},
      {11, "byte-identical CSV artifacts", 0, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.limit_s > 0 && secs >= c.limit_s) {
      o.pass = false;
      o.detail += fmt("; exceeded %.0f s limit", c.limit_s);
    }
    if (!o.pass) ++failed;
    std::printf("[%s] criterion %2d: %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed;
}
