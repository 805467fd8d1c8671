#pragma once

// Replication harness for the frequentist statements: boundedness of the
// KL(q0 || pi_n) surrogate, the q0 decomposition, the Gaussian limit
// statistics and the boosting convergence schedule.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "vbboost/boosting.hpp"
#include "vbboost/core.hpp"
#include "vbboost/divergence_engine.hpp"
#include "vbboost/gaussian_family.hpp"
#include "vbboost/target_models.hpp"

namespace vbboost {

/// sigma_n = scale * n^(-exponent).
struct BandwidthRule {
  double scale = 1.0;
  double exponent = 0.5;

  [[nodiscard]] double operator()(long n) const {
    return scale * std::pow(static_cast<double>(n), -exponent);
  }
};

/// sigma_n <= n^(-1/2) <= sqrt(c0) sigma_n, up to rounding.
inline bool satisfies_bandwidth_band(double sigma_n, long n, double c0) {
  const double r = 1.0 / std::sqrt(static_cast<double>(n));
  constexpr double kRel = 1e-12;
  return sigma_n <= r * (1.0 + kRel) && r <= std::sqrt(c0) * sigma_n * (1.0 + kRel);
}

inline std::uint64_t replicate_seed(std::uint64_t base_seed, long n, long r) {
  return mix_seed(base_seed, static_cast<std::uint64_t>(n),
                  static_cast<std::uint64_t>(r));
}

struct ReplicationPlan {
  ConjugateGaussianModel model;
  std::vector<long> n_grid;
  int replicates = 200;
  std::uint64_t base_seed = 0;
  double M = 2.0;
  double c0 = 1.5;
  BandwidthRule bandwidth;

  [[nodiscard]] FamilyConstraints constraints(long n) const {
    return FamilyConstraints::make(M, bandwidth(n), c0,
                                   static_cast<int>(model.d()));
  }

  void validate() const {
    model.validate();
    if (replicates < 1)
      throw std::invalid_argument("ReplicationPlan: replicates must be >= 1");
    if (n_grid.empty())
      throw std::invalid_argument("ReplicationPlan: n_grid must be nonempty");
    for (std::size_t i = 0; i < n_grid.size(); ++i) {
      if (n_grid[i] < 1)
        throw std::invalid_argument("ReplicationPlan: n_grid entries must be >= 1");
      if (i > 0 && n_grid[i] <= n_grid[i - 1])
        throw std::invalid_argument("ReplicationPlan: n_grid must be increasing");
    }
    for (long n : n_grid) {
      const auto c = constraints(n);
      if (!satisfies_bandwidth_band(c.sigma_n, n, c0))
        throw ConstraintError(
            "ReplicationPlan: bandwidth rule violates sigma_n <= n^(-1/2) <= "
            "sqrt(c0) sigma_n at n = " + std::to_string(n) +
            " (sigma_n = " + std::to_string(c.sigma_n) + ")");
    }
    if (model.theta0.norm() > M * (1.0 + kMembershipSlack))
      throw ConstraintError("ReplicationPlan: truth lies outside the mean ball");
  }

  static ReplicationPlan make(ConjugateGaussianModel model, std::vector<long> n_grid,
                              int replicates, std::uint64_t base_seed, double M = 2.0,
                              double c0 = 1.5, BandwidthRule bandwidth = {}) {
    ReplicationPlan p{std::move(model), std::move(n_grid), replicates, base_seed,
                      M, c0, bandwidth};
    p.validate();
    return p;
  }
};

// ---------------------------------------------------------------------------
// Report

struct RawRecord {
  long n = 0;
  long replicate = 0;
  std::string statistic;
  double value = 0.0;
  std::uint64_t seed = 0;
};

struct QuantileSummary {
  long n = 0;
  std::string statistic;
  std::size_t count = 0;
  double mean = 0.0;
  double q50 = 0.0;
  double q95 = 0.0;
  double q99 = 0.0;
};

struct ExperimentReport {
  std::string experiment;
  std::uint64_t base_seed = 0;
  int replicates = 0;
  std::vector<long> n_grid;
  std::vector<RawRecord> raw;  // ordered by (n, replicate, statistic)
  std::vector<QuantileSummary> quantiles;
  std::map<std::string, double> summary;
  std::map<std::string, bool> checks;
};

/// Linear-interpolation quantile (type 7). `sorted` must be ascending.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile: empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile: p in [0,1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::vector<double> xs, double p) {
  std::sort(xs.begin(), xs.end());
  return quantile_sorted(xs, p);
}

inline double median(std::vector<double> xs) { return quantile(std::move(xs), 0.5); }

/// sup_x |F_emp(x) - F(x)| for a continuous reference CDF.
inline double ks_distance(std::vector<double> xs,
                          const std::function<double(double)>& cdf) {
  if (xs.empty()) throw std::invalid_argument("ks_distance: empty sample");
  std::sort(xs.begin(), xs.end());
  const auto m = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, static_cast<double>(i + 1) / m - f, f - static_cast<double>(i) / m});
  }
  return d;
}

/// CDF of chi2_d / 2, i.e. the Gamma(d/2, 1) law.
inline double half_chi2_cdf(double s, int d) {
  if (d < 1) throw std::invalid_argument("half_chi2_cdf: d must be >= 1");
  if (!(s > 0.0)) return 0.0;
  return boost::math::gamma_p(0.5 * static_cast<double>(d), s);
}

inline std::vector<double> values_of(const ExperimentReport& rep, long n,
                                     const std::string& statistic) {
  std::vector<double> out;
  for (const auto& r : rep.raw)
    if (r.n == n && r.statistic == statistic) out.push_back(r.value);
  return out;
}

/// Fills rep.quantiles from rep.raw, grouped by (n, statistic) in order of
/// first appearance.
inline void summarize(ExperimentReport& rep) {
  rep.quantiles.clear();
  std::vector<std::pair<long, std::string>> keys;
  for (const auto& r : rep.raw) {
    const std::pair<long, std::string> key{r.n, r.statistic};
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  for (const auto& [n, stat] : keys) {
    auto xs = values_of(rep, n, stat);
    std::sort(xs.begin(), xs.end());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    rep.quantiles.push_back({n, stat, xs.size(), mean, quantile_sorted(xs, 0.5),
                             quantile_sorted(xs, 0.95), quantile_sorted(xs, 0.99)});
  }
}

inline const QuantileSummary& find_summary(const ExperimentReport& rep, long n,
                                           const std::string& statistic) {
  for (const auto& q : rep.quantiles)
    if (q.n == n && q.statistic == statistic) return q;
  throw std::out_of_range("no summary for " + statistic + " at n = " +
                          std::to_string(n));
}

inline std::string keyed(const std::string& name, long n) {
  return name + "@n=" + std::to_string(n);
}

// ---------------------------------------------------------------------------
// Boundedness of KL(q0 || pi_n)

inline double kl_q0_posterior(const FamilyConstraints& c, const Vector& theta0,
                              const PosteriorParams& post) {
  const auto q0 = q0_reference(c, theta0);
  const long d = theta0.size();
  return kl_gaussian_full(q0.mean(), Matrix::Identity(d, d) * q0.variance(),
                          post.mu_n, post.Sigma_n);
}

inline ExperimentReport theorem1_experiment(const ReplicationPlan& plan,
                                            int jobs = 1) {
  plan.validate();
  ExperimentReport rep;
  rep.experiment = "thm1";
  rep.base_seed = plan.base_seed;
  rep.replicates = plan.replicates;
  rep.n_grid = plan.n_grid;
  const auto R = static_cast<std::size_t>(plan.replicates);
  rep.raw.resize(plan.n_grid.size() * R);
  for (std::size_t a = 0; a < plan.n_grid.size(); ++a) {
    const long n = plan.n_grid[a];
    const auto c = plan.constraints(n);
    parallel_for(R, jobs, [&](std::size_t r) {
      const auto seed = replicate_seed(plan.base_seed, n, static_cast<long>(r));
      const auto data = simulate_data(plan.model, n, seed);
      const auto post = posterior_params(plan.model, data);
      rep.raw[a * R + r] = {n, static_cast<long>(r), "kl_q0_posterior",
                            kl_q0_posterior(c, plan.model.theta0, post), seed};
    });
  }
  summarize(rep);
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (long n : plan.n_grid) {
    const double q95 = find_summary(rep, n, "kl_q0_posterior").q95;
    rep.summary[keyed("q95", n)] = q95;
    lo = std::min(lo, q95);
    hi = std::max(hi, q95);
  }
  rep.summary["q95_ratio"] = hi / lo;
  rep.checks["q95_within_factor_2"] = hi / lo < 2.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Decomposition of KL(q0 || pi_n)

struct KlDecomposition {
  double constant = 0.0;             // -d [ln sqrt(2 pi) + 1/2]
  double bandwidth_entropy = 0.0;    // -d ln sigma_n
  double log_marginal = 0.0;         // log m(X_n)
  double neg_expected_loglik = 0.0;  // -int L_n q0
  double expected_neg_log_prior = 0.0;  // int U q0
  double se_loglik = 0.0;
  double se_prior = 0.0;
  double se_sum = 0.0;  // paired draws
  double sum = 0.0;
  double direct = 0.0;
  std::size_t draws = 0;
  std::uint64_t seed = 0;

  // The four printed terms; equals `sum` only when sigma_n = 1.
  [[nodiscard]] double four_term_sum() const {
    return constant + log_marginal + neg_expected_loglik + expected_neg_log_prior;
  }
};

inline KlDecomposition decompose_kl_q0(const ConjugateGaussianModel& model,
                                       const Dataset& data,
                                       const FamilyConstraints& c,
                                       const MonteCarloBudget& budget) {
  require_dim("decompose_kl_q0", c.d, model.d());
  if (budget.samples < 2)
    throw std::invalid_argument("decompose_kl_q0: needs >= 2 draws");
  const ConjugatePosterior post(model, data);
  const auto q0 = q0_reference(c, model.theta0);
  const auto d = static_cast<double>(model.d());

  KlDecomposition out;
  out.draws = budget.samples;
  out.seed = budget.seed;
  out.constant = -d * (0.5 * kLogTwoPi + 0.5);
  out.bandwidth_entropy = -d * std::log(c.sigma_n);
  out.log_marginal = post.log_marginal_ratio();

  detail::RunningMoments ml, mu, ms;
  std::mt19937_64 rng(budget.seed);
  std::normal_distribution<double> normal;
  Vector theta(model.d());
  for (std::size_t i = 0; i < budget.samples; ++i) {
    for (long k = 0; k < theta.size(); ++k)
      theta[k] = q0.mean()[k] + q0.sigma() * normal(rng);
    const double l = -post.loglik_ratio(theta);
    const double u = post.neg_log_prior(theta);
    ml.add(l);
    mu.add(u);
    ms.add(l + u);
  }
  out.neg_expected_loglik = ml.mean();
  out.expected_neg_log_prior = mu.mean();
  out.se_loglik = ml.std_error();
  out.se_prior = mu.std_error();
  out.se_sum = ms.std_error();
  out.sum = out.constant + out.bandwidth_entropy + out.log_marginal +
            out.neg_expected_loglik + out.expected_neg_log_prior;
  out.direct = kl_q0_posterior(c, model.theta0, post.posterior());
  return out;
}

/// Repeats the decomposition over independent datasets at one n.
inline ExperimentReport decomposition_experiment(const ConjugateGaussianModel& model,
                                                 long n, const FamilyConstraints& c,
                                                 int replicates, std::size_t draws,
                                                 std::uint64_t base_seed,
                                                 int jobs = 1) {
  if (replicates < 1)
    throw std::invalid_argument("decomposition_experiment: replicates >= 1");
  ExperimentReport rep;
  rep.experiment = "decomposition";
  rep.base_seed = base_seed;
  rep.replicates = replicates;
  rep.n_grid = {n};
  static const char* kStats[] = {"direct", "sum", "difference", "z_score"};
  const auto R = static_cast<std::size_t>(replicates);
  rep.raw.resize(R * 4);
  parallel_for(R, jobs, [&](std::size_t r) {
    const auto seed = replicate_seed(base_seed, n, static_cast<long>(r));
    const auto data = simulate_data(model, n, seed);
    const auto dec = decompose_kl_q0(model, data, c, {draws, mix_seed(seed, 0xD)});
    const double diff = dec.sum - dec.direct;
    const double vals[] = {dec.direct, dec.sum, diff, diff / dec.se_sum};
    for (std::size_t s = 0; s < 4; ++s)
      rep.raw[r * 4 + s] = {n, static_cast<long>(r), kStats[s], vals[s], seed};
  });
  summarize(rep);
  double worst = 0.0;
  for (const auto& rec : rep.raw)
    if (rec.statistic == "z_score") worst = std::max(worst, std::abs(rec.value));
  rep.summary["max_abs_z"] = worst;
  rep.checks["within_3_se"] = worst <= 3.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Gaussian limit statistics

inline ExperimentReport prop1_experiment(const ConjugateGaussianModel& model, long n,
                                         int replicates, std::uint64_t base_seed,
                                         int jobs = 1) {
  model.validate();
  if (n < 1) throw std::invalid_argument("prop1_experiment: n must be >= 1");
  if (replicates < 1) throw std::invalid_argument("prop1_experiment: replicates >= 1");
  static const char* kStats[] = {"kl_truth",   "kl_sample_mean", "hellinger",
                                 "tv_lower",   "tv_upper",       "hellinger_sample_mean"};
  constexpr std::size_t kCount = 6;
  ExperimentReport rep;
  rep.experiment = "prop1";
  rep.base_seed = base_seed;
  rep.replicates = replicates;
  rep.n_grid = {n};
  const auto R = static_cast<std::size_t>(replicates);
  rep.raw.resize(R * kCount);
  const Matrix S_n = model.Sigma / static_cast<double>(n);
  parallel_for(R, jobs, [&](std::size_t r) {
    const auto seed = replicate_seed(base_seed, n, static_cast<long>(r));
    const auto data = simulate_data(model, n, seed);
    const auto post = posterior_params(model, data);
    const Vector xbar = sufficient_stats(data).mean;
    const double h = hellinger_gaussian_full(post.mu_n, post.Sigma_n, model.theta0, S_n);
    const double vals[kCount] = {
        kl_gaussian_full(model.theta0, S_n, post.mu_n, post.Sigma_n),
        kl_gaussian_full(xbar, S_n, post.mu_n, post.Sigma_n),
        h,
        h * h,
        std::min(1.0, std::sqrt(2.0) * h),
        hellinger_gaussian_full(post.mu_n, post.Sigma_n, xbar, S_n)};
    for (std::size_t s = 0; s < kCount; ++s)
      rep.raw[r * kCount + s] = {n, static_cast<long>(r), kStats[s], vals[s], seed};
  });
  summarize(rep);
  const int d = static_cast<int>(model.d());
  rep.summary["ks_distance"] = ks_distance(values_of(rep, n, "kl_truth"),
                                           [d](double s) { return half_chi2_cdf(s, d); });
  for (const char* s : {"kl_truth", "kl_sample_mean", "hellinger", "hellinger_sample_mean"})
    rep.summary[std::string("median_") + s] = find_summary(rep, n, s).q50;
  return rep;
}

/// prop1_experiment over an increasing n grid, with the decay checks.
inline ExperimentReport prop1_sweep(const ConjugateGaussianModel& model,
                                    const std::vector<long>& n_grid, int replicates,
                                    std::uint64_t base_seed, int jobs = 1) {
  if (n_grid.empty()) throw std::invalid_argument("prop1_sweep: empty n grid");
  for (std::size_t i = 1; i < n_grid.size(); ++i)
    if (n_grid[i] <= n_grid[i - 1])
      throw std::invalid_argument("prop1_sweep: n_grid must be increasing");
  ExperimentReport rep;
  rep.experiment = "prop1";
  rep.base_seed = base_seed;
  rep.replicates = replicates;
  rep.n_grid = n_grid;
  for (long n : n_grid) {
    auto one = prop1_experiment(model, n, replicates, base_seed, jobs);
    rep.raw.insert(rep.raw.end(), one.raw.begin(), one.raw.end());
    for (const auto& [k, v] : one.summary) rep.summary[keyed(k, n)] = v;
  }
  summarize(rep);
  auto strictly_decreasing = [&](const std::string& stat) {
    for (std::size_t i = 1; i < n_grid.size(); ++i)
      if (!(find_summary(rep, n_grid[i], stat).q50 <
            find_summary(rep, n_grid[i - 1], stat).q50))
        return false;
    return true;
  };
  rep.checks["median_kl_sample_mean_decreasing"] = strictly_decreasing("kl_sample_mean");
  rep.checks["median_hellinger_decreasing"] = strictly_decreasing("hellinger");
  rep.checks["median_hellinger_sample_mean_decreasing"] =
      strictly_decreasing("hellinger_sample_mean");
  rep.summary["ks_distance"] = rep.summary[keyed("ks_distance", n_grid.back())];
  return rep;
}

// ---------------------------------------------------------------------------
// Boosting convergence

struct ConvergenceRun {
  long n = 0;
  long long iterations = 0;
  double final_kl = 0.0;
  double kl_q0 = 0.0;
  double curvature = 0.0;
  std::size_t bound_violations = 0;
  BoostTrace trace;
};

/// Boosting on one simulated conjugate posterior. The posterior scale must
/// lie in [sigma_n, sqrt(c0) sigma_n] and its mean in the M-ball.
inline ConvergenceRun convergence_experiment(const ConjugateGaussianModel& model,
                                             const Dataset& data,
                                             const FamilyConstraints& c,
                                             const BoostConfig& config) {
  if (model.d() != 1 || c.d != 1)
    throw ConstraintError("convergence_experiment: requires d = 1");
  const auto target = make_conjugate_target(model, data);
  const auto& post = *target.exact;
  const double sd = std::sqrt(post.Sigma_n(0, 0));
  if (sd < c.sigma_n * (1.0 - kMembershipSlack) ||
      sd > c.sigma_max() * (1.0 + kMembershipSlack))
    throw ConstraintError("convergence_experiment: posterior sd " +
                          std::to_string(sd) + " outside [sigma_n, sqrt(c0) sigma_n]");
  if (post.mu_n.norm() > c.M)
    throw ConstraintError("convergence_experiment: posterior mean outside the M-ball");

  const auto q0 = q0_reference(c, model.theta0);
  auto res = run_boost(target, c, q0, config);
  const double kl_q0 = kl_q0_posterior(c, model.theta0, post);
  std::size_t violations = 0;
  for (const auto& rec : res.trace.records) {
    const double slack = 3.0 * rec.objective.std_error;
    if (rec.objective.value - kl_q0 > rec.rate_bound_eq14 + slack) ++violations;
  }
  const double final_kl = res.trace.records.back().objective.value;
  const double curvature = res.trace.curvature;
  return ConvergenceRun{data.n(),  config.iterations, final_kl,           kl_q0,
                        curvature, violations,        std::move(res.trace)};
}

struct ConvergenceSettings {
  double M = 2.0;
  double c0 = 1.5;
  BandwidthRule bandwidth{0.9, 0.5};
  BoostConfig boost;  // iterations is replaced by required_iterations(n)
  std::uint64_t base_seed = 0;
};

inline ExperimentReport convergence_sweep(const ConjugateGaussianModel& model,
                                          const std::vector<long>& n_grid,
                                          const ConvergenceSettings& s,
                                          std::vector<BoostTrace>* traces = nullptr) {
  ExperimentReport rep;
  rep.experiment = "convergence";
  rep.base_seed = s.base_seed;
  rep.replicates = 1;
  rep.n_grid = n_grid;
  double worst_allowed = 0.0;
  double max_final = 0.0;
  bool chain = true;
  for (long n : n_grid) {
    const auto seed = replicate_seed(s.base_seed, n, 0);
    const auto data = simulate_data(model, n, seed);
    const auto c = FamilyConstraints::make(s.M, s.bandwidth(n), s.c0, 1);
    BoostConfig cfg = s.boost;
    cfg.iterations = static_cast<int>(required_iterations(n));
    cfg.seed = mix_seed(s.boost.seed, seed);
    auto run = convergence_experiment(model, data, c, cfg);
    rep.raw.push_back({n, 0, "iterations", static_cast<double>(run.iterations), seed});
    rep.raw.push_back({n, 0, "final_kl", run.final_kl, seed});
    rep.raw.push_back({n, 0, "kl_q0", run.kl_q0, seed});
    rep.raw.push_back({n, 0, "curvature", run.curvature, seed});
    rep.raw.push_back(
        {n, 0, "bound_violations", static_cast<double>(run.bound_violations), seed});
    rep.summary[keyed("final_kl", n)] = run.final_kl;
    chain = chain && run.bound_violations == 0;
    max_final = std::max(max_final, run.final_kl);
    worst_allowed = std::max(
        worst_allowed,
        run.kl_q0 + rate_bound_eq14(run.iterations, run.curvature));
    if (!std::isfinite(run.final_kl)) max_final = std::numeric_limits<double>::infinity();
    if (traces) traces->push_back(std::move(run.trace));
  }
  summarize(rep);
  rep.summary["final_kl_max"] = max_final;
  rep.checks["bound_chain_holds"] = chain;
  rep.checks["final_kl_bounded"] = std::isfinite(max_final) && max_final <= worst_allowed;
  return rep;
}

}  // namespace vbboost
