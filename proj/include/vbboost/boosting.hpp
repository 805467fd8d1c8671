#pragma once

// Functional Frank-Wolfe over small-bandwidth Gaussian mixtures, and the
// rate / schedule calculators that go with it.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <variant>
#include <vector>

#include "vbboost/core.hpp"
#include "vbboost/divergence_engine.hpp"
#include "vbboost/gaussian_family.hpp"
#include "vbboost/lmo.hpp"
#include "vbboost/target_models.hpp"

namespace vbboost {

inline double step_size(long k) {
  if (k < 0) throw std::invalid_argument("step_size: k must be >= 0");
  return 2.0 / (static_cast<double>(k) + 2.0);
}

inline double rate_bound_eq14(long k, double curvature) {
  if (k < 0) throw std::invalid_argument("rate_bound_eq14: k must be >= 0");
  if (!(curvature >= 0.0))
    throw std::invalid_argument("rate_bound_eq14: curvature must be >= 0");
  return 4.0 * curvature / (static_cast<double>(k) + 2.0);
}

/// 8 (2 - c0)^(-d/2) exp(2 M^2 / ((2 - c0) sigma_n)) / (k + 2), as printed.
inline double rate_bound_eq12(long k, const FamilyConstraints& c) {
  return rate_bound_eq14(k, curvature_bound_paper(c));
}

inline double log_rate_bound_eq12(long k, const FamilyConstraints& c) {
  if (k < 0) throw std::invalid_argument("log_rate_bound_eq12: k must be >= 0");
  return std::log(4.0) + log_curvature_bound_paper(c) -
         std::log(static_cast<double>(k) + 2.0);
}

/// ceil(exp(sqrt(n))), evaluated in extended precision.
inline long long required_iterations(long n) {
  if (n < 0) throw std::invalid_argument("required_iterations: n must be >= 0");
  const long double v = std::ceil(std::exp(std::sqrt(static_cast<long double>(n))));
  if (v > static_cast<long double>(std::numeric_limits<long long>::max() / 2))
    throw std::overflow_error("required_iterations: schedule overflows");
  return static_cast<long long>(v);
}

/// Weight carried after K steps by the component added at step j - 1
/// (j = 1..K), computed from the gamma sequence.
inline double frank_wolfe_weight(long j, long K) {
  if (j < 1 || j > K) throw std::invalid_argument("frank_wolfe_weight: j in 1..K");
  double w = step_size(j - 1);
  for (long l = j; l <= K - 1; ++l) w *= 1.0 - step_size(l);
  return w;
}

struct BoostConfig {
  int iterations = 10;
  LmoConfig lmo;
  DivergenceBudget eval_budget = QuadratureSpec{};
  std::uint64_t seed = 0;
  // Curvature used in the per-iteration 4C/(k+2) bound. When unset it is the
  // empirical sup from curvature_sample (d <= 2) with this many trials.
  std::optional<double> curvature;
  std::size_t curvature_trials = 2000;

  void validate() const {
    if (iterations < 1)
      throw std::invalid_argument("BoostConfig: iterations must be >= 1");
    lmo.validate();
    if (curvature && !(*curvature >= 0.0))
      throw std::invalid_argument("BoostConfig: curvature must be >= 0");
    if (!curvature && curvature_trials < 1)
      throw std::invalid_argument("BoostConfig: curvature_trials must be >= 1");
  }
};

struct BoostRecord {
  long k = 0;
  double gamma = 0.0;
  IsotropicGaussian component;
  // KL(psi^(k+1) || pi_n), i.e. the divergence after this step.
  DivergenceEstimate objective;
  double lmo_objective = 0.0;
  double rate_bound_eq14 = 0.0;
  double rate_bound_eq12 = 0.0;
  double log_rate_bound_eq12 = 0.0;
};

struct BoostTrace {
  FamilyConstraints constraints;
  IsotropicGaussian initializer;
  std::uint64_t seed = 0;
  std::string curvature_source;  // "empirical" or "supplied"
  double curvature = 0.0;
  double log_curvature_paper = 0.0;
  double log_curvature_rederived = 0.0;
  std::vector<BoostRecord> records;
};

struct BoostResult {
  GaussianMixture mixture;
  BoostTrace trace;
};

namespace detail {

inline DivergenceBudget reseed(const DivergenceBudget& b, std::uint64_t seed) {
  if (const auto* mc = std::get_if<MonteCarloBudget>(&b))
    return MonteCarloBudget{mc->samples, seed};
  return b;
}

}  // namespace detail

/// K steps of psi <- (1 - gamma_k) psi + gamma_k phi_k with phi_k from the
/// approximate LMO on s = log psi - log pi_n. gamma_0 = 1, so the initializer
/// is replaced at the first step and only appears in the trace header.
inline BoostResult run_boost(const PosteriorTarget& t, const FamilyConstraints& c,
                             const IsotropicGaussian& init,
                             const BoostConfig& config) {
  c.validate();
  config.validate();
  require_dim("run_boost", c.d, t.d);
  require_dim("run_boost", c.d, init.dim());
  if (!in_family(init, c))
    throw ConstraintError("run_boost: initializer is outside the family");

  BoostTrace trace{c, init, config.seed, "supplied", 0.0,
                   log_curvature_bound_paper(c), log_curvature_bound_rederived(c),
                   {}};
  if (config.curvature) {
    trace.curvature = *config.curvature;
  } else if (c.d <= 2) {
    trace.curvature_source = "empirical";
    trace.curvature =
        curvature_sample(c, config.curvature_trials, mix_seed(config.seed, 0xC0))
            .empirical_sup;
  } else {
    trace.curvature_source = "rederived";
    trace.curvature = curvature_bound_rederived(c);
  }

  GaussianMixture psi(init);
  trace.records.reserve(static_cast<std::size_t>(config.iterations));
  for (long k = 0; k < config.iterations; ++k) {
    const double gamma = step_size(k);
    LmoConfig lmo_cfg = config.lmo;
    lmo_cfg.seed = mix_seed(config.seed, 0x1A, static_cast<std::uint64_t>(k));
    // The gap tolerance gamma_k C / 2 is recorded, not enforced.
    const double gap = gamma * std::max(trace.curvature, 1e-300) / 2.0;
    auto lmo = solve_lmo(psi, t, c, lmo_cfg, gap);
    psi = convex_update(psi, lmo.component, gamma);
    const auto budget = detail::reseed(
        config.eval_budget, mix_seed(config.seed, 0xE7, static_cast<std::uint64_t>(k)));
    BoostRecord rec{k,
                    gamma,
                    lmo.component,
                    kl_to_target(psi, t, budget),
                    lmo.objective,
                    rate_bound_eq14(k + 1, trace.curvature),
                    rate_bound_eq12(k + 1, c),
                    log_rate_bound_eq12(k + 1, c)};
    trace.records.push_back(std::move(rec));
  }
  return {std::move(psi), std::move(trace)};
}

}  // namespace vbboost
