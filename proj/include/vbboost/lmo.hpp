#pragma once

// Approximate linear minimization oracle for the boosting step:
//   argmin over (mu, sigma) in the family of  int phi(theta; mu, sigma^2)
//   [log psi_prev(theta) - log pi_n(theta)] dtheta.
// The integral is estimated with common random numbers so the surface is a
// deterministic, smooth function of (mu, sigma) at a fixed seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "vbboost/core.hpp"
#include "vbboost/divergence_engine.hpp"
#include "vbboost/gaussian_family.hpp"
#include "vbboost/target_models.hpp"

namespace vbboost {

struct LmoConfig {
  std::size_t mc_samples = 128;
  int restarts = 4;
  int max_steps = 40;
  double init_step = 1.0;
  double shrink = 0.5;
  double tol = 1e-9;
  std::uint64_t seed = 0;

  void validate() const {
    if (restarts < 1) throw std::invalid_argument("LmoConfig: restarts must be >= 1");
    if (mc_samples < 1)
      throw std::invalid_argument("LmoConfig: mc_samples must be >= 1");
    if (max_steps < 0) throw std::invalid_argument("LmoConfig: max_steps >= 0");
    if (!(init_step > 0.0)) throw std::invalid_argument("LmoConfig: init_step > 0");
    if (!(shrink > 0.0 && shrink < 1.0))
      throw std::invalid_argument("LmoConfig: shrink must lie in (0,1)");
    if (!(tol > 0.0)) throw std::invalid_argument("LmoConfig: tol > 0");
  }
};

struct LmoResult {
  IsotropicGaussian component;
  double objective = 0.0;
  double oracle_gap_bound = 0.0;
  int restarts_used = 0;
  bool feasible = false;
  // Accepted objective values per restart, in order.
  std::vector<std::vector<double>> paths;
};

/// Fixed standard-normal draws, stored as antithetic pairs (z, -z).
class CrnDraws {
 public:
  CrnDraws(long d, std::size_t count, std::uint64_t seed) : z_(d, count) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    for (std::size_t i = 0; i < count; i += 2) {
      for (long k = 0; k < d; ++k) z_(k, static_cast<long>(i)) = normal(rng);
      if (i + 1 < count)
        z_.col(static_cast<long>(i + 1)) = -z_.col(static_cast<long>(i));
    }
  }
  [[nodiscard]] const Matrix& z() const { return z_; }
  [[nodiscard]] long dim() const { return z_.rows(); }
  [[nodiscard]] std::size_t count() const {
    return static_cast<std::size_t>(z_.cols());
  }

 private:
  Matrix z_;
};

namespace detail {

inline double crn_objective(const Vector& mu, double sigma,
                            const GaussianMixture& psi_prev,
                            const PosteriorTarget& t, const CrnDraws& draws) {
  Vector theta(mu.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < draws.count(); ++i) {
    theta = mu + sigma * draws.z().col(static_cast<long>(i));
    acc += psi_prev.log_density_unchecked(theta) - t.log_density(theta);
  }
  return acc / static_cast<double>(draws.count());
}

inline bool nearly_equal(double a, double b) {
  return std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)});
}

// Lower objective wins; near-ties go to smaller ||mu||, then smaller sigma,
// then lexicographically smaller mu.
inline bool better_candidate(double fa, const IsotropicGaussian& a, double fb,
                             const IsotropicGaussian& b) {
  if (!nearly_equal(fa, fb)) return fa < fb;
  const double na = a.mean().norm();
  const double nb = b.mean().norm();
  if (na != nb) return na < nb;
  if (a.sigma() != b.sigma()) return a.sigma() < b.sigma();
  return std::lexicographical_compare(a.mean().data(),
                                      a.mean().data() + a.mean().size(),
                                      b.mean().data(),
                                      b.mean().data() + b.mean().size());
}

}  // namespace detail

/// CRN Monte Carlo estimate of int g (log psi_prev - log pi_n). Uses the
/// target normalizer when present; otherwise the value is offset by a
/// constant that does not depend on g.
inline double lmo_objective(const IsotropicGaussian& g,
                            const GaussianMixture& psi_prev,
                            const PosteriorTarget& t,
                            const MonteCarloBudget& budget) {
  require_dim("lmo_objective", psi_prev.dim(), g.dim());
  require_dim("lmo_objective", t.d, g.dim());
  const CrnDraws draws(g.dim(), budget.samples, budget.seed);
  return detail::crn_objective(g.mean(), g.sigma(), psi_prev, t, draws);
}

/// Same integral by d = 1 trapezoid quadrature; the verification reference.
inline double lmo_objective_quadrature(const IsotropicGaussian& g,
                                       const GaussianMixture& psi_prev,
                                       const PosteriorTarget& t,
                                       const QuadratureSpec& spec = {}) {
  require_dim("lmo_objective_quadrature", psi_prev.dim(), g.dim());
  const GaussianMixture gm(g);
  const auto grid = make_quadrature_grid({&gm}, spec);
  double acc = 0.0;
  for (std::size_t i = 0; i < grid.nodes.size(); ++i) {
    const double p = std::exp(g.log_density_unchecked(grid.nodes[i]));
    if (p == 0.0) continue;
    acc += grid.weights[i] * p *
           (psi_prev.log_density_unchecked(grid.nodes[i]) -
            t.log_density(grid.nodes[i]));
  }
  return acc;
}

/// Multistart projected descent over (mu, log sigma). Coordinates are scaled
/// by sigma_n; gradients are central differences on the CRN surface. Restart 0
/// starts from the canonical point (0, sigma_n).
inline LmoResult solve_lmo(const GaussianMixture& psi_prev,
                           const PosteriorTarget& t, const FamilyConstraints& c,
                           const LmoConfig& config, double gap_bound) {
  c.validate();
  config.validate();
  require_dim("solve_lmo", c.d, psi_prev.dim());
  require_dim("solve_lmo", c.d, t.d);
  if (!(gap_bound > 0.0))
    throw std::invalid_argument("solve_lmo: gap_bound must be positive");

  const long d = c.d;
  const double sn = c.sigma_n;
  const double radius = c.M / sn;              // ball radius in u = mu / sigma_n
  const double ell_max = 0.5 * std::log(c.c0);  // sigma = sigma_n e^ell
  const CrnDraws draws(d, config.mc_samples, mix_seed(config.seed, 0x11));

  auto to_gaussian = [&](const Vector& u, double ell) {
    Vector mu = sn * u;
    const double nrm = mu.norm();
    if (nrm > c.M) mu *= c.M / nrm;
    const double sigma = std::clamp(sn * std::exp(ell), sn, c.sigma_max());
    return IsotropicGaussian(std::move(mu), sigma);
  };
  auto project = [&](Vector& u, double& ell) {
    const double nrm = u.norm();
    if (nrm > radius) u *= (radius == 0.0 ? 0.0 : radius / nrm);
    ell = std::clamp(ell, 0.0, ell_max);
  };
  auto f_raw = [&](const Vector& u, double ell) {
    return detail::crn_objective(sn * u, sn * std::exp(ell), psi_prev, t, draws);
  };

  LmoResult result{IsotropicGaussian(Vector::Zero(d), sn), 0.0, gap_bound, 0,
                   false, {}};
  bool have_best = false;
  constexpr double kFdStep = 1e-4;

  for (int r = 0; r < config.restarts; ++r) {
    Vector u = Vector::Zero(d);
    double ell = 0.0;
    if (r > 0) {
      std::mt19937_64 rng(mix_seed(config.seed, 0x22, static_cast<std::uint64_t>(r)));
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      u = detail::random_in_ball(d, radius, rng);
      ell = ell_max * unif(rng);
    }
    project(u, ell);
    double f = f_raw(u, ell);
    std::vector<double> path{f};
    double step = config.init_step;

    for (int it = 0; it < config.max_steps; ++it) {
      Vector grad_u(d);
      Vector probe = u;
      for (long k = 0; k < d; ++k) {
        probe[k] = u[k] + kFdStep;
        const double fp = f_raw(probe, ell);
        probe[k] = u[k] - kFdStep;
        const double fm = f_raw(probe, ell);
        probe[k] = u[k];
        grad_u[k] = (fp - fm) / (2.0 * kFdStep);
      }
      const double grad_ell =
          (f_raw(u, ell + kFdStep) - f_raw(u, ell - kFdStep)) / (2.0 * kFdStep);
      if (!grad_u.allFinite() || !std::isfinite(grad_ell)) break;

      bool accepted = false;
      double f_new = f;
      Vector u_new;
      double ell_new = ell;
      while (step > 1e-12) {
        u_new = u - step * grad_u;
        ell_new = ell - step * grad_ell;
        project(u_new, ell_new);
        f_new = f_raw(u_new, ell_new);
        if (f_new < f - 1e-12 * std::max(1.0, std::abs(f))) {
          accepted = true;
          break;
        }
        step *= config.shrink;
      }
      if (!accepted) break;
      const double gain = f - f_new;
      u = std::move(u_new);
      ell = ell_new;
      f = f_new;
      path.push_back(f);
      step = std::min(step / config.shrink, 1e3 * config.init_step);
      if (gain < config.tol) break;
    }

    const auto cand = to_gaussian(u, ell);
    // Re-evaluate at the exactly feasible point reported to the caller.
    const double f_cand =
        detail::crn_objective(cand.mean(), cand.sigma(), psi_prev, t, draws);
    if (!have_best ||
        detail::better_candidate(f_cand, cand, result.objective, result.component)) {
      result.component = cand;
      result.objective = f_cand;
      have_best = true;
    }
    result.paths.push_back(std::move(path));
    ++result.restarts_used;
  }
  result.feasible = in_family(result.component, c);
  return result;
}

struct GridResolution {
  int mu_points = 201;
  int sigma_points = 21;
};

/// Brute-force verification oracle (d = 1): quadrature objective on a
/// (mu, sigma) grid; strict lexicographic scan, so exact ties keep the first
/// grid point.
inline LmoResult lmo_grid_oracle(const GaussianMixture& psi_prev,
                                 const PosteriorTarget& t,
                                 const FamilyConstraints& c,
                                 const GridResolution& res = {},
                                 const QuadratureSpec& spec = {}) {
  c.validate();
  if (c.d != 1 || psi_prev.dim() != 1 || t.d != 1)
    throw std::invalid_argument("lmo_grid_oracle: d must be 1");
  if (res.mu_points < 2 || res.sigma_points < 2)
    throw std::invalid_argument("lmo_grid_oracle: grid needs >= 2 points per axis");

  // One shared theta grid for every candidate, covering the whole family.
  const double pad = spec.width * c.sigma_max();
  const double lo = -c.M - pad;
  const double hi = c.M + pad;
  std::vector<double> w;
  const auto x = detail::trapezoid_axis(lo, hi, spec.nodes_1d, w);
  std::vector<double> s(x.size());
  Vector th(1);
  for (std::size_t i = 0; i < x.size(); ++i) {
    th[0] = x[i];
    s[i] = psi_prev.log_density_unchecked(th) - t.log_density(th);
  }

  const double smax = c.sigma_max();
  LmoResult best{IsotropicGaussian(-c.M, c.sigma_n), 0.0, 0.0, 0, true, {}};
  bool have = false;
  for (int a = 0; a < res.mu_points; ++a) {
    const double mu = (a == res.mu_points - 1)
                          ? c.M
                          : -c.M + 2.0 * c.M * a / (res.mu_points - 1);
    for (int b = 0; b < res.sigma_points; ++b) {
      const double sigma =
          (b == res.sigma_points - 1)
              ? smax
              : c.sigma_n + (smax - c.sigma_n) * b / (res.sigma_points - 1);
      const IsotropicGaussian g(mu, sigma);
      double acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        th[0] = x[i];
        const double p = std::exp(g.log_density_unchecked(th));
        if (p != 0.0) acc += w[i] * p * s[i];
      }
      if (!have ||
          acc < best.objective - 1e-12 * std::max(1.0, std::abs(best.objective))) {
        best.component = g;
        best.objective = acc;
        have = true;
      }
    }
  }
  best.feasible = in_family(best.component, c);
  return best;
}

}  // namespace vbboost
