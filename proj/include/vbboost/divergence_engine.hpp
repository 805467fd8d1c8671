#pragma once

// KL estimators against a posterior target, the Bregman divergence of the KL
// objective, the mixture chi-square bound and the curvature bounds that drive
// the Frank-Wolfe rate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "vbboost/core.hpp"
#include "vbboost/gaussian_family.hpp"
#include "vbboost/target_models.hpp"

namespace vbboost {

struct MonteCarloBudget {
  std::size_t samples = 10000;
  std::uint64_t seed = 0;
};

/// Composite trapezoid on [min mu - width*sigma_max, max mu + width*sigma_max]
/// per axis; `nodes_1d` for d = 1, a `nodes_2d`^2 tensor grid for d = 2.
struct QuadratureSpec {
  int nodes_1d = 4096;
  int nodes_2d = 512;
  double width = 10.0;
};

using DivergenceBudget = std::variant<MonteCarloBudget, QuadratureSpec>;

enum class EstimateMethod { Quadrature, MonteCarlo };

inline const char* to_string(EstimateMethod m) {
  return m == EstimateMethod::Quadrature ? "quadrature" : "monte_carlo";
}

struct DivergenceEstimate {
  double value = 0.0;  // nats
  double std_error = 0.0;
  EstimateMethod method = EstimateMethod::Quadrature;
  std::size_t samples = 0;
  bool normalized = true;
};

// ---------------------------------------------------------------------------
// Quadrature grids

struct QuadratureGrid {
  std::vector<Vector> nodes;
  std::vector<double> weights;
};

namespace detail {

inline void extend_bounds(const GaussianMixture& m, double width, Vector& lo,
                          Vector& hi) {
  for (const auto& g : m.components()) {
    const double pad = width * g.sigma();
    lo = lo.cwiseMin((g.mean().array() - pad).matrix());
    hi = hi.cwiseMax((g.mean().array() + pad).matrix());
  }
}

inline std::vector<double> trapezoid_axis(double lo, double hi, int nodes,
                                          std::vector<double>& w) {
  std::vector<double> x(nodes);
  w.assign(nodes, 0.0);
  const double h = (hi - lo) / (nodes - 1);
  for (int i = 0; i < nodes; ++i) {
    x[i] = lo + h * i;
    w[i] = (i == 0 || i == nodes - 1) ? 0.5 * h : h;
  }
  return x;
}

}  // namespace detail

/// Grid covering every component of every mixture in `covering`.
inline QuadratureGrid make_quadrature_grid(
    const std::vector<const GaussianMixture*>& covering,
    const QuadratureSpec& spec) {
  const long d = covering.front()->dim();
  if (d > 2)
    throw std::invalid_argument("quadrature is only available for d <= 2");
  Vector lo = Vector::Constant(d, std::numeric_limits<double>::infinity());
  Vector hi = Vector::Constant(d, -std::numeric_limits<double>::infinity());
  for (const auto* m : covering) {
    require_dim("make_quadrature_grid", d, m->dim());
    detail::extend_bounds(*m, spec.width, lo, hi);
  }
  QuadratureGrid grid;
  if (d == 1) {
    std::vector<double> w;
    const auto x = detail::trapezoid_axis(lo[0], hi[0], spec.nodes_1d, w);
    grid.nodes.reserve(x.size());
    for (double xi : x) grid.nodes.push_back(Vector::Constant(1, xi));
    grid.weights = std::move(w);
  } else {
    std::vector<double> wx, wy;
    const auto x = detail::trapezoid_axis(lo[0], hi[0], spec.nodes_2d, wx);
    const auto y = detail::trapezoid_axis(lo[1], hi[1], spec.nodes_2d, wy);
    grid.nodes.reserve(x.size() * y.size());
    grid.weights.reserve(x.size() * y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (std::size_t j = 0; j < y.size(); ++j) {
        Vector v(2);
        v << x[i], y[j];
        grid.nodes.push_back(std::move(v));
        grid.weights.push_back(wx[i] * wy[j]);
      }
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------
// KL(m || pi_n)

namespace detail {

struct RunningMoments {
  double mean_ = 0.0;
  double m2 = 0.0;
  std::size_t count = 0;
  void add(double v) {
    ++count;
    const double delta = v - mean_;
    mean_ += delta / static_cast<double>(count);
    m2 += delta * (v - mean_);
  }
  [[nodiscard]] double mean() const { return mean_; }
  [[nodiscard]] double std_error() const {
    if (count < 2) return 0.0;
    const double n = static_cast<double>(count);
    return std::sqrt(std::max(0.0, m2 / (n - 1.0)) / n);
  }
};

}  // namespace detail

/// Estimate of KL(m || pi_n). Without a target normalizer the value is KL up
/// to an additive constant (normalized = false).
inline DivergenceEstimate kl_to_target(const GaussianMixture& m,
                                       const PosteriorTarget& t,
                                       const DivergenceBudget& budget) {
  require_dim("kl_to_target", t.d, m.dim());
  DivergenceEstimate out;
  out.normalized = t.normalized();
  if (const auto* mc = std::get_if<MonteCarloBudget>(&budget)) {
    detail::RunningMoments acc;
    for (const auto& th : sample(m, mc->samples, mc->seed))
      acc.add(m.log_density_unchecked(th) - t.log_density(th));
    out.value = acc.mean();
    out.std_error = acc.std_error();
    out.method = EstimateMethod::MonteCarlo;
    out.samples = mc->samples;
    return out;
  }
  const auto& spec = std::get<QuadratureSpec>(budget);
  const auto grid = make_quadrature_grid({&m}, spec);
  double acc = 0.0;
  for (std::size_t i = 0; i < grid.nodes.size(); ++i) {
    const double lq = m.log_density_unchecked(grid.nodes[i]);
    const double q = std::exp(lq);
    if (q == 0.0) continue;
    acc += grid.weights[i] * q * (lq - t.log_density(grid.nodes[i]));
  }
  out.value = acc;
  out.method = EstimateMethod::Quadrature;
  out.samples = grid.nodes.size();
  return out;
}

/// Direct KL(psi2 || psi1) between two mixtures.
inline DivergenceEstimate kl_mixture_mixture(const GaussianMixture& psi2,
                                             const GaussianMixture& psi1,
                                             const DivergenceBudget& budget) {
  require_dim("kl_mixture_mixture", psi1.dim(), psi2.dim());
  DivergenceEstimate out;
  if (const auto* mc = std::get_if<MonteCarloBudget>(&budget)) {
    detail::RunningMoments acc;
    for (const auto& th : sample(psi2, mc->samples, mc->seed))
      acc.add(psi2.log_density_unchecked(th) - psi1.log_density_unchecked(th));
    out.value = acc.mean();
    out.std_error = acc.std_error();
    out.method = EstimateMethod::MonteCarlo;
    out.samples = mc->samples;
    return out;
  }
  const auto grid =
      make_quadrature_grid({&psi1, &psi2}, std::get<QuadratureSpec>(budget));
  double acc = 0.0;
  for (std::size_t i = 0; i < grid.nodes.size(); ++i) {
    const double l2 = psi2.log_density_unchecked(grid.nodes[i]);
    const double p2 = std::exp(l2);
    if (p2 == 0.0) continue;
    acc += grid.weights[i] * p2 * (l2 - psi1.log_density_unchecked(grid.nodes[i]));
  }
  out.value = acc;
  out.samples = grid.nodes.size();
  return out;
}

// ---------------------------------------------------------------------------
// Bregman divergence of q -> KL(q || pi_n)

struct BregmanEstimate {
  // KL(psi2||pi) - KL(psi1||pi) - int (psi2 - psi1)(log psi1 - log pi).
  DivergenceEstimate three_term;
  // KL(psi2||psi1) computed directly.
  DivergenceEstimate direct;
};

inline BregmanEstimate bregman(const GaussianMixture& psi2,
                               const GaussianMixture& psi1,
                               const PosteriorTarget& t,
                               const DivergenceBudget& budget) {
  require_dim("bregman", t.d, psi1.dim());
  require_dim("bregman", psi1.dim(), psi2.dim());
  BregmanEstimate out;
  out.direct = kl_mixture_mixture(psi2, psi1, budget);
  out.three_term.normalized = true;  // the target normalizer cancels

  if (const auto* mc = std::get_if<MonteCarloBudget>(&budget)) {
    // Four independent streams; the combined error is the root sum of squares.
    auto expect_under = [&](const GaussianMixture& q, std::uint64_t seed,
                            auto&& f) {
      detail::RunningMoments acc;
      for (const auto& th : sample(q, mc->samples, seed)) acc.add(f(th));
      return acc;
    };
    auto subgrad = [&](const Vector& th) {
      return psi1.log_density_unchecked(th) - t.log_unnorm(th);
    };
    const auto kl2 = expect_under(psi2, mix_seed(mc->seed, 1), [&](const Vector& th) {
      return psi2.log_density_unchecked(th) - t.log_unnorm(th);
    });
    const auto kl1 = expect_under(psi1, mix_seed(mc->seed, 2), [&](const Vector& th) {
      return psi1.log_density_unchecked(th) - t.log_unnorm(th);
    });
    const auto lin2 = expect_under(psi2, mix_seed(mc->seed, 3), subgrad);
    const auto lin1 = expect_under(psi1, mix_seed(mc->seed, 4), subgrad);
    out.three_term.value =
        kl2.mean() - kl1.mean() - (lin2.mean() - lin1.mean());
    out.three_term.std_error = std::sqrt(
        std::pow(kl2.std_error(), 2) + std::pow(kl1.std_error(), 2) +
        std::pow(lin2.std_error(), 2) + std::pow(lin1.std_error(), 2));
    out.three_term.method = EstimateMethod::MonteCarlo;
    out.three_term.samples = 4 * mc->samples;
    return out;
  }

  const auto grid =
      make_quadrature_grid({&psi1, &psi2}, std::get<QuadratureSpec>(budget));
  double kl2 = 0.0;
  double kl1 = 0.0;
  double lin = 0.0;
  for (std::size_t i = 0; i < grid.nodes.size(); ++i) {
    const auto& th = grid.nodes[i];
    const double w = grid.weights[i];
    const double l1 = psi1.log_density_unchecked(th);
    const double l2 = psi2.log_density_unchecked(th);
    const double lp = t.log_unnorm(th);
    const double p1 = std::exp(l1);
    const double p2 = std::exp(l2);
    if (p2 > 0.0) kl2 += w * p2 * (l2 - lp);
    if (p1 > 0.0) kl1 += w * p1 * (l1 - lp);
    if (p1 > 0.0 || p2 > 0.0) lin += w * (p2 - p1) * (l1 - lp);
  }
  out.three_term.value = kl2 - kl1 - lin;
  out.three_term.method = EstimateMethod::Quadrature;
  out.three_term.samples = grid.nodes.size();
  return out;
}

// ---------------------------------------------------------------------------
// Curvature machinery

namespace detail {

// psi1 * [(1 + u) log(1 + u) - u] with u = alpha (phi/psi1 - 1). Integrates to
// KL(psi1 + alpha (phi - psi1) || psi1) because int psi1 u = 0, and each
// pointwise term is non-negative, so small alpha loses no digits.
inline double kl_path_integrand(double log_psi1, double log_phi, double alpha) {
  const double log_r = log_phi - log_psi1;
  if (log_r < 30.0) {
    const double u = alpha * std::expm1(log_r);
    if (u < -1.0)
      throw std::domain_error("kl_path: perturbed density is negative");
    double g;
    if (std::abs(u) < 1e-3) {
      g = u * u * (0.5 - u * (1.0 / 6.0 - u * (1.0 / 12.0 - u / 20.0)));
    } else if (u == -1.0) {
      g = 1.0;
    } else {
      g = (1.0 + u) * std::log1p(u) - u;
    }
    return std::exp(log_psi1) * g;
  }
  if (alpha == 0.0) return 0.0;
  if (alpha < 0.0)
    throw std::domain_error("kl_path: perturbed density is negative");
  const double log_ratio =
      log_add_exp(std::log1p(-alpha), std::log(alpha) + log_r);
  const double psi2 = std::exp(log_psi1 + log_ratio);
  return psi2 * log_ratio - alpha * (std::exp(log_phi) - std::exp(log_psi1));
}

}  // namespace detail

/// KL(psi1 + alpha (phi - psi1) || psi1) by quadrature. Negative alpha is
/// accepted while the perturbed function remains a density on the grid.
inline double kl_path(const GaussianMixture& psi1, const IsotropicGaussian& phi,
                      double alpha, const QuadratureSpec& spec = {}) {
  require_dim("kl_path", psi1.dim(), phi.dim());
  if (!(alpha <= 1.0)) throw std::invalid_argument("kl_path: alpha > 1");
  const GaussianMixture phi_m(phi);
  const auto grid = make_quadrature_grid({&psi1, &phi_m}, spec);
  double acc = 0.0;
  for (std::size_t i = 0; i < grid.nodes.size(); ++i) {
    acc += grid.weights[i] *
           detail::kl_path_integrand(psi1.log_density_unchecked(grid.nodes[i]),
                                     phi.log_density_unchecked(grid.nodes[i]),
                                     alpha);
  }
  return acc;
}

/// sum_j beta_j (chi2(phi || phi_j) + chi2(phi_j || phi)): the Cauchy-Schwarz
/// upper bound on chi2(m || phi) + chi2(phi || m).
inline double chi2_mixture_bound(const IsotropicGaussian& phi,
                                 const GaussianMixture& m) {
  require_dim("chi2_mixture_bound", m.dim(), phi.dim());
  double acc = 0.0;
  for (std::size_t j = 0; j < m.size(); ++j) {
    const auto& pj = m.components()[j];
    acc += m.weights()[j] *
           (chi2_gaussian_gaussian(phi, pj) + chi2_gaussian_gaussian(pj, phi));
  }
  return acc;
}

/// Natural log of the printed curvature bound
/// 2 (2 - c0)^(-d/2) exp(2 M^2 / ((2 - c0) sigma_n)).
inline double log_curvature_bound_paper(const FamilyConstraints& c) {
  c.validate();
  const double d = c.d;
  return std::log(2.0) - 0.5 * d * std::log(2.0 - c.c0) +
         2.0 * c.M * c.M / ((2.0 - c.c0) * c.sigma_n);
}

inline double curvature_bound_paper(const FamilyConstraints& c) {
  return std::exp(log_curvature_bound_paper(c));
}

/// Natural log of 2 c0^d (2 - c0)^(-d/2) exp(4 M^2 / ((2 - c0) sigma_n^2)),
/// the worst case of the pairwise chi-square closed form over the family.
inline double log_curvature_bound_rederived(const FamilyConstraints& c) {
  c.validate();
  const double d = c.d;
  return std::log(2.0) + d * std::log(c.c0) - 0.5 * d * std::log(2.0 - c.c0) +
         4.0 * c.M * c.M / ((2.0 - c.c0) * c.sigma_n * c.sigma_n);
}

inline double curvature_bound_rederived(const FamilyConstraints& c) {
  return std::exp(log_curvature_bound_rederived(c));
}

// ---------------------------------------------------------------------------

struct CurvatureWitness {
  GaussianMixture psi1;
  IsotropicGaussian phi;
  double alpha;
};

struct CurvatureTrial {
  double scaled_kl;   // (2 / alpha^2) KL(psi2 || psi1)
  double chi2_bound;  // chi2_mixture_bound(phi, psi1)
  double alpha;
  std::size_t components;
};

struct CurvatureReport {
  FamilyConstraints constraints;
  double paper_bound = 0.0;
  double rederived_bound = 0.0;
  double log_paper_bound = 0.0;
  double log_rederived_bound = 0.0;
  double empirical_sup = 0.0;
  std::size_t trials = 0;
  std::uint64_t seed = 0;
  std::optional<CurvatureWitness> sup_witness;
  // Trials whose scaled KL exceeded the printed bound (diagnostic only).
  std::size_t paper_bound_exceeded = 0;
  // Per-instance violations of scaled_kl <= chi2_bound <= rederived_bound.
  std::size_t chain_violations = 0;
  std::vector<CurvatureTrial> records;
};

inline constexpr std::size_t kMaxCurvatureComponents = 5;

namespace detail {

inline Vector random_in_ball(long d, double radius, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector v(d);
  for (long k = 0; k < d; ++k) v[k] = normal(rng);
  const double nrm = v.norm();
  if (nrm == 0.0 || radius == 0.0) return Vector::Zero(d);
  const double r = radius * std::pow(unif(rng), 1.0 / static_cast<double>(d));
  return v * (r / nrm);
}

inline IsotropicGaussian random_family_member(const FamilyConstraints& c,
                                              std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Vector mu = random_in_ball(c.d, c.M, rng);
  const double sigma = std::min(
      c.sigma_max(), c.sigma_n * std::exp(0.5 * std::log(c.c0) * unif(rng)));
  return IsotropicGaussian(mu, sigma);
}

inline GaussianMixture random_family_mixture(const FamilyConstraints& c,
                                             std::size_t max_components,
                                             std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick_k(1, max_components);
  std::exponential_distribution<double> expo(1.0);
  const std::size_t K = pick_k(rng);
  std::vector<IsotropicGaussian> comps;
  std::vector<double> w;
  double total = 0.0;
  for (std::size_t j = 0; j < K; ++j) {
    comps.push_back(random_family_member(c, rng));
    w.push_back(expo(rng));
    total += w.back();
  }
  for (double& wj : w) wj /= total;
  return GaussianMixture(std::move(comps), std::move(w));
}

}  // namespace detail

/// Random search for the curvature sup over (psi1, phi, alpha) with
/// psi1 in Q_n (K <= 5), phi in Gamma_n, alpha in (0, 1]. KL(psi2 || psi1)
/// is evaluated by quadrature, so d <= 2.
inline CurvatureReport curvature_sample(const FamilyConstraints& c,
                                        std::size_t trials, std::uint64_t seed,
                                        const QuadratureSpec& spec = {}) {
  c.validate();
  if (trials < 1) throw std::invalid_argument("curvature_sample: trials >= 1");
  if (c.d > 2)
    throw std::invalid_argument("curvature_sample: requires d <= 2 (quadrature)");
  CurvatureReport rep;
  rep.constraints = c;
  rep.trials = trials;
  rep.seed = seed;
  rep.log_paper_bound = log_curvature_bound_paper(c);
  rep.log_rederived_bound = log_curvature_bound_rederived(c);
  rep.paper_bound = std::exp(rep.log_paper_bound);
  rep.rederived_bound = std::exp(rep.log_rederived_bound);
  rep.records.reserve(trials);

  for (std::size_t trial = 0; trial < trials; ++trial) {
    std::mt19937_64 rng(mix_seed(seed, trial));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto psi1 = detail::random_family_mixture(c, kMaxCurvatureComponents, rng);
    auto phi = detail::random_family_member(c, rng);
    const double alpha = 1.0 - unif(rng);  // (0, 1]
    const double kl = kl_path(psi1, phi, alpha, spec);
    const double scaled = 2.0 * kl / (alpha * alpha);
    const double bound = chi2_mixture_bound(phi, psi1);
    rep.records.push_back({scaled, bound, alpha, psi1.size()});
    constexpr double kRel = 1e-9;
    if (scaled > bound * (1.0 + kRel) + 1e-12 ||
        bound > rep.rederived_bound * (1.0 + kRel))
      ++rep.chain_violations;
    if (scaled > rep.paper_bound) ++rep.paper_bound_exceeded;
    if (!rep.sup_witness || scaled > rep.empirical_sup) {
      rep.empirical_sup = std::max(0.0, scaled);
      rep.sup_witness = CurvatureWitness{std::move(psi1), std::move(phi), alpha};
    }
  }
  return rep;
}

}  // namespace vbboost
