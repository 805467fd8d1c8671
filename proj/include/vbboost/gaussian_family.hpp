#pragma once

// Isotropic Gaussians, finite mixtures of them, and the small-bandwidth
// constraint set the boosting iterates live in.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vbboost/core.hpp"

namespace vbboost {

/// N(mean, sigma^2 I_d).
class IsotropicGaussian {
 public:
  IsotropicGaussian(Vector mean, double sigma)
      : mean_(std::move(mean)), sigma_(sigma) {
    if (mean_.size() < 1)
      throw std::invalid_argument("IsotropicGaussian: dimension must be >= 1");
    if (!(sigma_ > 0.0) || !std::isfinite(sigma_))
      throw std::invalid_argument("IsotropicGaussian: sigma must be positive");
    if (!all_finite(mean_))
      throw std::invalid_argument("IsotropicGaussian: mean must be finite");
    log_norm_ = -0.5 * static_cast<double>(dim()) *
                (kLogTwoPi + 2.0 * std::log(sigma_));
    inv_two_var_ = 0.5 / (sigma_ * sigma_);
  }

  // Convenience for d = 1.
  IsotropicGaussian(double mean, double sigma)
      : IsotropicGaussian(Vector::Constant(1, mean), sigma) {}

  [[nodiscard]] const Vector& mean() const { return mean_; }
  [[nodiscard]] double sigma() const { return sigma_; }
  [[nodiscard]] double variance() const { return sigma_ * sigma_; }
  [[nodiscard]] long dim() const { return mean_.size(); }

  // Unchecked; callers guarantee dimensions.
  [[nodiscard]] double log_density_unchecked(const Vector& theta) const {
    return log_norm_ - (theta - mean_).squaredNorm() * inv_two_var_;
  }

  friend bool operator==(const IsotropicGaussian& a,
                         const IsotropicGaussian& b) {
    return a.sigma_ == b.sigma_ && a.mean_ == b.mean_;
  }

 private:
  Vector mean_;
  double sigma_;
  double log_norm_ = 0.0;
  double inv_two_var_ = 0.0;
};

/// Weighted finite mixture of isotropic Gaussians sharing one dimension.
/// Components are kept in insertion order and never merged.
class GaussianMixture {
 public:
  static constexpr double kSimplexTolerance = 1e-12;

  GaussianMixture(std::vector<IsotropicGaussian> components,
                  std::vector<double> weights)
      : components_(std::move(components)), weights_(std::move(weights)) {
    if (components_.empty())
      throw std::invalid_argument("GaussianMixture: needs >= 1 component");
    if (components_.size() != weights_.size())
      throw std::invalid_argument(
          "GaussianMixture: components and weights differ in length");
    const long d = components_.front().dim();
    double total = 0.0;
    for (std::size_t j = 0; j < components_.size(); ++j) {
      require_dim("GaussianMixture", d, components_[j].dim());
      if (!(weights_[j] >= 0.0) || !std::isfinite(weights_[j]))
        throw std::invalid_argument("GaussianMixture: weights must be >= 0");
      total += weights_[j];
    }
    if (std::abs(total - 1.0) > kSimplexTolerance)
      throw std::invalid_argument(
          "GaussianMixture: weights must sum to 1 (got " +
          std::to_string(total) + ")");
    log_weights_.reserve(weights_.size());
    for (double w : weights_) log_weights_.push_back(std::log(w));
  }

  explicit GaussianMixture(IsotropicGaussian single)
      : GaussianMixture(std::vector<IsotropicGaussian>{std::move(single)},
                        std::vector<double>{1.0}) {}

  [[nodiscard]] const std::vector<IsotropicGaussian>& components() const {
    return components_;
  }
  [[nodiscard]] const std::vector<double>& weights() const { return weights_; }
  [[nodiscard]] std::size_t size() const { return components_.size(); }
  [[nodiscard]] long dim() const { return components_.front().dim(); }

  [[nodiscard]] double log_density_unchecked(const Vector& theta) const {
    // Two passes keep the max-shift exact without a temporary buffer for
    // small K; zero-weight components contribute nothing.
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < components_.size(); ++j) {
      if (weights_[j] == 0.0) continue;
      hi = std::max(hi, log_weights_[j] +
                            components_[j].log_density_unchecked(theta));
    }
    if (!std::isfinite(hi)) return hi;
    double acc = 0.0;
    for (std::size_t j = 0; j < components_.size(); ++j) {
      if (weights_[j] == 0.0) continue;
      acc += std::exp(log_weights_[j] +
                      components_[j].log_density_unchecked(theta) - hi);
    }
    return hi + std::log(acc);
  }

 private:
  std::vector<IsotropicGaussian> components_;
  std::vector<double> weights_;
  std::vector<double> log_weights_;
};

/// Parameters of the restricted family: components N(mu, sigma^2 I_d) with
/// ||mu|| <= M and sigma_n <= sigma <= sqrt(c0) sigma_n, 1 < c0 < 2.
struct FamilyConstraints {
  double M = 2.0;
  double sigma_n = 1.0;
  double c0 = 1.5;
  int d = 1;

  static FamilyConstraints make(double M, double sigma_n, double c0, int d) {
    FamilyConstraints c{M, sigma_n, c0, d};
    c.validate();
    return c;
  }

  void validate() const {
    if (!(c0 > 1.0 && c0 < 2.0))
      throw ConstraintError("c0 must lie in (1,2), got " + std::to_string(c0));
    // M = 0 is accepted as the degenerate ball {0}.
    if (!(M >= 0.0) || !std::isfinite(M))
      throw ConstraintError("M must be a non-negative finite radius");
    if (!(sigma_n > 0.0) || !std::isfinite(sigma_n))
      throw ConstraintError("sigma_n must be positive");
    if (d < 1) throw ConstraintError("d must be >= 1");
  }

  [[nodiscard]] double sigma_max() const { return std::sqrt(c0) * sigma_n; }
};

// ---------------------------------------------------------------------------
// Densities

inline double log_density(const IsotropicGaussian& g, const Vector& theta) {
  require_dim("log_density", g.dim(), theta.size());
  return g.log_density_unchecked(theta);
}

inline double mixture_log_density(const GaussianMixture& m,
                                  const Vector& theta) {
  require_dim("mixture_log_density", m.dim(), theta.size());
  return m.log_density_unchecked(theta);
}

// ---------------------------------------------------------------------------
// Sampling. Deterministic given the seed; no shared generator state.

inline std::vector<Vector> sample(const IsotropicGaussian& g, std::size_t count,
                                  std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("sample: count must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<Vector> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Vector z(g.dim());
    for (long k = 0; k < z.size(); ++k) z[k] = normal(rng);
    out.emplace_back(g.mean() + g.sigma() * z);
  }
  return out;
}

inline std::vector<Vector> sample(const GaussianMixture& m, std::size_t count,
                                  std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("sample: count must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::discrete_distribution<std::size_t> pick(m.weights().begin(),
                                               m.weights().end());
  std::vector<Vector> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& g = m.components()[pick(rng)];
    Vector z(g.dim());
    for (long k = 0; k < z.size(); ++k) z[k] = normal(rng);
    out.emplace_back(g.mean() + g.sigma() * z);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Closed-form divergences between two isotropic Gaussians. The first argument
// is the "from" density: kl(g2, g1) = KL(g2 || g1).

inline double kl_gaussian_gaussian(const IsotropicGaussian& g2,
                                   const IsotropicGaussian& g1) {
  require_dim("kl_gaussian_gaussian", g1.dim(), g2.dim());
  const double d = static_cast<double>(g1.dim());
  const double ratio = g2.variance() / g1.variance();
  const double dist2 = (g1.mean() - g2.mean()).squaredNorm();
  // ratio - 1 - log(ratio) is evaluated via log1p to stay exact near 1.
  const double x = ratio - 1.0;
  const double shape = x - std::log1p(x);
  return 0.5 * (d * shape + dist2 / g1.variance());
}

/// log(1 + chi2(g2 || g1)); finite whenever 2 sigma1^2 > sigma2^2 even when
/// the divergence itself overflows a double.
inline double log1p_chi2_gaussian_gaussian(const IsotropicGaussian& g2,
                                           const IsotropicGaussian& g1) {
  require_dim("chi2_gaussian_gaussian", g1.dim(), g2.dim());
  const double v1 = g1.variance();
  const double v2 = g2.variance();
  const double gap = 2.0 * v1 - v2;
  if (!(gap > 0.0))
    throw ValidityRegionError(
        "chi2 between Gaussians diverges unless 2*sigma1^2 > sigma2^2");
  const double d = static_cast<double>(g1.dim());
  const double dist2 = (g2.mean() - g1.mean()).squaredNorm();
  return d * (std::log(v1) - std::log(g2.sigma()) - 0.5 * std::log(gap)) +
         dist2 / gap;
}

inline double chi2_gaussian_gaussian(const IsotropicGaussian& g2,
                                     const IsotropicGaussian& g1) {
  return std::expm1(log1p_chi2_gaussian_gaussian(g2, g1));
}

/// Hellinger distance sqrt(1 - BC), symmetric, in [0, 1].
inline double hellinger_gaussian(const IsotropicGaussian& g2,
                                 const IsotropicGaussian& g1) {
  require_dim("hellinger_gaussian", g1.dim(), g2.dim());
  const double d = static_cast<double>(g1.dim());
  const double s1 = g1.sigma();
  const double s2 = g2.sigma();
  const double sum_var = g1.variance() + g2.variance();
  const double dist2 = (g1.mean() - g2.mean()).squaredNorm();
  const double log_bc =
      0.5 * d * std::log(s1 * s2 / (0.5 * sum_var)) - dist2 / (4.0 * sum_var);
  const double h2 = -std::expm1(log_bc);
  return std::sqrt(std::clamp(h2, 0.0, 1.0));
}

// ---------------------------------------------------------------------------
// Family membership

inline constexpr double kMembershipSlack = 1e-12;

inline bool in_family(const IsotropicGaussian& g, const FamilyConstraints& c) {
  if (g.dim() != c.d) return false;
  const double slack = kMembershipSlack;
  if (g.mean().norm() > c.M * (1.0 + slack)) return false;
  if (g.sigma() < c.sigma_n * (1.0 - slack)) return false;
  if (g.sigma() > c.sigma_max() * (1.0 + slack)) return false;
  return true;
}

inline bool mixture_in_family(const GaussianMixture& m,
                              const FamilyConstraints& c) {
  return std::all_of(m.components().begin(), m.components().end(),
                     [&](const IsotropicGaussian& g) { return in_family(g, c); });
}

// ---------------------------------------------------------------------------

/// (1 - gamma) m + gamma g. gamma = 1 yields the single component g.
inline GaussianMixture convex_update(const GaussianMixture& m,
                                     const IsotropicGaussian& g, double gamma) {
  require_dim("convex_update", m.dim(), g.dim());
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw std::invalid_argument("convex_update: gamma must lie in [0,1]");
  if (gamma == 0.0) return m;
  if (gamma == 1.0) return GaussianMixture(g);
  std::vector<IsotropicGaussian> comps = m.components();
  std::vector<double> w;
  w.reserve(m.size() + 1);
  double total = 0.0;
  for (double wj : m.weights()) {
    w.push_back((1.0 - gamma) * wj);
    total += w.back();
  }
  w.push_back(gamma);
  total += gamma;
  for (double& wj : w) wj /= total;
  comps.push_back(g);
  return GaussianMixture(std::move(comps), std::move(w));
}

}  // namespace vbboost
