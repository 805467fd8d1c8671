#pragma once

// Synthetic data and posterior targets: the conjugate Gaussian model with
// exact posterior, exponential-family models with an assumption audit, and a
// generic unnormalized log-posterior contract.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vbboost/core.hpp"
#include "vbboost/gaussian_family.hpp"

namespace vbboost {

// ---------------------------------------------------------------------------
// Full-covariance Gaussian closed forms. These are used for statistics about
// the exact conjugate posterior, never as variational components.

inline double log_det_spd(const Matrix& S) {
  Eigen::LLT<Matrix> llt(S);
  if (llt.info() != Eigen::Success)
    throw std::domain_error("matrix is not positive definite");
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

inline double log_density_full(const Vector& mean, const Matrix& cov,
                               const Vector& theta) {
  require_dim("log_density_full", mean.size(), theta.size());
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success)
    throw std::domain_error("covariance is not positive definite");
  const Vector r = theta - mean;
  const Vector y = llt.matrixL().solve(r);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(mean.size()) * kLogTwoPi + logdet +
                 y.squaredNorm());
}

/// KL(N(mu_a, S_a) || N(mu_b, S_b)).
inline double kl_gaussian_full(const Vector& mu_a, const Matrix& S_a,
                               const Vector& mu_b, const Matrix& S_b) {
  require_dim("kl_gaussian_full", mu_a.size(), mu_b.size());
  const auto d = static_cast<double>(mu_a.size());
  Eigen::LLT<Matrix> llt_b(S_b);
  if (llt_b.info() != Eigen::Success)
    throw std::domain_error("kl_gaussian_full: S_b not positive definite");
  const Matrix prec_Sa = llt_b.solve(S_a);
  const Vector diff = mu_b - mu_a;
  const double maha = diff.dot(llt_b.solve(diff));
  // tr(S_b^-1 S_a) - d - log det(S_b^-1 S_a), via eigenvalues so that the
  // near-identity case does not lose digits.
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ges(S_a, S_b,
                                                       Eigen::EigenvaluesOnly);
  double shape = 0.0;
  if (ges.info() == Eigen::Success) {
    for (long i = 0; i < ges.eigenvalues().size(); ++i) {
      const double x = ges.eigenvalues()[i] - 1.0;
      shape += x - std::log1p(x);
    }
  } else {
    shape = prec_Sa.trace() - d - (log_det_spd(S_a) - log_det_spd(S_b));
  }
  return 0.5 * (shape + maha);
}

/// Hellinger distance between N(mu_a, S_a) and N(mu_b, S_b).
inline double hellinger_gaussian_full(const Vector& mu_a, const Matrix& S_a,
                                      const Vector& mu_b, const Matrix& S_b) {
  require_dim("hellinger_gaussian_full", mu_a.size(), mu_b.size());
  const Matrix S_avg = 0.5 * (S_a + S_b);
  Eigen::LLT<Matrix> llt(S_avg);
  const Vector diff = mu_a - mu_b;
  const double maha = diff.dot(llt.solve(diff));
  const double log_bc = 0.25 * log_det_spd(S_a) + 0.25 * log_det_spd(S_b) -
                        0.5 * log_det_spd(S_avg) - 0.125 * maha;
  return std::sqrt(std::clamp(-std::expm1(log_bc), 0.0, 1.0));
}

// ---------------------------------------------------------------------------

struct Dataset {
  Matrix points;  // n x p, one observation per row
  std::uint64_t seed = 0;
  std::string model;

  [[nodiscard]] long n() const { return points.rows(); }
  [[nodiscard]] long p() const { return points.cols(); }

  void validate() const {
    if (points.rows() < 1) throw std::invalid_argument("Dataset: n must be >= 1");
    if (!points.allFinite())
      throw std::invalid_argument("Dataset: entries must be finite");
  }
};

/// X_i ~ N(theta, Sigma) i.i.d., theta ~ N(mu0, Sigma0); theta0 is the truth.
struct ConjugateGaussianModel {
  Matrix Sigma;
  Vector mu0;
  Matrix Sigma0;
  Vector theta0;

  static ConjugateGaussianModel isotropic(int d, double sigma2, double mu0,
                                          double sigma0_2, double theta0) {
    ConjugateGaussianModel m{Matrix::Identity(d, d) * sigma2,
                             Vector::Constant(d, mu0),
                             Matrix::Identity(d, d) * sigma0_2,
                             Vector::Constant(d, theta0)};
    m.validate();
    return m;
  }

  [[nodiscard]] long d() const { return mu0.size(); }

  void validate() const {
    const long d = mu0.size();
    if (d < 1) throw std::invalid_argument("ConjugateGaussianModel: d >= 1");
    if (Sigma.rows() != d || Sigma.cols() != d || Sigma0.rows() != d ||
        Sigma0.cols() != d || theta0.size() != d)
      throw std::invalid_argument(
          "ConjugateGaussianModel: inconsistent dimensions");
    for (const Matrix* S : {&Sigma, &Sigma0}) {
      if (!S->isApprox(S->transpose()))
        throw std::invalid_argument("ConjugateGaussianModel: covariance not symmetric");
      Eigen::SelfAdjointEigenSolver<Matrix> es(*S, Eigen::EigenvaluesOnly);
      if (!(es.eigenvalues().minCoeff() > 0.0))
        throw std::invalid_argument(
            "ConjugateGaussianModel: covariance not positive definite");
    }
  }
};

inline Dataset simulate_data(const ConjugateGaussianModel& model, long n,
                             std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("simulate_data: n must be >= 1");
  model.validate();
  const long d = model.d();
  const Matrix L = model.Sigma.llt().matrixL();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Dataset data;
  data.points.resize(n, d);
  data.seed = seed;
  data.model = "conjugate_gaussian";
  Vector z(d);
  for (long i = 0; i < n; ++i) {
    for (long k = 0; k < d; ++k) z[k] = normal(rng);
    data.points.row(i) = (model.theta0 + L * z).transpose();
  }
  return data;
}

struct SufficientStats {
  long n = 0;
  Vector mean;
  Matrix scatter;  // sum_i (x_i - mean)(x_i - mean)^T
};

inline SufficientStats sufficient_stats(const Dataset& data) {
  SufficientStats s;
  s.n = data.n();
  s.mean = data.points.colwise().mean().transpose();
  const Matrix centered = data.points.rowwise() - s.mean.transpose();
  s.scatter = centered.transpose() * centered;
  return s;
}

struct PosteriorParams {
  Vector mu_n;
  Matrix Sigma_n;
};

enum class PosteriorUpdate {
  General,       // Sigma_n (n Sigma^-1 X̄ + Sigma0^-1 mu0)
  EqualCovMean,  // (n X̄ + mu0)/(n+1), exact only when Sigma0 = Sigma
};

inline PosteriorParams posterior_params(
    const ConjugateGaussianModel& model, const Dataset& data,
    PosteriorUpdate update = PosteriorUpdate::General) {
  require_dim("posterior_params", model.d(), data.p());
  const auto stats = sufficient_stats(data);
  const auto n = static_cast<double>(stats.n);
  const Matrix prec_lik = model.Sigma.inverse();
  const Matrix prec_prior = model.Sigma0.inverse();
  const Matrix prec_post = n * prec_lik + prec_prior;
  Eigen::LLT<Matrix> llt(prec_post);
  if (llt.info() != Eigen::Success)
    throw std::domain_error("posterior_params: singular posterior precision");
  PosteriorParams out;
  out.Sigma_n = llt.solve(Matrix::Identity(model.d(), model.d()));
  out.Sigma_n = 0.5 * (out.Sigma_n + out.Sigma_n.transpose());
  if (update == PosteriorUpdate::General) {
    out.mu_n = llt.solve(n * prec_lik * stats.mean + prec_prior * model.mu0);
  } else {
    out.mu_n = (n * stats.mean + model.mu0) / (n + 1.0);
  }
  return out;
}

// ---------------------------------------------------------------------------

/// theta -> log prod_i f(X_i; theta) + log pi(theta), up to an additive
/// constant. When `log_normalizer` is set, exp(log_unnorm - log_normalizer)
/// is a probability density.
struct PosteriorTarget {
  int d = 1;
  std::function<double(const Vector&)> log_unnorm;
  std::optional<double> log_normalizer;
  // Present for the conjugate model only: the exact posterior N(mu_n, Sigma_n).
  std::optional<PosteriorParams> exact;

  [[nodiscard]] double log_density(const Vector& theta) const {
    return log_unnorm(theta) - log_normalizer.value_or(0.0);
  }
  [[nodiscard]] bool normalized() const { return log_normalizer.has_value(); }

  // Same target with `c` added to the unnormalized log density; the normalizer
  // (if any) is dropped so that the shift is observable.
  [[nodiscard]] PosteriorTarget shifted_unnormalized(double c) const {
    PosteriorTarget t;
    t.d = d;
    t.log_unnorm = [f = log_unnorm, c](const Vector& th) { return f(th) + c; };
    return t;
  }
};

/// Pieces of the conjugate model that the validation harness needs beyond
/// the target itself.
class ConjugatePosterior {
 public:
  ConjugatePosterior(const ConjugateGaussianModel& model, const Dataset& data)
      : model_(model),
        stats_(sufficient_stats(data)),
        lik_chol_(model.Sigma),
        lik_logdet_(log_det_spd(model.Sigma)),
        prior_chol_(model.Sigma0),
        prior_logdet_(log_det_spd(model.Sigma0)),
        post_(posterior_params(model, data)) {
    require_dim("ConjugatePosterior", model.d(), data.p());
    // Scatter term is independent of theta.
    const Matrix Linv_scatter = lik_chol_.matrixL().solve(stats_.scatter);
    scatter_term_ =
        lik_chol_.matrixL().solve(Linv_scatter.transpose()).transpose().trace();
    log_marginal_ = log_unnorm(post_.mu_n) +
                    0.5 * (static_cast<double>(model.d()) * kLogTwoPi +
                           log_det_spd(post_.Sigma_n));
  }

  [[nodiscard]] double loglik(const Vector& theta) const {
    const auto n = static_cast<double>(stats_.n);
    const auto d = static_cast<double>(theta.size());
    const Vector r = lik_chol_.matrixL().solve(stats_.mean - theta);
    return -0.5 * n * (d * kLogTwoPi + lik_logdet_) -
           0.5 * (n * r.squaredNorm() + scatter_term_);
  }

  /// U(theta) = -log pi(theta).
  [[nodiscard]] double neg_log_prior(const Vector& theta) const {
    const auto d = static_cast<double>(theta.size());
    const Vector r = prior_chol_.matrixL().solve(theta - model_.mu0);
    return 0.5 * (d * kLogTwoPi + prior_logdet_ + r.squaredNorm());
  }

  [[nodiscard]] double log_unnorm(const Vector& theta) const {
    return loglik(theta) - neg_log_prior(theta);
  }

  /// L_n(theta, theta0) = sum_i log f(X_i; theta) / f(X_i; theta0).
  [[nodiscard]] double loglik_ratio(const Vector& theta) const {
    const auto n = static_cast<double>(stats_.n);
    const Vector r = lik_chol_.matrixL().solve(stats_.mean - theta);
    const Vector r0 = lik_chol_.matrixL().solve(stats_.mean - model_.theta0);
    return -0.5 * n * (r.squaredNorm() - r0.squaredNorm());
  }

  /// log of the marginal likelihood int prod f(X_i; theta) pi(theta) dtheta.
  [[nodiscard]] double log_marginal() const { return log_marginal_; }

  /// log m(X_n) = log int exp(L_n(theta, theta0)) pi(theta) dtheta.
  [[nodiscard]] double log_marginal_ratio() const {
    return log_marginal_ - loglik(model_.theta0);
  }

  [[nodiscard]] const PosteriorParams& posterior() const { return post_; }
  [[nodiscard]] const SufficientStats& stats() const { return stats_; }
  [[nodiscard]] const ConjugateGaussianModel& model() const { return model_; }

 private:
  ConjugateGaussianModel model_;
  SufficientStats stats_;
  Eigen::LLT<Matrix> lik_chol_;
  double lik_logdet_;
  Eigen::LLT<Matrix> prior_chol_;
  double prior_logdet_;
  PosteriorParams post_;
  double scatter_term_ = 0.0;
  double log_marginal_ = 0.0;
};

inline PosteriorTarget make_conjugate_target(const ConjugateGaussianModel& model,
                                             const Dataset& data) {
  auto post = std::make_shared<const ConjugatePosterior>(model, data);
  PosteriorTarget t;
  t.d = static_cast<int>(model.d());
  t.log_unnorm = [post](const Vector& theta) { return post->log_unnorm(theta); };
  t.log_normalizer = post->log_marginal();
  t.exact = post->posterior();
  return t;
}

/// N(theta0, sigma_n^2 I_d): the feasible reference density centred at the
/// truth.
inline IsotropicGaussian q0_reference(const FamilyConstraints& c,
                                      const Vector& theta0) {
  c.validate();
  require_dim("q0_reference", c.d, theta0.size());
  if (theta0.norm() > c.M * (1.0 + kMembershipSlack))
    throw ConstraintError("q0_reference: truth lies outside the mean ball (||theta0|| = " +
                          std::to_string(theta0.norm()) + " > M = " +
                          std::to_string(c.M) + ")");
  return IsotropicGaussian(theta0, c.sigma_n);
}

// ---------------------------------------------------------------------------
// Exponential families f(x; theta) = h(x) exp(theta^T T(x) - A(theta)).

struct ExponentialFamilyModel {
  std::string name;
  int d = 1;  // canonical parameter dimension (= number of statistics)
  std::function<Vector(const Vector& x)> sufficient_stats;
  std::function<double(const Vector& x)> log_base;  // log h(x)
  std::function<double(const Vector& theta)> log_partition;
  std::function<Vector(const Vector& theta)> grad_log_partition;
  std::function<Matrix(const Vector& theta)> hess_log_partition;
  std::function<double(const Vector& theta)> log_prior;
  // Draws one observation at theta.
  std::function<Vector(const Vector& theta, std::mt19937_64& rng)> draw;
  // Exact E_theta[g(X)] by summation or high-order quadrature over x.
  std::function<double(const Vector& theta,
                       const std::function<double(const Vector&)>& g)>
      expect;
  Vector theta0;

  [[nodiscard]] double log_f(const Vector& x, const Vector& theta) const {
    return theta.dot(sufficient_stats(x)) - log_partition(theta) + log_base(x);
  }
};

namespace detail {

inline double std_normal_prior(const Vector& theta, double scale) {
  const auto d = static_cast<double>(theta.size());
  return -0.5 * (d * (kLogTwoPi + 2.0 * std::log(scale)) +
                 theta.squaredNorm() / (scale * scale));
}

// Trapezoid expectation under N(m, 1) on m +- 14 with fine spacing; the
// integrands used by the audit are polynomial times Gaussian so this is
// accurate far beyond 1e-10.
inline double expect_unit_normal_1d(double m,
                                    const std::function<double(const Vector&)>& g) {
  constexpr int kNodes = 20001;
  const double lo = m - 14.0;
  const double h = 28.0 / (kNodes - 1);
  double acc = 0.0;
  Vector x(1);
  for (int i = 0; i < kNodes; ++i) {
    x[0] = lo + h * i;
    const double z = x[0] - m;
    const double w = (i == 0 || i == kNodes - 1) ? 0.5 : 1.0;
    acc += w * g(x) * std::exp(-0.5 * z * z);
  }
  return acc * h / std::sqrt(2.0 * std::numbers::pi);
}

}  // namespace detail

/// N(theta, 1) with canonical parameter theta: A(theta) = theta^2 / 2.
inline ExponentialFamilyModel gaussian_mean_family(double theta0,
                                                   double prior_scale = 10.0) {
  ExponentialFamilyModel m;
  m.name = "gaussian_mean";
  m.d = 1;
  m.sufficient_stats = [](const Vector& x) { return Vector(x); };
  m.log_base = [](const Vector& x) { return -0.5 * (kLogTwoPi + x[0] * x[0]); };
  m.log_partition = [](const Vector& th) { return 0.5 * th.squaredNorm(); };
  m.grad_log_partition = [](const Vector& th) { return Vector(th); };
  m.hess_log_partition = [](const Vector& th) {
    return Matrix::Identity(th.size(), th.size());
  };
  m.log_prior = [prior_scale](const Vector& th) {
    return detail::std_normal_prior(th, prior_scale);
  };
  m.draw = [](const Vector& th, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(th[0], 1.0);
    return Vector::Constant(1, normal(rng));
  };
  m.expect = [](const Vector& th, const std::function<double(const Vector&)>& g) {
    return detail::expect_unit_normal_1d(th[0], g);
  };
  m.theta0 = Vector::Constant(1, theta0);
  return m;
}

/// Bernoulli with natural parameter theta: A(theta) = log(1 + e^theta).
inline ExponentialFamilyModel bernoulli_family(double theta0,
                                               double prior_scale = 10.0) {
  auto softplus = [](double t) {
    return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
  };
  auto logistic = [](double t) { return 1.0 / (1.0 + std::exp(-t)); };
  ExponentialFamilyModel m;
  m.name = "bernoulli";
  m.d = 1;
  m.sufficient_stats = [](const Vector& x) { return Vector(x); };
  m.log_base = [](const Vector&) { return 0.0; };
  m.log_partition = [softplus](const Vector& th) { return softplus(th[0]); };
  m.grad_log_partition = [logistic](const Vector& th) {
    return Vector::Constant(1, logistic(th[0]));
  };
  m.hess_log_partition = [logistic](const Vector& th) {
    const double p = logistic(th[0]);
    return Matrix::Constant(1, 1, p * (1.0 - p));
  };
  m.log_prior = [prior_scale](const Vector& th) {
    return detail::std_normal_prior(th, prior_scale);
  };
  m.draw = [logistic](const Vector& th, std::mt19937_64& rng) {
    std::bernoulli_distribution b(logistic(th[0]));
    return Vector::Constant(1, b(rng) ? 1.0 : 0.0);
  };
  m.expect = [logistic](const Vector& th,
                        const std::function<double(const Vector&)>& g) {
    const double p = logistic(th[0]);
    return (1.0 - p) * g(Vector::Constant(1, 0.0)) +
           p * g(Vector::Constant(1, 1.0));
  };
  m.theta0 = Vector::Constant(1, theta0);
  return m;
}

/// Poisson with natural parameter theta = log(rate): A(theta) = e^theta.
inline ExponentialFamilyModel poisson_family(double theta0,
                                             double prior_scale = 10.0) {
  ExponentialFamilyModel m;
  m.name = "poisson";
  m.d = 1;
  m.sufficient_stats = [](const Vector& x) { return Vector(x); };
  m.log_base = [](const Vector& x) { return -std::lgamma(x[0] + 1.0); };
  m.log_partition = [](const Vector& th) { return std::exp(th[0]); };
  m.grad_log_partition = [](const Vector& th) {
    return Vector::Constant(1, std::exp(th[0]));
  };
  m.hess_log_partition = [](const Vector& th) {
    return Matrix::Constant(1, 1, std::exp(th[0]));
  };
  m.log_prior = [prior_scale](const Vector& th) {
    return detail::std_normal_prior(th, prior_scale);
  };
  m.draw = [](const Vector& th, std::mt19937_64& rng) {
    std::poisson_distribution<long> pois(std::exp(th[0]));
    return Vector::Constant(1, static_cast<double>(pois(rng)));
  };
  m.expect = [](const Vector& th, const std::function<double(const Vector&)>& g) {
    const double rate = std::exp(th[0]);
    const long kmax = static_cast<long>(rate + 40.0 * std::sqrt(rate + 1.0) + 40);
    double acc = 0.0;
    for (long k = 0; k <= kmax; ++k) {
      const double logp = k * th[0] - rate - std::lgamma(k + 1.0);
      acc += std::exp(logp) * g(Vector::Constant(1, static_cast<double>(k)));
    }
    return acc;
  };
  m.theta0 = Vector::Constant(1, theta0);
  return m;
}

inline Dataset simulate_data(const ExponentialFamilyModel& model, long n,
                             std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("simulate_data: n must be >= 1");
  std::mt19937_64 rng(seed);
  const Vector first = model.draw(model.theta0, rng);
  Dataset data;
  data.points.resize(n, first.size());
  data.points.row(0) = first.transpose();
  for (long i = 1; i < n; ++i)
    data.points.row(i) = model.draw(model.theta0, rng).transpose();
  data.seed = seed;
  data.model = model.name;
  return data;
}

/// Unnormalized posterior for an exponential-family likelihood.
inline PosteriorTarget make_expfam_target(const ExponentialFamilyModel& model,
                                          const Dataset& data) {
  Vector t_sum = Vector::Zero(model.d);
  double base = 0.0;
  for (long i = 0; i < data.n(); ++i) {
    const Vector x = data.points.row(i).transpose();
    t_sum += model.sufficient_stats(x);
    base += model.log_base(x);
  }
  const auto n = static_cast<double>(data.n());
  PosteriorTarget t;
  t.d = model.d;
  t.log_unnorm = [model, t_sum, base, n](const Vector& th) {
    return th.dot(t_sum) - n * model.log_partition(th) + base +
           model.log_prior(th);
  };
  return t;
}

// ---------------------------------------------------------------------------

struct LipschitzEstimates {
  double grad;            // A'(theta)
  double hess_times_theta;  // A''(theta) theta
  double grad_outer;      // A'(theta) A'(theta)^T
  double hess;            // A''(theta)
};

struct Corollary1Audit {
  double min_hessian_eigenvalue = 0.0;
  bool strongly_convex = false;
  double alpha = 1.0;
  LipschitzEstimates lipschitz{};
  // max over grid of |KL_direct - Bregman| and |KL_eq30 - Bregman|.
  double max_kl_bregman_gap = 0.0;
  double max_kl_direct_gap = 0.0;
  bool kl_identity_holds = false;
  // Second-moment check: per grid point, |mu2_formula - mu2_mc| / se.
  double max_mu2_z = 0.0;
  bool mu2_matches = false;
  int mc_draws = 0;
  std::vector<std::string> failures;
};

/// Empirical check of the exponential-family smoothness and convexity
/// conditions over a user-declared grid. Failures are reported, not thrown.
inline Corollary1Audit check_corollary1_assumptions(
    const ExponentialFamilyModel& model, const std::vector<Vector>& grid,
    double alpha, int mc_draws = 20000, std::uint64_t seed = 0) {
  if (grid.empty())
    throw std::invalid_argument("check_corollary1_assumptions: empty grid");
  Corollary1Audit audit;
  audit.alpha = alpha;
  audit.mc_draws = mc_draws;
  const Vector& th0 = model.theta0;

  double min_eig = std::numeric_limits<double>::infinity();
  for (const auto& th : grid) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(model.hess_log_partition(th),
                                             Eigen::EigenvaluesOnly);
    min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
  }
  audit.min_hessian_eigenvalue = min_eig;
  audit.strongly_convex = min_eig > 0.0;
  if (!audit.strongly_convex)
    audit.failures.emplace_back("log-partition Hessian not positive on grid");

  auto smax = [](const Matrix& A) {
    Eigen::JacobiSVD<Matrix> svd(A);
    return svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
  };
  LipschitzEstimates lip{0.0, 0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (std::size_t j = i + 1; j < grid.size(); ++j) {
      const double dist = (grid[i] - grid[j]).norm();
      if (dist == 0.0) continue;
      const double scale = std::pow(dist, alpha);
      const Vector gi = model.grad_log_partition(grid[i]);
      const Vector gj = model.grad_log_partition(grid[j]);
      const Matrix Hi = model.hess_log_partition(grid[i]);
      const Matrix Hj = model.hess_log_partition(grid[j]);
      lip.grad = std::max(lip.grad, (gi - gj).norm() / scale);
      lip.hess_times_theta = std::max(
          lip.hess_times_theta, (Hi * grid[i] - Hj * grid[j]).norm() / scale);
      lip.grad_outer = std::max(
          lip.grad_outer, smax(gi * gi.transpose() - gj * gj.transpose()) / scale);
      lip.hess = std::max(lip.hess, smax(Hi - Hj) / scale);
    }
  }
  audit.lipschitz = lip;

  // KL(theta0 || theta) three ways: direct expectation of the log-likelihood
  // ratio, the sufficient-statistic form with nu0 = E[T | theta0], and the
  // Bregman divergence of A.
  const double A0 = model.log_partition(th0);
  const Vector grad0 = model.grad_log_partition(th0);
  const Matrix hess0 = model.hess_log_partition(th0);
  Vector nu0(model.d);
  for (int l = 0; l < model.d; ++l) {
    nu0[l] = model.expect(th0, [&](const Vector& x) {
      return model.sufficient_stats(x)[l];
    });
  }
  std::mt19937_64 rng(seed);
  double max_z = 0.0;
  bool mu2_ok = true;
  for (const auto& th : grid) {
    const double bregman = model.log_partition(th) - A0 - (th - th0).dot(grad0);
    const double kl30 = model.log_partition(th) - A0 - (th - th0).dot(nu0);
    const double kl_direct = model.expect(th0, [&](const Vector& x) {
      return model.log_f(x, th0) - model.log_f(x, th);
    });
    audit.max_kl_bregman_gap =
        std::max(audit.max_kl_bregman_gap, std::abs(kl30 - bregman));
    audit.max_kl_direct_gap =
        std::max(audit.max_kl_direct_gap, std::abs(kl_direct - bregman));

    const Vector dth = th - th0;
    const double mu2 = dth.dot(hess0 * dth) + bregman * bregman;
    double sum = 0.0;
    double sum_sq = 0.0;
    for (int r = 0; r < mc_draws; ++r) {
      const Vector x = model.draw(th0, rng);
      const double ell = model.log_f(x, th) - model.log_f(x, th0);
      sum += ell * ell;
      sum_sq += ell * ell * ell * ell;
    }
    const double mean = sum / mc_draws;
    const double var = std::max(0.0, sum_sq / mc_draws - mean * mean);
    const double se = std::sqrt(var / mc_draws);
    const double gap = std::abs(mean - mu2);
    if (se > 0.0) {
      max_z = std::max(max_z, gap / se);
      if (gap > 3.0 * se) mu2_ok = false;
    } else if (gap > 1e-12) {
      mu2_ok = false;
    }
  }
  audit.max_mu2_z = max_z;
  audit.mu2_matches = mu2_ok;
  audit.kl_identity_holds =
      audit.max_kl_bregman_gap <= 1e-8 && audit.max_kl_direct_gap <= 1e-8;
  if (!audit.kl_identity_holds)
    audit.failures.emplace_back("KL(theta0||theta) differs from Bregman divergence of A");
  if (!audit.mu2_matches)
    audit.failures.emplace_back("second moment of log-likelihood ratio disagrees with formula");
  return audit;
}

}  // namespace vbboost
