#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "vbboost/divergence_engine.hpp"

using namespace vbboost;

namespace {

IsotropicGaussian g1(double mu, double sigma) { return IsotropicGaussian(Vector::Constant(1, mu), sigma); }

// Normalized 1-d normal target.
PosteriorTarget normal_target(double mu, double sigma) {
  PosteriorTarget t;
  t.d = 1;
  t.log_unnorm = [mu, sigma](const Vector& th) {
    return static_cast<double>(oracle::log_normal_pdf(th[0], mu, sigma));
  };
  t.log_normalizer = 0.0;
  return t;
}

oracle::Mix to_oracle(const GaussianMixture& m) {
  oracle::Mix o;
  for (std::size_t j = 0; j < m.size(); ++j) {
    o.mu.push_back(m.components()[j].mean()[0]);
    o.sigma.push_back(m.components()[j].sigma());
    o.w.push_back(m.weights()[j]);
  }
  return o;
}

GaussianMixture random_mixture(std::size_t K, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mu(-2.0, 2.0), sd(0.4, 1.6), w(0.1, 1.0);
  std::vector<IsotropicGaussian> comps;
  std::vector<double> ws;
  double tot = 0.0;
  for (std::size_t j = 0; j < K; ++j) {
    comps.push_back(g1(mu(rng), sd(rng)));
    ws.push_back(w(rng));
    tot += ws.back();
  }
  for (double& x : ws) x /= tot;
  return GaussianMixture(std::move(comps), std::move(ws));
}

}  // namespace

TEST(KlToTarget, ConjugatePosteriorIdentity) {
  const auto m = ConjugateGaussianModel::isotropic(1, 1.0, 0.0, 2.0, 0.0);
  const auto data = simulate_data(m, 10, 3);
  const auto t = make_conjugate_target(m, data);
  const GaussianMixture post(g1(t.exact->mu_n[0], std::sqrt(t.exact->Sigma_n(0, 0))));
  const auto mc = kl_to_target(post, t, MonteCarloBudget{20000, 1});
  EXPECT_LE(std::abs(mc.value), std::max(3 * mc.std_error, 1e-12));
  EXPECT_EQ(mc.method, EstimateMethod::MonteCarlo);
  EXPECT_TRUE(mc.normalized);
  const auto q = kl_to_target(post, t, QuadratureSpec{});
  EXPECT_NEAR(q.value, 0.0, 1e-10);
  EXPECT_EQ(q.std_error, 0.0);
  EXPECT_EQ(q.method, EstimateMethod::Quadrature);
}

TEST(KlToTarget, ClosedFormShiftedNormal) {
  const auto t = normal_target(1.0, 1.0);
  const GaussianMixture m(g1(0.0, 1.0));
  const auto mc = kl_to_target(m, t, MonteCarloBudget{100000, 7});
  EXPECT_LE(std::abs(mc.value - 0.5), 3 * mc.std_error);
  EXPECT_EQ(mc.samples, 100000u);
  EXPECT_NEAR(kl_to_target(m, t, QuadratureSpec{}).value, 0.5, 1e-10);
}

TEST(KlToTarget, SeedsAgreeWithinNoise) {
  const auto t = normal_target(0.3, 0.8);
  const GaussianMixture m({g1(-0.5, 0.7), g1(0.9, 1.1)}, {0.4, 0.6});
  const auto a = kl_to_target(m, t, MonteCarloBudget{20000, 11});
  const auto b = kl_to_target(m, t, MonteCarloBudget{20000, 12});
  EXPECT_NE(a.value, b.value);
  EXPECT_LT(std::abs(a.value - b.value), 6 * std::hypot(a.std_error, b.std_error));
  const auto again = kl_to_target(m, t, MonteCarloBudget{20000, 11});
  EXPECT_EQ(a.value, again.value);
  EXPECT_GE(a.value, -3 * a.std_error);
}

TEST(KlToTarget, UnnormalizedTargetFlagged) {
  const auto t = normal_target(0.0, 1.0).shifted_unnormalized(2.5);
  const GaussianMixture m(g1(0.0, 1.0));
  const auto q = kl_to_target(m, t, QuadratureSpec{});
  EXPECT_FALSE(q.normalized);
  EXPECT_NEAR(q.value, -2.5, 1e-10);
}

TEST(KlToTarget, QuadratureMatchesOracleAndRejectsHighDimension) {
  std::mt19937_64 rng(4);
  const auto m = random_mixture(3, rng);
  const auto t = normal_target(0.2, 1.3);
  const oracle::Mix target{{0.2L}, {1.3L}, {1.0L}};
  EXPECT_NEAR(kl_to_target(m, t, QuadratureSpec{}).value,
              static_cast<double>(oracle::kl_mix(to_oracle(m), target)), 1e-8);

  PosteriorTarget t3;
  t3.d = 3;
  t3.log_unnorm = [](const Vector& th) { return -0.5 * th.squaredNorm(); };
  const GaussianMixture m3(IsotropicGaussian(Vector::Zero(3), 1.0));
  EXPECT_THROW(kl_to_target(m3, t3, QuadratureSpec{}), std::invalid_argument);
  EXPECT_NO_THROW(kl_to_target(m3, t3, MonteCarloBudget{100, 0}));
  EXPECT_THROW(kl_to_target(m3, normal_target(0, 1), MonteCarloBudget{10, 0}), DimensionMismatch);
}

TEST(KlToTarget, TwoDimensionalQuadratureMatchesClosedForm) {
  const IsotropicGaussian a((Vector(2) << 0.3, -0.2).finished(), 0.8);
  const IsotropicGaussian b((Vector(2) << -0.1, 0.4).finished(), 1.1);
  PosteriorTarget t;
  t.d = 2;
  t.log_unnorm = [b](const Vector& th) { return log_density(b, th); };
  t.log_normalizer = 0.0;
  EXPECT_NEAR(kl_to_target(GaussianMixture(a), t, QuadratureSpec{}).value,
              kl_gaussian_gaussian(a, b), 1e-6);
}

TEST(Bregman, SelfIsZero) {
  std::mt19937_64 rng(1);
  const auto m = random_mixture(3, rng);
  const auto t = normal_target(0.0, 1.0);
  const auto b = bregman(m, m, t, QuadratureSpec{});
  EXPECT_NEAR(b.three_term.value, 0.0, 1e-12);
  EXPECT_NEAR(b.direct.value, 0.0, 1e-12);
}

TEST(Bregman, SingleGaussiansMatchClosedForm) {
  const auto t = normal_target(0.5, 0.9);
  const auto a = g1(-0.4, 0.8), b = g1(0.7, 1.2);
  const auto br = bregman(GaussianMixture(a), GaussianMixture(b), t, QuadratureSpec{});
  EXPECT_NEAR(br.three_term.value, kl_gaussian_gaussian(a, b), 1e-5);
  EXPECT_NEAR(br.direct.value, kl_gaussian_gaussian(a, b), 1e-5);
}

TEST(Bregman, ThreeTermFormEqualsDirectKlOnRandomMixtures) {
  std::mt19937_64 rng(2024);
  const auto t = normal_target(0.1, 0.7);
  for (int i = 0; i < 50; ++i) {
    const auto psi2 = random_mixture(3, rng);
    const auto psi1 = random_mixture(2, rng);
    const auto br = bregman(psi2, psi1, t, QuadratureSpec{});
    EXPECT_NEAR(br.three_term.value, br.direct.value, 1e-5) << i;
    EXPECT_NEAR(br.direct.value, static_cast<double>(oracle::kl_mix(to_oracle(psi2), to_oracle(psi1))),
                1e-6)
        << i;
  }
}

TEST(Bregman, MonteCarloFormsAgreeWithinNoise) {
  const auto t = normal_target(0.0, 1.0);
  const GaussianMixture psi2({g1(-0.5, 0.8), g1(0.6, 1.0)}, {0.5, 0.5});
  const GaussianMixture psi1(g1(0.2, 1.1));
  const auto br = bregman(psi2, psi1, t, MonteCarloBudget{40000, 3});
  const double exact = bregman(psi2, psi1, t, QuadratureSpec{}).direct.value;
  EXPECT_LT(std::abs(br.three_term.value - exact), 4 * br.three_term.std_error);
  EXPECT_LT(std::abs(br.direct.value - exact), 4 * br.direct.std_error);
  EXPECT_GE(br.direct.value, -3 * br.direct.std_error);
}

TEST(Chi2MixtureBound, SelfIsZeroAndWorkedExample) {
  const auto phi = g1(0.0, 1.0);
  EXPECT_EQ(chi2_mixture_bound(phi, GaussianMixture(phi)), 0.0);
  const GaussianMixture m({g1(0.5, 1.0), g1(-0.5, 1.0)}, {0.5, 0.5});
  EXPECT_NEAR(chi2_mixture_bound(phi, m), 2 * (std::exp(0.25) - 1), 1e-14);
  EXPECT_NEAR(chi2_mixture_bound(phi, m), 0.568051, 1e-6);
  // Each pairwise chi-square by quadrature.
  const auto lc = oracle::log_chi2_plus_one(0.5L, 1.0L, 0.0L, 1.0L);
  EXPECT_NEAR(static_cast<double>(std::expm1(lc)), std::exp(0.25) - 1, 1e-10);
}

TEST(Chi2MixtureBound, PropagatesValidityRegionError) {
  const auto phi = g1(0.0, 1.0);
  const GaussianMixture m({g1(0.0, 1.0), g1(0.0, 3.0)}, {0.5, 0.5});
  EXPECT_THROW(chi2_mixture_bound(phi, m), ValidityRegionError);
}

TEST(Chi2MixtureBound, DominatesQuadratureOnRandomInstances) {
  const auto c = FamilyConstraints::make(1.0, 0.5, 1.5, 1);
  std::mt19937_64 rng(99);
  for (int i = 0; i < 50; ++i) {
    const auto m = detail::random_family_mixture(c, 4, rng);
    const auto phi = detail::random_family_member(c, rng);
    const auto om = to_oracle(m);
    const oracle::ld pm = phi.mean()[0], ps = phi.sigma();
    const oracle::ld lo = std::min(om.lo(), pm - 12 * ps) - 20, hi = std::max(om.hi(), pm + 12 * ps) + 20;
    const auto chi_m_phi =
        oracle::trapz([&](oracle::ld x) { const auto a = om.pdf(x); return a * a / oracle::normal_pdf(x, pm, ps); },
                      lo, hi, 40001) - 1;
    const auto chi_phi_m =
        oracle::trapz([&](oracle::ld x) { const auto a = oracle::normal_pdf(x, pm, ps); return a * a / om.pdf(x); },
                      lo, hi, 40001) - 1;
    EXPECT_GE(chi2_mixture_bound(phi, m) + 1e-9, static_cast<double>(chi_m_phi + chi_phi_m)) << i;
  }
}

TEST(CurvatureBounds, PaperFormula) {
  EXPECT_NEAR(curvature_bound_paper(FamilyConstraints::make(1.0, 1.0, 1.5, 2)), 4 * std::exp(4.0), 1e-10);
  EXPECT_NEAR(curvature_bound_paper(FamilyConstraints::make(1.0, 1.0, 1.5, 2)), 218.3926, 1e-4);
  EXPECT_NEAR(curvature_bound_paper(FamilyConstraints::make(0.0, 0.3, 1.5, 3)), 2 * std::pow(0.5, -1.5), 1e-12);
  double prev = 0.0;
  for (double c0 : {1.9, 1.99, 1.999}) {
    const double b = curvature_bound_paper(FamilyConstraints::make(1.0, 1.0, c0, 1));
    EXPECT_GT(b, prev);
    prev = b;
  }
  EXPECT_GT(prev, 1e10);
}

TEST(CurvatureBounds, RederivedFormula) {
  const double expect = 2 * 1.5 / std::sqrt(0.5) * std::exp(1.0 / 0.125);
  const auto c = FamilyConstraints::make(0.5, 0.5, 1.5, 1);
  EXPECT_NEAR(curvature_bound_rederived(c) / expect, 1.0, 1e-14);
  EXPECT_NEAR(log_curvature_bound_rederived(c), std::log(expect), 1e-13);
  for (int d : {1, 2, 5})
    EXPECT_NEAR(curvature_bound_rederived(FamilyConstraints::make(0.0, 1.0, 1.0 + 1e-9, d)), 2.0, 1e-6);
  // Monotone in M, d and 1 / sigma_n.
  const auto base = curvature_bound_rederived(c);
  EXPECT_GT(curvature_bound_rederived(FamilyConstraints::make(0.6, 0.5, 1.5, 1)), base);
  EXPECT_GT(curvature_bound_rederived(FamilyConstraints::make(0.5, 0.5, 1.5, 2)), base);
  EXPECT_GT(curvature_bound_rederived(FamilyConstraints::make(0.5, 0.4, 1.5, 1)), base);
  // The log form stays finite where the bound itself overflows.
  const auto tiny = FamilyConstraints::make(1.0, 1e-3, 1.5, 1);
  EXPECT_TRUE(std::isinf(curvature_bound_rederived(tiny)));
  EXPECT_TRUE(std::isfinite(log_curvature_bound_rederived(tiny)));
}

TEST(CurvatureSample, SelfPerturbationContributesZero) {
  const auto phi = g1(0.2, 0.5);
  for (double a : {0.1, 0.5, 1.0}) EXPECT_NEAR(kl_path(GaussianMixture(phi), phi, a), 0.0, 1e-15);
}

TEST(CurvatureSample, ScaledKlPlateausAsAlphaShrinks) {
  // phi narrower than every component keeps phi / psi1 bounded.
  const GaussianMixture psi1({g1(-0.3, 1.0), g1(0.4, 0.95)}, {0.6, 0.4});
  const auto phi = g1(0.5, 0.9);
  std::vector<double> scaled;
  for (double a : {0.1, 0.01, 0.001}) scaled.push_back(2 * kl_path(psi1, phi, a) / (a * a));
  EXPECT_NEAR(scaled[1] / scaled[2], 1.0, 1e-2);
  EXPECT_NEAR(scaled[0] / scaled[2], 1.0, 0.1);
  // The plateau is the chi-square of phi against psi1.
  const auto op = to_oracle(psi1);
  const auto chi = oracle::trapz(
      [&](oracle::ld x) { const auto a = oracle::normal_pdf(x, 0.5L, 0.9L); return a * a / op.pdf(x); }, -30, 30,
      40001) - 1;
  EXPECT_NEAR(scaled[2], static_cast<double>(chi), 2e-3 * scaled[2]);
}

TEST(CurvatureSample, FirstDerivativeVanishesAtZero) {
  const GaussianMixture psi1({g1(-0.3, 1.0), g1(0.3, 1.0)}, {0.5, 0.5});
  const auto phi = g1(0.2, 0.9);
  const double h = 1e-4;
  EXPECT_NEAR((kl_path(psi1, phi, h) - kl_path(psi1, phi, -h)) / (2 * h), 0.0, 1e-6);
}

TEST(CurvatureSample, KlPathMatchesDirectMixtureKl) {
  std::mt19937_64 rng(5);
  const auto psi1 = random_mixture(3, rng);
  const auto phi = g1(0.3, 0.9);
  const double a = 0.35;
  std::vector<IsotropicGaussian> comps(psi1.components());
  std::vector<double> w;
  for (double x : psi1.weights()) w.push_back((1 - a) * x);
  comps.push_back(phi);
  w.push_back(a);
  const GaussianMixture psi2(std::move(comps), std::move(w));
  EXPECT_NEAR(kl_path(psi1, phi, a),
              static_cast<double>(oracle::kl_mix(to_oracle(psi2), to_oracle(psi1))), 1e-8);
}

TEST(CurvatureSample, DominanceChainAndDeterminism) {
  const auto c = FamilyConstraints::make(0.5, 0.1, 1.5, 1);
  const auto rep = curvature_sample(c, 300, 8);
  EXPECT_EQ(rep.trials, 300u);
  EXPECT_EQ(rep.records.size(), 300u);
  EXPECT_EQ(rep.chain_violations, 0u);
  ASSERT_TRUE(rep.sup_witness.has_value());
  EXPECT_LE(rep.empirical_sup, rep.rederived_bound);
  EXPECT_GE(rep.empirical_sup, 0.0);
  for (const auto& tr : rep.records) {
    EXPECT_LE(tr.scaled_kl, tr.chi2_bound * (1 + 1e-9) + 1e-12);
    EXPECT_LE(tr.chi2_bound, rep.rederived_bound);
    EXPECT_GT(tr.alpha, 0.0);
    EXPECT_LE(tr.alpha, 1.0);
    EXPECT_GE(tr.components, 1u);
    EXPECT_LE(tr.components, kMaxCurvatureComponents);
  }
  EXPECT_TRUE(mixture_in_family(rep.sup_witness->psi1, c));
  EXPECT_TRUE(in_family(rep.sup_witness->phi, c));
  const double witness = 2 * kl_path(rep.sup_witness->psi1, rep.sup_witness->phi, rep.sup_witness->alpha) /
                         (rep.sup_witness->alpha * rep.sup_witness->alpha);
  EXPECT_DOUBLE_EQ(witness, rep.empirical_sup);
  const auto again = curvature_sample(c, 300, 8);
  EXPECT_EQ(again.empirical_sup, rep.empirical_sup);
  EXPECT_THROW(curvature_sample(c, 0, 8), std::invalid_argument);
  EXPECT_THROW(curvature_sample(FamilyConstraints::make(0.5, 0.1, 1.5, 3), 1, 8), std::invalid_argument);
}
