#pragma once

// Test-side reference computations. Deliberately independent of the library:
// plain long-double trapezoid sums and direct density formulas.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

using ld = long double;

inline ld normal_pdf(ld x, ld mu, ld sigma) {
  const ld z = (x - mu) / sigma;
  return std::exp(-0.5L * z * z) / (sigma * std::sqrt(2.0L * 3.14159265358979323846264338327950288L));
}

inline ld log_normal_pdf(ld x, ld mu, ld sigma) {
  const ld z = (x - mu) / sigma;
  return -0.5L * z * z - std::log(sigma) - 0.5L * std::log(2.0L * 3.14159265358979323846264338327950288L);
}

inline ld trapz(const std::function<ld(ld)>& f, ld lo, ld hi, int nodes) {
  const ld h = (hi - lo) / (nodes - 1);
  ld acc = 0.5L * (f(lo) + f(hi));
  for (int i = 1; i < nodes - 1; ++i) acc += f(lo + h * i);
  return acc * h;
}

inline ld trapz2(const std::function<ld(ld, ld)>& f, ld lo, ld hi, int nodes) {
  const ld h = (hi - lo) / (nodes - 1);
  ld acc = 0.0L;
  for (int i = 0; i < nodes; ++i) {
    const ld wi = (i == 0 || i == nodes - 1) ? 0.5L : 1.0L;
    for (int j = 0; j < nodes; ++j) {
      const ld wj = (j == 0 || j == nodes - 1) ? 0.5L : 1.0L;
      acc += wi * wj * f(lo + h * i, lo + h * j);
    }
  }
  return acc * h * h;
}

// 1-d mixture of normals.
struct Mix {
  std::vector<ld> mu, sigma, w;
  [[nodiscard]] ld pdf(ld x) const {
    ld acc = 0.0L;
    for (std::size_t j = 0; j < w.size(); ++j) acc += w[j] * normal_pdf(x, mu[j], sigma[j]);
    return acc;
  }
  [[nodiscard]] ld lo() const {
    ld v = mu[0] - 12 * sigma[0];
    for (std::size_t j = 0; j < w.size(); ++j) v = std::min(v, mu[j] - 12 * sigma[j]);
    return v;
  }
  [[nodiscard]] ld hi() const {
    ld v = mu[0] + 12 * sigma[0];
    for (std::size_t j = 0; j < w.size(); ++j) v = std::max(v, mu[j] + 12 * sigma[j]);
    return v;
  }
};

/// KL(a || b) for 1-d mixtures by a fine trapezoid in long double.
inline ld kl_mix(const Mix& a, const Mix& b, int nodes = 20001) {
  const ld lo = std::min(a.lo(), b.lo());
  const ld hi = std::max(a.hi(), b.hi());
  return trapz(
      [&](ld x) {
        const ld pa = a.pdf(x);
        if (pa <= 0) return 0.0L;
        return pa * (std::log(pa) - std::log(b.pdf(x)));
      },
      lo, hi, nodes);
}

/// log int q^2 / p over R for 1-d normals, by quadrature in the log domain:
/// the integrand exponent is a quadratic, integrated around its peak.
inline ld log_chi2_plus_one(ld mu2, ld s2, ld mu1, ld s1) {
  auto g = [&](ld x) { return 2 * log_normal_pdf(x, mu2, s2) - log_normal_pdf(x, mu1, s1); };
  // Locate the maximum of g (a concave quadratic) by its vertex.
  const ld a = 1.0L / (s2 * s2) - 0.5L / (s1 * s1);  // curvature coefficient
  const ld b = mu2 / (s2 * s2) - 0.5L * mu1 / (s1 * s1);
  const ld x0 = b / a;
  const ld width = 1.0L / std::sqrt(a);
  const ld peak = g(x0);
  ld lo = x0 - 40 * width, hi = x0 + 40 * width;
  const ld v = trapz([&](ld x) { return std::exp(g(x) - peak); }, lo, hi, 8001);
  return peak + std::log(v);
}

}  // namespace oracle
