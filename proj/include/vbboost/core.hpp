#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace vbboost {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

class DimensionMismatch : public std::invalid_argument {
 public:
  DimensionMismatch(const std::string& where, long expected, long got)
      : std::invalid_argument(where + ": dimension mismatch (expected " +
                              std::to_string(expected) + ", got " +
                              std::to_string(got) + ")") {}
};

// Raised when a closed form is evaluated outside the parameter region in
// which the underlying integral converges.
class ValidityRegionError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A parameter violates the restricted-family constraints.
class ConstraintError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require_dim(const char* where, long expected, long got) {
  if (expected != got) throw DimensionMismatch(where, expected, got);
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

// log(exp(a) + exp(b)) without overflow; -inf operands are neutral.
inline double log_add_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(-std::abs(a - b)));
}

/// SplitMix64 output function. Used to derive independent stream seeds from
/// structured keys such as (base_seed, n, replicate).
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b));
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b,
                              std::uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

/// Runs f(i) for i in [0, count) on up to `jobs` threads. Work is split into
/// contiguous blocks, so results written by index are schedule-independent.
/// The exception from the lowest failing index is rethrown.
template <class F>
void parallel_for(std::size_t count, int jobs, F&& f) {
  const std::size_t workers =
      std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = count * w / workers;
    const std::size_t hi = count * (w + 1) / workers;
    pool.emplace_back([&, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) {
        try {
          f(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace vbboost
