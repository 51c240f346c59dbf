#pragma once

// Checks that the rate functions govern the simulator: elementary Stirling /
// Poisson inequalities, exact multinomial asymptotics and Monte-Carlo one-step
// kernel estimates.

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "evogeo/core.hpp"
#include "evogeo/cost.hpp"
#include "evogeo/simulate.hpp"

namespace evogeo {

struct BoundsReport {
  std::size_t checks = 0;
  std::vector<std::string> violations;
  // the Stirling bound 2 log N degenerates at N = 1 (lhs 1, rhs 0); reported, not checked
  double stirling_n1_lhs = 1.0;
  double stirling_n1_rhs = 0.0;
  bool pass() const noexcept { return violations.empty(); }
};

struct LdCheckReport {
  double theory_value = 0.0;
  double empirical_value = 0.0;  // at the largest N
  std::vector<std::uint64_t> n_values;
  std::vector<double> empirical;  // per N; NaN where undefined
  std::vector<double> gaps;
  std::vector<double> envelopes;  // bound per N used by the check
  std::vector<std::uint64_t> hits;
  double regression_intercept = 0.0;
  double regression_slope = 0.0;  // gap ~ intercept + slope * log N / N
  double rejection_rate = 0.0;
  bool pass = false;
  std::string note;
};

inline double log_factorial(std::uint64_t n) { return std::lgamma(static_cast<double>(n) + 1.0); }

// Cramer transform of Poisson(u): u + v log(v/u) - v.
inline double poisson_rate(double u, double v) { return u - v + (v > 0.0 ? v * std::log(v / u) : 0.0); }

inline double poisson_log_pmf(std::uint64_t k, double mean) {
  return -mean + static_cast<double>(k) * std::log(mean) - log_factorial(k);
}

// log P(X >= k) and log P(X <= k) for X ~ Poisson(mean), summed from the mode
// outward in log space.
inline double poisson_log_upper_tail(std::uint64_t k, double mean) {
  const double l0 = poisson_log_pmf(k, mean);
  double s = 1.0, term = 1.0;
  for (std::uint64_t j = k + 1; j < k + 100000; ++j) {
    term *= mean / static_cast<double>(j);
    s += term;
    if (term < 1e-18 * s) break;
  }
  return l0 + std::log(s);
}
inline double poisson_log_lower_tail(std::uint64_t k, double mean) {
  const double l0 = poisson_log_pmf(k, mean);
  double s = 1.0, term = 1.0;
  for (std::uint64_t j = k; j > 0; --j) {
    term *= static_cast<double>(j) / mean;
    s += term;
    if (term < 1e-18 * s) break;
  }
  return l0 + std::log(s);
}

inline BoundsReport elementary_bounds_check(std::uint64_t n_max) {
  if (n_max < 1) throw DomainError("elementary_bounds_check: n_max must be >= 1");
  BoundsReport r;
  for (std::uint64_t N = 2; N <= n_max; ++N) {
    const double n = static_cast<double>(N);
    const double lhs = std::abs(log_factorial(N) - n * (std::log(n) - 1.0));
    ++r.checks;
    if (lhs > 2.0 * std::log(n)) {
      std::ostringstream os;
      os << "stirling N=" << N << ": " << lhs << " > " << 2.0 * std::log(n);
      r.violations.push_back(os.str());
    }
  }
  const double us[] = {0.25, 1.0, 2.0, 5.0};
  const std::uint64_t Ns[] = {2, 5, 10, 50, 100, 200};
  for (double u : us)
    for (std::uint64_t N : Ns) {
      const double n = static_cast<double>(N);
      // upper and lower tails at grid points v > u > w with N v, N w integers
      for (double f : {1.5, 2.0, 3.0}) {
        const auto k = static_cast<std::uint64_t>(std::ceil(n * u * f));
        const double v = static_cast<double>(k) / n;
        if (!(v > u)) continue;
        ++r.checks;
        const double lp = poisson_log_upper_tail(k, n * u);
        if (lp > -n * poisson_rate(u, v) + 1e-9) {
          std::ostringstream os;
          os << "poisson upper tail u=" << u << " v=" << v << " N=" << N;
          r.violations.push_back(os.str());
        }
      }
      for (double f : {0.0, 1.0 / 3.0, 0.5}) {
        const auto k = static_cast<std::uint64_t>(std::floor(n * u * f));
        const double w = static_cast<double>(k) / n;
        if (!(w < u) || !(w > 0.0)) continue;
        ++r.checks;
        const double lp = poisson_log_lower_tail(k, n * u);
        if (lp > -n * poisson_rate(u, w) + 1e-9) {
          std::ostringstream os;
          os << "poisson lower tail u=" << u << " w=" << w << " N=" << N;
          r.violations.push_back(os.str());
        }
      }
      // point masses, v = k/N on a coarse grid including 0 and u. The
      // remainder is about log(2 pi N v) / (2N), inside 2 log N / N only once
      // 2 pi v <= N^3, so the tiny N = 2 row is skipped for these.
      if (N < 5) continue;
      for (std::uint64_t k : {std::uint64_t{0}, std::uint64_t{1}, N / 2, N, 2 * N, 3 * N}) {
        const double v = static_cast<double>(k) / n;
        ++r.checks;
        const double lhs = poisson_log_pmf(k, n * u) / n;
        const double gap = std::abs(lhs + poisson_rate(u, v));
        if (gap > 2.0 * std::log(n) / n + 1e-12) {
          std::ostringstream os;
          os << "poisson point mass u=" << u << " v=" << v << " N=" << N << ": gap " << gap;
          r.violations.push_back(os.str());
        }
      }
    }
  return r;
}

namespace detail {

// Least squares fit y = a + b x.
inline std::pair<double, double> fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double den = n * sxx - sx * sx;
  if (den == 0.0) return {sy / n, 0.0};
  const double b = (n * sxy - sx * sy) / den;
  return {(sy - b * sx) / n, b};
}

}  // namespace detail

// log mu_{N,J}(N G) from log-factorials versus -N KL(G, J). Passes when every
// gap is within 2(g+1) log N / N and the gaps decrease in N.
inline LdCheckReport multinomial_ld_check(const Histogram& J, const Histogram& G, const std::vector<std::uint64_t>& n_values) {
  if (J.size() != G.size()) throw DomainError("multinomial_ld_check: dimension mismatch");
  for (std::size_t j = 0; j < G.size(); ++j)
    if (G[j] > 0.0 && !(J[j] > 0.0)) throw DomainError("multinomial_ld_check: spt(G) must lie in spt(J)");
  LdCheckReport r;
  r.theory_value = kl_divergence(G, J);
  r.n_values = n_values;
  const double g = static_cast<double>(G.size());
  bool ok = true;
  std::vector<double> xs;
  for (std::uint64_t N : n_values) {
    const auto V = to_counts(G, N);
    double lm = log_factorial(N);
    for (std::size_t j = 0; j < V.size(); ++j) {
      lm -= log_factorial(static_cast<std::uint64_t>(V[j]));
      if (V[j] > 0) lm += static_cast<double>(V[j]) * std::log(J[j]);
    }
    const double n = static_cast<double>(N);
    const double emp = -lm / n;
    const double gap = std::abs(emp - r.theory_value);
    const double env = 2.0 * (g + 1.0) * std::log(n) / n;
    r.empirical.push_back(emp);
    r.gaps.push_back(gap);
    r.envelopes.push_back(env);
    xs.push_back(std::log(n) / n);
    if (gap > env) ok = false;
  }
  for (std::size_t i = 1; i < r.gaps.size(); ++i)
    if (!(r.gaps[i] < r.gaps[i - 1])) ok = false;
  auto [a, b] = detail::fit_line(xs, r.gaps);
  r.regression_intercept = a;
  r.regression_slope = b;
  r.empirical_value = r.empirical.empty() ? 0.0 : r.empirical.back();
  r.pass = ok && !n_values.empty();
  return r;
}

struct KernelCheckOptions {
  std::uint64_t trials = 1'000'000;
  std::uint64_t seed = 42;
  unsigned threads = 1;
  double radius_factor = 2.0 / 3.0;  // ball radius = radius_factor / N
  double max_constant = 10.0;        // envelope gap <= max_constant * log N / N
};

// Monte-Carlo (1/N) log P(H -> ball(G)) versus -C(H, G) over population sizes.
// Passes when every estimate exists, every gap sits inside the envelope, the
// gap at the largest N is below the gap at the smallest N, and the fitted
// log N / N coefficient is below max_constant.
inline LdCheckReport kernel_ld_check(const Histogram& H, const Histogram& G, ModelParams P,
                                     const std::vector<std::uint64_t>& n_values, const KernelCheckOptions& opt = {}) {
  LdCheckReport r;
  r.theory_value = -one_step_cost(H, G, P, CostMode::exact).total;
  r.n_values = n_values;
  bool ok = !n_values.empty();
  std::vector<double> xs, ys;
  std::uint64_t rejections = 0, draws = 0;
  for (std::size_t i = 0; i < n_values.size(); ++i) {
    P.N = n_values[i];
    const double n = static_cast<double>(P.N);
    const auto e = estimate_transition_logprob(H, G, opt.radius_factor / n, P, opt.trials, opt.seed + i, opt.threads);
    rejections += e.rejections;
    draws += e.trials;
    r.hits.push_back(e.hits);
    const double env = opt.max_constant * std::log(n) / n;
    r.envelopes.push_back(env);
    if (!e.logprob) {
      r.empirical.push_back(std::numeric_limits<double>::quiet_NaN());
      r.gaps.push_back(std::numeric_limits<double>::quiet_NaN());
      r.note = "insufficient hits";
      ok = false;
      continue;
    }
    r.empirical.push_back(*e.logprob);
    const double gap = std::abs(*e.logprob - r.theory_value);
    r.gaps.push_back(gap);
    xs.push_back(std::log(n) / n);
    ys.push_back(gap);
    if (gap > env) ok = false;
  }
  r.rejection_rate = draws ? static_cast<double>(rejections) / static_cast<double>(draws + rejections) : 0.0;
  if (ok && r.gaps.size() >= 2 && !(r.gaps.back() < r.gaps.front())) ok = false;
  if (xs.size() >= 2) {
    auto [a, b] = detail::fit_line(xs, ys);
    r.regression_intercept = a;
    r.regression_slope = b;
    if (!(std::abs(b) < opt.max_constant)) ok = false;
  }
  r.empirical_value = r.empirical.empty() ? 0.0 : r.empirical.back();
  r.pass = ok;
  return r;
}

// Fraction of sample_mutations draws rejected at least once.
inline double mutation_rejection_rate(const Histogram& H, const ModelParams& P, std::uint64_t draws, std::uint64_t seed) {
  RngStream rng(seed, 0);
  const auto counts = to_counts(H, P.N);
  std::uint64_t rejected = 0;
  for (std::uint64_t i = 0; i < draws; ++i)
    if (sample_mutations(counts, P, rng).attempts > 1) ++rejected;
  return static_cast<double>(rejected) / static_cast<double>(draws);
}

}  // namespace evogeo
