#pragma once

// Reproducible random streams plus the two samplers the simulator needs.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace evogeo {

// A Mersenne-Twister engine keyed by (seed, stream). Distinct streams give
// independent-looking sequences; identical keys replay bit-for-bit.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x9e3779b9u};
    eng_.seed(seq);
  }

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return eng_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  // Uniform on (0, 1).
  double uniform_pos() {
    double u;
    do u = uniform();
    while (u == 0.0);
    return u;
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

 private:
  std::uint64_t seed_, stream_;
  std::mt19937_64 eng_;
};

// Poisson(mu): sequential inversion below 10, Hormann's PTRS above.
inline std::int64_t poisson(double mu, RngStream& rng) {
  if (!(mu > 0.0)) return 0;
  if (mu < 10.0) {
    const double u = rng.uniform();
    double p = std::exp(-mu), cdf = p;
    std::int64_t k = 0;
    while (u >= cdf) {
      ++k;
      p *= mu / static_cast<double>(k);
      const double next = cdf + p;
      if (next == cdf) break;  // tail exhausted in double precision
      cdf = next;
    }
    return k;
  }
  const double smu = std::sqrt(mu);
  const double b = 0.931 + 2.53 * smu;
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  const double lmu = std::log(mu);
  for (;;) {
    const double U = rng.uniform() - 0.5;
    const double V = rng.uniform_pos();
    const double us = 0.5 - std::abs(U);
    const double kd = std::floor((2.0 * a / us + b) * U + mu + 0.43);
    if (us >= 0.07 && V <= vr) return static_cast<std::int64_t>(kd);
    if (kd < 0.0 || (us < 0.013 && V > us)) continue;
    if (std::log(V) + std::log(inv_alpha) - std::log(a / (us * us) + b) <= -mu + kd * lmu - std::lgamma(kd + 1.0))
      return static_cast<std::int64_t>(kd);
  }
}

inline std::int64_t binomial(std::int64_t n, double p, RngStream& rng) {
  if (n <= 0 || !(p > 0.0)) return 0;
  if (p >= 1.0) return n;
  std::binomial_distribution<std::int64_t> d(n, p);
  return d(rng);
}

// Multinomial(n, p) by chained conditional binomials; p need not be normalized.
inline std::vector<std::int64_t> multinomial(std::int64_t n, std::span<const double> p, RngStream& rng) {
  std::vector<std::int64_t> out(p.size(), 0);
  double rest = 0.0;
  for (double x : p) rest += x > 0.0 ? x : 0.0;
  std::int64_t left = n;
  for (std::size_t j = 0; j < p.size() && left > 0; ++j) {
    const double pj = p[j] > 0.0 ? p[j] : 0.0;
    if (j + 1 == p.size() || pj >= rest) {
      out[j] = pj > 0.0 ? left : 0;
      left -= out[j];
      break;
    }
    out[j] = binomial(left, pj / rest, rng);
    left -= out[j];
    rest -= pj;
  }
  return out;
}

}  // namespace evogeo
