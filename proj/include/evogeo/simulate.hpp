#pragma once

// Monte-Carlo version of the daily cycle with integer bookkeeping:
// growth to ceil(N F_j H(j)) cells, Poisson mutations conditioned on K_N(H),
// then multinomial selection of N cells.

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <vector>

#include "evogeo/core.hpp"
#include "evogeo/parallel.hpp"
#include "evogeo/rng.hpp"
#include "evogeo/trajectory.hpp"

namespace evogeo {

inline constexpr int kMutationRejectionCap = 10000;

struct ChainState {
  std::vector<std::int64_t> counts;
  std::int64_t day = 1;
};

// Integer cell counts of an N-rational histogram; throws otherwise.
inline std::vector<std::int64_t> to_counts(const Histogram& H, std::uint64_t N) {
  std::vector<std::int64_t> c(H.size());
  std::int64_t s = 0;
  const double n = static_cast<double>(N);
  for (std::size_t j = 0; j < H.size(); ++j) {
    const double v = H[j] * n;
    const double r = std::round(v);
    if (std::abs(v - r) > 1e-6 * std::max(1.0, v)) {
      std::ostringstream os;
      os << "histogram is not N-rational: coordinate " << j + 1 << " times N = " << v;
      throw DomainError(os.str());
    }
    c[j] = static_cast<std::int64_t>(r);
    s += c[j];
  }
  if (s != static_cast<std::int64_t>(N)) throw DomainError("histogram counts do not sum to N");
  return c;
}

inline Histogram from_counts(const std::vector<std::int64_t>& c) {
  std::vector<double> v(c.begin(), c.end());
  return Histogram::clamp_normalize(v);
}

// Integer mutation counts R_jk (j into k).
struct MutationDraw {
  SquareMatrix R;
  int attempts = 1;
};

// Colony sizes after growth: ceil(F_j * count_j), i.e. ceil(N F_j H(j)).
inline std::vector<std::int64_t> grown_counts(const std::vector<std::int64_t>& counts, const ModelParams& P) {
  std::vector<std::int64_t> out(P.g);
  for (std::size_t j = 0; j < P.g; ++j)
    out[j] = static_cast<std::int64_t>(std::ceil(P.F[j] * static_cast<double>(counts[j])));
  return out;
}

// Poisson mutation counts with means m Q_jk N F_j H(j), redrawn until R/N lies
// in K_N(H). Throws ConvergenceError after kMutationRejectionCap attempts.
inline MutationDraw sample_mutations(const std::vector<std::int64_t>& counts, const ModelParams& P, RngStream& rng) {
  MutationDraw d{SquareMatrix(P.g), 0};
  for (int attempt = 1; attempt <= kMutationRejectionCap; ++attempt) {
    d.attempts = attempt;
    bool ok = true;
    for (std::size_t j = 0; j < P.g; ++j) {
      const double fj = P.F[j] * static_cast<double>(counts[j]);
      double out = 0.0;
      for (std::size_t k = 0; k < P.g; ++k) {
        const double mean = P.mean_rate(j, k) * fj;
        const auto z = (counts[j] > 0 && mean > 0.0) ? poisson(mean, rng) : 0;
        d.R(j, k) = static_cast<double>(z);
        out += static_cast<double>(z);
      }
      if (counts[j] > 0 && !(out < fj)) ok = false;
    }
    if (ok) return d;
  }
  throw ConvergenceError("sample_mutations: rejection cap exceeded; mutation rates are outside the small-m regime");
}

inline MutationDraw sample_mutations(const Histogram& H, const ModelParams& P, RngStream& rng) {
  return sample_mutations(to_counts(H, P.N), P, rng);
}

// Integer colony counts after mutation: ceil(N F_j H(j)) - out_j + in_j.
inline std::vector<std::int64_t> post_mutation_cell_counts(const std::vector<std::int64_t>& counts,
                                                           const SquareMatrix& R, const ModelParams& P) {
  auto c = grown_counts(counts, P);
  for (std::size_t j = 0; j < P.g; ++j)
    for (std::size_t k = 0; k < P.g; ++k) {
      const auto r = static_cast<std::int64_t>(R(j, k));
      c[j] -= r;
      c[k] += r;
    }
  for (std::size_t j = 0; j < P.g; ++j)
    if (c[j] < 0) throw DomainError("post_mutation_counts: negative colony count");
  return c;
}

// J = post-mutation colony counts over the total cell count. The exact total
// differs from ceil(N <F,H>) by at most g - 1 rounding cells.
inline Histogram post_mutation_counts(const Histogram& H, const SquareMatrix& R, const ModelParams& P) {
  return from_counts(post_mutation_cell_counts(to_counts(H, P.N), R, P));
}

inline std::vector<std::int64_t> sample_selection_counts(const Histogram& J, std::uint64_t N, RngStream& rng) {
  return multinomial(static_cast<std::int64_t>(N), J.values(), rng);
}

inline Histogram sample_selection(const Histogram& J, std::uint64_t N, RngStream& rng) {
  return from_counts(sample_selection_counts(J, N, rng));
}

// One day on integer counts.
inline void advance_day(ChainState& s, const ModelParams& P, RngStream& rng, int* attempts = nullptr) {
  const auto d = sample_mutations(s.counts, P, rng);
  if (attempts) *attempts = d.attempts;
  const auto cells = post_mutation_cell_counts(s.counts, d.R, P);
  std::vector<double> p(cells.begin(), cells.end());
  s.counts = multinomial(static_cast<std::int64_t>(P.N), p, rng);
  ++s.day;
}

// H1 followed by T simulated days (T + 1 points, no costs attached).
inline Trajectory run_chain(const Histogram& H1, int T, const ModelParams& P, RngStream& rng) {
  if (T < 0) throw DomainError("run_chain: T must be >= 0");
  ChainState s{to_counts(H1, P.N), 1};
  Trajectory t;
  t.points.push_back(H1);
  for (int d = 0; d < T; ++d) {
    advance_day(s, P, rng);
    t.points.push_back(from_counts(s.counts));
  }
  return t;
}

struct TransitionEstimate {
  std::uint64_t hits = 0;
  std::uint64_t trials = 0;
  std::uint64_t rejections = 0;  // extra mutation draws beyond the first
  std::optional<double> logprob;  // (1/N) log(hits / trials); empty on no hits
};

inline constexpr std::uint64_t kTrialsPerStream = 1u << 16;

// Fraction of one-day transitions from H landing in the sup-norm ball
// (center, radius). Trials are blocked into fixed-size streams so the result
// does not depend on the thread count.
inline TransitionEstimate estimate_transition_logprob(const Histogram& H, const Histogram& center, double radius,
                                                      const ModelParams& P, std::uint64_t trials, std::uint64_t seed,
                                                      unsigned threads = 1) {
  if (trials < 1) throw DomainError("estimate_transition_logprob: trials must be >= 1");
  const auto counts = to_counts(H, P.N);
  const std::size_t blocks = static_cast<std::size_t>((trials + kTrialsPerStream - 1) / kTrialsPerStream);
  std::vector<std::uint64_t> hits(blocks, 0), rej(blocks, 0);
  const double n = static_cast<double>(P.N);
  const double tol = 1e-12;
  parallel_for(blocks, threads, 1, [&](std::size_t b0, std::size_t b1, unsigned) {
    for (std::size_t b = b0; b < b1; ++b) {
      RngStream rng(seed, b);
      const std::uint64_t lo = b * kTrialsPerStream;
      const std::uint64_t hi = std::min<std::uint64_t>(trials, lo + kTrialsPerStream);
      std::vector<double> p(P.g);
      for (std::uint64_t t = lo; t < hi; ++t) {
        const auto d = sample_mutations(counts, P, rng);
        rej[b] += static_cast<std::uint64_t>(d.attempts - 1);
        const auto cells = post_mutation_cell_counts(counts, d.R, P);
        for (std::size_t j = 0; j < P.g; ++j) p[j] = static_cast<double>(cells[j]);
        const auto v = multinomial(static_cast<std::int64_t>(P.N), p, rng);
        bool in = true;
        for (std::size_t j = 0; j < P.g && in; ++j)
          in = std::abs(static_cast<double>(v[j]) / n - center[j]) <= radius + tol;
        if (in) ++hits[b];
      }
    }
  });
  TransitionEstimate e;
  e.trials = trials;
  for (std::size_t b = 0; b < blocks; ++b) {
    e.hits += hits[b];
    e.rejections += rej[b];
  }
  if (e.hits > 0) e.logprob = std::log(static_cast<double>(e.hits) / static_cast<double>(trials)) / n;
  return e;
}

}  // namespace evogeo
