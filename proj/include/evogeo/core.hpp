#pragma once

// Histogram algebra, model parameters and the deterministic maps of one daily
// cycle: growth (Phi), post-mutation (Psi) and the mean step (zeta).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "evogeo/error.hpp"

namespace evogeo {

inline constexpr double kDefaultHistogramTol = 1e-9;
inline constexpr double kKSlack = 1e-15;
inline constexpr std::size_t kMaxGenotypes = 16;

// Dense row-major square matrix; g never exceeds a handful of genotypes.
class SquareMatrix {
 public:
  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t n, double fill = 0.0) : n_(n), a_(n * n, fill) {}
  SquareMatrix(std::size_t n, std::vector<double> row_major) : n_(n), a_(std::move(row_major)) {
    if (a_.size() != n * n) throw DomainError("SquareMatrix: expected n*n entries");
  }

  std::size_t size() const noexcept { return n_; }
  double& operator()(std::size_t j, std::size_t k) noexcept { return a_[j * n_ + k]; }
  double operator()(std::size_t j, std::size_t k) const noexcept { return a_[j * n_ + k]; }
  std::span<const double> data() const noexcept { return a_; }

  double row_sum(std::size_t j) const noexcept {
    double s = 0.0;
    for (std::size_t k = 0; k < n_; ++k) s += (*this)(j, k);
    return s;
  }
  double col_sum(std::size_t k) const noexcept {
    double s = 0.0;
    for (std::size_t j = 0; j < n_; ++j) s += (*this)(j, k);
    return s;
  }
  double sup_norm() const noexcept {
    double s = 0.0;
    for (double v : a_) s = std::max(s, std::abs(v));
    return s;
  }

  friend bool operator==(const SquareMatrix&, const SquareMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<double> a_;
};

// A genotype histogram: nonnegative frequencies summing to one.
class Histogram {
 public:
  Histogram() = default;

  // Validates v, clamps coordinates in [-tol, 0) to zero and renormalizes.
  static Histogram from(std::span<const double> v, double tol = kDefaultHistogramTol) {
    if (v.size() < 1) throw DomainError("histogram: empty vector");
    double sum = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (!std::isfinite(v[j])) throw DomainError("histogram: non-finite coordinate");
      if (v[j] < -tol) {
        std::ostringstream os;
        os << "histogram: coordinate " << j + 1 << " = " << v[j] << " is negative";
        throw DomainError(os.str());
      }
      sum += v[j];
    }
    if (std::abs(sum - 1.0) > tol) {
      std::ostringstream os;
      os.precision(17);
      os << "histogram: coordinates sum to " << sum << ", expected 1";
      throw DomainError(os.str());
    }
    return clamp_normalize(v);
  }
  static Histogram from(std::initializer_list<double> v, double tol = kDefaultHistogramTol) {
    return from(std::span<const double>(v.begin(), v.size()), tol);
  }

  // Clamps negatives to zero and divides by the sum. Used after numerical maps
  // whose output is a histogram up to rounding or O(m^2) drift.
  static Histogram clamp_normalize(std::span<const double> v) {
    Histogram h;
    h.f_.assign(v.begin(), v.end());
    if (!clamp_normalize_in_place(h.f_)) throw DomainError("histogram: no positive finite mass");
    return h;
  }

  // The single normalization routine shared by every map (so raw-buffer and
  // Histogram code paths agree bit-for-bit). False on non-finite input or
  // zero mass.
  static bool clamp_normalize_in_place(std::span<double> v) noexcept {
    double sum = 0.0;
    for (double& x : v) {
      if (std::isnan(x) || std::isinf(x)) return false;
      if (!(x > 0.0)) x = 0.0;
      sum += x;
    }
    if (!(sum > 0.0) || !std::isfinite(sum)) return false;
    for (double& x : v) x /= sum;
    return true;
  }

  // Adopts an already normalized buffer without further arithmetic.
  static Histogram adopt(std::vector<double> v) {
    Histogram h;
    h.f_ = std::move(v);
    return h;
  }

  // Pure genotype j (0-based).
  static Histogram vertex(std::size_t g, std::size_t j) {
    Histogram h;
    h.f_.assign(g, 0.0);
    h.f_.at(j) = 1.0;
    return h;
  }

  std::size_t size() const noexcept { return f_.size(); }
  double operator[](std::size_t j) const noexcept { return f_[j]; }
  std::span<const double> values() const noexcept { return f_; }
  const std::vector<double>& vec() const noexcept { return f_; }

  std::vector<std::size_t> support() const {
    std::vector<std::size_t> s;
    for (std::size_t j = 0; j < f_.size(); ++j)
      if (f_[j] > 0.0) s.push_back(j);
    return s;
  }

  // b(H): smallest positive coordinate.
  double essential_min() const noexcept {
    double b = std::numeric_limits<double>::infinity();
    for (double x : f_)
      if (x > 0.0) b = std::min(b, x);
    return b;
  }

  // Smallest coordinate, zero included; interior iff positive.
  double min_coord() const noexcept { return *std::min_element(f_.begin(), f_.end()); }
  bool interior() const noexcept { return min_coord() > 0.0; }

  friend bool operator==(const Histogram&, const Histogram&) = default;

 private:
  std::vector<double> f_;
};

inline Histogram validate_histogram(std::span<const double> v, double tol = kDefaultHistogramTol) {
  return Histogram::from(v, tol);
}

inline double sup_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) d = std::max(d, std::abs(a[j] - b[j]));
  return d;
}
inline double sup_distance(const Histogram& a, const Histogram& b) {
  return sup_distance(a.values(), b.values());
}

// Per-capita mutation counts r_{jk} (j mutating into k).
using MutationMatrix = SquareMatrix;

struct ModelParams {
  std::size_t g = 0;
  std::vector<double> F;  // growth factors, strictly ascending, > 1
  SquareMatrix Q;         // transfer matrix, zero diagonal
  double m = 0.0;         // mutation scale
  std::uint64_t N = 1;    // population size
  double delta = 0.0;     // interior threshold on b(H)

  // Throws DomainError naming the offending field.
  void validate() const {
    if (g < 2) throw DomainError("params.g: need at least 2 genotypes");
    if (g > kMaxGenotypes) throw DomainError("params.g: at most 16 genotypes are supported");
    if (F.size() != g) throw DomainError("params.F: expected g growth factors");
    for (std::size_t j = 0; j < g; ++j) {
      if (!(F[j] > 1.0) || !std::isfinite(F[j])) throw DomainError("params.F: growth factors must be finite and > 1");
      if (j > 0 && !(F[j] > F[j - 1])) throw DomainError("params.F: growth factors must be strictly increasing");
    }
    if (Q.size() != g) throw DomainError("params.Q: expected a g x g matrix");
    for (std::size_t j = 0; j < g; ++j) {
      if (Q(j, j) != 0.0) throw DomainError("params.Q: diagonal must be zero");
      for (std::size_t k = 0; k < g; ++k)
        if (!(Q(j, k) >= 0.0) || !std::isfinite(Q(j, k))) throw DomainError("params.Q: entries must be finite and >= 0");
    }
    if (!(m >= 0.0) || m > 1e-6) throw DomainError("params.m: mutation scale must lie in [0, 1e-6]");
    for (std::size_t j = 0; j < g; ++j)
      if (m * Q.row_sum(j) > 1e-6 * (1.0 + 1e-12)) throw DomainError("params.Q: m * row sum exceeds 1e-6");
    if (N < 1) throw DomainError("params.N: population size must be >= 1");
    if (!(delta > 0.0)) throw DomainError("params.delta: boundary threshold must be > 0");
  }

  double mean_rate(std::size_t j, std::size_t k) const noexcept { return m * Q(j, k); }

  // Three-genotype reference set: F = (200, 200^1.08, 200^1.12), m = 1e-6,
  // N = 1e6, delta = 50/N and irreversible advantageous mutations.
  static ModelParams reference() {
    ModelParams p;
    p.g = 3;
    p.F = {200.0, std::pow(200.0, 1.08), std::pow(200.0, 1.12)};
    p.Q = SquareMatrix(3, {0.0, 0.5, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0});
    p.m = 1e-6;
    p.N = 1'000'000;
    p.delta = 50.0 / static_cast<double>(p.N);
    return p;
  }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
  return s;
}

inline void check_dims(const Histogram& h, const ModelParams& P, const char* what) {
  if (h.size() != P.g) {
    std::ostringstream os;
    os << what << ": histogram has " << h.size() << " coordinates, model has g = " << P.g;
    throw DomainError(os.str());
  }
}

// Phi(H)_j = F_j H(j) / <F, H>.
inline Histogram growth_map(const Histogram& H, const ModelParams& P) {
  check_dims(H, P, "growth_map");
  std::vector<double> out(P.g);
  const double fh = dot(P.F, H.values());
  for (std::size_t j = 0; j < P.g; ++j) out[j] = P.F[j] * H[j] / fh;
  return Histogram::clamp_normalize(out);
}

// Membership test for the open constraint set K(H).
inline bool in_constraint_set(const Histogram& H, const MutationMatrix& r, const ModelParams& P,
                              std::string* why = nullptr) {
  auto fail = [&](const std::string& s) {
    if (why) *why = s;
    return false;
  };
  if (r.size() != P.g) return fail("mutation matrix has wrong dimension");
  for (std::size_t j = 0; j < P.g; ++j) {
    double out = 0.0;
    for (std::size_t k = 0; k < P.g; ++k) {
      const double v = r(j, k);
      if (!(v >= 0.0) || !std::isfinite(v)) return fail("negative or non-finite entry");
      if (j == k && v != 0.0) return fail("nonzero diagonal entry");
      if (v > 0.0 && P.Q(j, k) == 0.0) return fail("mutation along a zero entry of Q");
      if (v > 0.0 && H[j] == 0.0) return fail("mutation out of an absent genotype");
      out += v;
    }
    if (H[j] > 0.0 && !(P.F[j] * H[j] - out >= kKSlack)) return fail("outgoing mutants exceed colony size");
  }
  return true;
}

// Psi(H, r)_j = (F_j H(j) - sum_k r_jk + sum_k r_kj) / <F, H>.
inline Histogram post_mutation_map(const Histogram& H, const MutationMatrix& r, const ModelParams& P) {
  check_dims(H, P, "post_mutation_map");
  std::string why;
  if (!in_constraint_set(H, r, P, &why)) throw DomainError("post_mutation_map: r not in K(H): " + why);
  const double fh = dot(P.F, H.values());
  std::vector<double> out(P.g);
  for (std::size_t j = 0; j < P.g; ++j) out[j] = (P.F[j] * H[j] - r.row_sum(j) + r.col_sum(j)) / fh;
  return Histogram::clamp_normalize(out);
}

// Mutation counts at their means: r_jk = m Q_jk F_j H(j).
inline MutationMatrix mean_mutations(const Histogram& H, const ModelParams& P) {
  MutationMatrix r(P.g);
  for (std::size_t j = 0; j < P.g; ++j)
    for (std::size_t k = 0; k < P.g; ++k) r(j, k) = P.mean_rate(j, k) * P.F[j] * H[j];
  return r;
}

// zeta(H): the zero-cost successor of H.
inline Histogram mean_step(const Histogram& H, const ModelParams& P) {
  check_dims(H, P, "mean_step");
  const double fh = dot(P.F, H.values());
  std::vector<double> out(P.g);
  for (std::size_t j = 0; j < P.g; ++j) {
    const double fj = P.F[j] * H[j];
    double in = 0.0;
    for (std::size_t k = 0; k < P.g; ++k) in += P.Q(k, j) * P.F[k] * H[k];
    out[j] = (fj - P.m * P.Q.row_sum(j) * fj + P.m * in) / fh;
  }
  return Histogram::clamp_normalize(out);
}

// Genotypes reachable from `start` through chains of positive Q entries
// (start itself included).
inline std::vector<bool> reachable_genotypes(const std::vector<std::size_t>& start, const ModelParams& P) {
  std::vector<bool> seen(P.g, false);
  std::deque<std::size_t> queue;
  for (auto s : start)
    if (!seen[s]) {
      seen[s] = true;
      queue.push_back(s);
    }
  while (!queue.empty()) {
    const auto j = queue.front();
    queue.pop_front();
    for (std::size_t k = 0; k < P.g; ++k)
      if (P.Q(j, k) > 0.0 && !seen[k]) {
        seen[k] = true;
        queue.push_back(k);
      }
  }
  return seen;
}

enum class Feasibility { feasible_one_step, reachable, neither };

inline bool is_reachable(Feasibility f) noexcept { return f != Feasibility::neither; }

inline const char* to_string(Feasibility f) noexcept {
  switch (f) {
    case Feasibility::feasible_one_step: return "feasible_one_step";
    case Feasibility::reachable: return "reachable";
    default: return "neither";
  }
}

// feasible_one_step: every genotype appearing in G is present in H or can be
// created in one step by a mutation from H. reachable: spt(G) lies in the
// transitive closure of spt(H). The stronger answer is returned.
inline Feasibility feasibility(const Histogram& H, const Histogram& G, const ModelParams& P) {
  check_dims(H, P, "feasibility");
  check_dims(G, P, "feasibility");
  bool one_step = true;
  for (std::size_t j = 0; j < P.g && one_step; ++j) {
    if (G[j] > 0.0 && H[j] == 0.0) {
      bool fed = false;
      for (std::size_t k = 0; k < P.g; ++k)
        if (H[k] * P.mean_rate(k, j) > 0.0) fed = true;
      one_step = fed;
    }
  }
  if (one_step) return Feasibility::feasible_one_step;
  const auto closure = reachable_genotypes(H.support(), P);
  for (std::size_t j = 0; j < P.g; ++j)
    if (G[j] > 0.0 && !closure[j]) return Feasibility::neither;
  return Feasibility::reachable;
}

}  // namespace evogeo
