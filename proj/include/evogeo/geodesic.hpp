#pragma once

// Zero-cost flow, reverse recurrence and reverse-shooting search for broken
// geodesics H -> G.
//
// Indexing follows the search description: the mean path is v_1, v_2, ...
// starting at H; a reverse geodesic is z_0 = G, z_1 = y, z_{k+2} = chi(z_{k+1},
// z_k). A broken geodesic is v_1..v_nu followed by z_{kappa-1}, ..., z_0.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "evogeo/core.hpp"
#include "evogeo/cost.hpp"
#include "evogeo/parallel.hpp"
#include "evogeo/trajectory.hpp"

namespace evogeo {

enum class PenStrategy { full_grid, quantile_pruned, seeded_ball };

inline const char* to_string(PenStrategy s) noexcept {
  switch (s) {
    case PenStrategy::full_grid: return "full_grid";
    case PenStrategy::quantile_pruned: return "quantile_pruned";
    default: return "seeded_ball";
  }
}

inline PenStrategy parse_pen_strategy(const std::string& s) {
  if (s == "full_grid") return PenStrategy::full_grid;
  if (s == "quantile_pruned") return PenStrategy::quantile_pruned;
  if (s == "seeded_ball") return PenStrategy::seeded_ball;
  throw DomainError("unknown PEN strategy '" + s + "' (expected full_grid|quantile_pruned|seeded_ball)");
}

struct SearchConfig {
  double epsilon = 1e-4;
  double eta = 1e-6;
  double delta = 0.0;  // <= 0: take ModelParams::delta
  int max_reverse_len = 200;
  double quantile = 0.05;
  PenStrategy pen_strategy = PenStrategy::quantile_pruned;
  double ball_radius = 0.05;
  int stages_max = 2;

  // Local refinement around the grid winner: a (2w+1)^(g-1) stencil whose
  // spacing shrinks by refine_factor per level until refine_min_spacing.
  bool refine = true;
  double refine_factor = 4.0;
  int refine_half_width = 4;
  double refine_min_spacing = 1e-10;

  bool use_test_path_cap = true;  // prune with the cost of the y* test path
  double stage2_epsilon = 2e-3;   // grid of the per-candidate stage-2 searches
  double mean_tol = 1e-10;
  int mean_max_steps = 500;
  CostMode report_mode = CostMode::first_order;
  unsigned threads = 1;

  double effective_delta(const ModelParams& P) const { return delta > 0.0 ? delta : P.delta; }

  void validate() const {
    if (!(epsilon > 0.0) || epsilon > 0.5) throw DomainError("search.epsilon: must lie in (0, 0.5]");
    if (!(eta > 0.0)) throw DomainError("search.eta: must be > 0");
    if (max_reverse_len < 1) throw DomainError("search.max_reverse_len: must be >= 1");
    if (!(quantile > 0.0) || quantile > 1.0) throw DomainError("search.quantile: must lie in (0, 1]");
    if (!(ball_radius > 0.0)) throw DomainError("search.ball_radius: must be > 0");
    if (stages_max < 1) throw DomainError("search.stages_max: must be >= 1");
    if (!(refine_factor > 1.0)) throw DomainError("search.refine_factor: must be > 1");
    if (refine_half_width < 1) throw DomainError("search.refine_half_width: must be >= 1");
    if (!(refine_min_spacing > 0.0)) throw DomainError("search.refine_min_spacing: must be > 0");
    if (!(stage2_epsilon > 0.0) || stage2_epsilon > 0.5) throw DomainError("search.stage2_epsilon: must lie in (0, 0.5]");
    if (!(mean_tol > 0.0) || mean_max_steps < 1) throw DomainError("search.mean_tol/mean_max_steps: must be positive");
  }
};

// ---------------------------------------------------------------------------
// Zero-cost flow and the terminal fixed point

struct MeanPath {
  Trajectory path;  // all step costs zero
  bool converged = false;
};

inline MeanPath mean_trajectory(const Histogram& h1, const ModelParams& P, double tol = 1e-10, int max_steps = 500) {
  check_dims(h1, P, "mean_trajectory");
  MeanPath out;
  out.path.points.push_back(h1);
  for (int n = 0; n < max_steps; ++n) {
    Histogram next = mean_step(out.path.points.back(), P);
    const double d = sup_distance(next, out.path.points.back());
    if (d < tol) {
      out.converged = true;
      break;
    }
    out.path.points.push_back(std::move(next));
    out.path.step_costs.push_back(0.0);
  }
  return out;
}

// First-order expansion of the terminal fixed point reached from support S:
// the fittest reachable genotype s dominates and each i with Q_si > 0 sits at
// m Q_si F_s / (F_s - F_i); everything else is O(m^2).
inline Histogram terminal_fixed_point_expansion(const std::vector<std::size_t>& support, const ModelParams& P) {
  const auto reach = reachable_genotypes(support, P);
  std::size_t s = 0;
  for (std::size_t j = 0; j < P.g; ++j)
    if (reach[j]) s = j;
  std::vector<double> h(P.g, 0.0);
  double rest = 1.0;
  for (std::size_t i = 0; i < P.g; ++i) {
    if (i == s || !reach[i]) continue;
    h[i] = P.m * P.Q(s, i) * P.F[s] / (P.F[s] - P.F[i]);
    rest -= h[i];
  }
  h[s] = rest;
  return Histogram::clamp_normalize(h);
}

struct FixedPoint {
  Histogram h_ter;
  int iterations = 0;
  bool converged = false;
};

// h_ter = zeta(h_ter) by forward iteration from h1.
inline FixedPoint terminal_fixed_point(const Histogram& h1, const ModelParams& P, double tol = 1e-14,
                                       int max_steps = 100000) {
  FixedPoint fp{h1, 0, false};
  for (int n = 0; n < max_steps; ++n) {
    Histogram next = mean_step(fp.h_ter, P);
    const double d = sup_distance(next, fp.h_ter);
    fp.h_ter = std::move(next);
    fp.iterations = n + 1;
    if (d < tol) {
      fp.converged = true;
      break;
    }
  }
  return fp;
}

// ---------------------------------------------------------------------------
// Reverse recurrence

namespace detail {

using Vec = std::array<double, kMaxGenotypes>;

// Unnormalized first-order predecessor x of (y, z); returns false when an
// exponential under/overflows. out holds x_hat (1 + m w).
inline bool reverse_step_raw(const double* y, const double* z, const ModelParams& P, double* out) {
  const std::size_t g = P.g;
  const double fy = dot(P.F, std::span<const double>(y, g));
  Vec lx{}, X{}, xh{}, al{}, be{}, u{};
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < g; ++s) {
    lx[s] = std::log(y[s] / P.F[s]) + P.F[s] / fy - z[s] / y[s];
    mx = std::max(mx, lx[s]);
  }
  double sx = 0.0;
  for (std::size_t s = 0; s < g; ++s) {
    X[s] = std::exp(lx[s] - mx);
    sx += X[s];
  }
  for (std::size_t s = 0; s < g; ++s) {
    xh[s] = X[s] / sx;
    if (!(xh[s] > 0.0)) return false;
  }
  if (P.m == 0.0) {
    for (std::size_t s = 0; s < g; ++s) out[s] = xh[s];
    return true;
  }
  for (std::size_t s = 0; s < g; ++s) u[s] = y[s] / (P.F[s] * xh[s]);
  for (std::size_t s = 0; s < g; ++s) {
    double a = 0.0;
    for (std::size_t k = 0; k < g; ++k) {
      if (P.Q(s, k) != 0.0) a += P.Q(s, k) * std::exp(-u[s] + u[k]);
      if (P.Q(k, s) != 0.0) a -= (P.F[k] * X[k]) / (P.F[s] * X[s]) * P.Q(k, s) * std::exp(-u[k] + u[s]);
    }
    al[s] = a;
  }
  next_grad_correction_raw(std::span<const double>(y, g), std::span<const double>(z, g), P,
                           std::span<double>(be.data(), g));
  double mean = 0.0;
  for (std::size_t s = 0; s < g; ++s) mean += xh[s] * (al[s] + be[s]);
  for (std::size_t s = 0; s < g; ++s) {
    out[s] = xh[s] * (1.0 + P.m * (al[s] + be[s] - mean));
    if (!std::isfinite(out[s])) return false;
  }
  return true;
}

inline double min_coord_raw(const double* v, std::size_t g) {
  double b = v[0];
  for (std::size_t j = 1; j < g; ++j) b = std::min(b, v[j]);
  return b;
}

}  // namespace detail

// chi(y, z): the predecessor x such that (x, y, z) satisfies the first-order
// stationarity condition of C(x, y) + C(y, z) in y.
inline Histogram reverse_step(const Histogram& y, const Histogram& z, const ModelParams& P) {
  check_dims(y, P, "reverse_step");
  check_dims(z, P, "reverse_step");
  detail::require_interior(y, "reverse_step(y)");
  detail::require_interior(z, "reverse_step(z)");
  std::vector<double> x(P.g);
  if (!detail::reverse_step_raw(y.values().data(), z.values().data(), P, x.data()) ||
      !Histogram::clamp_normalize_in_place(x))
    throw ConvergenceError("reverse_step: non-finite exponential (point too close to the boundary)");
  return Histogram::adopt(std::move(x));
}

// ---------------------------------------------------------------------------
// Penultimate seed y*

struct SeedResult {
  Histogram y;
  double condition_number = 0.0;
};

// Solves the linear system whose first g-1 rows read
// sum_k F_k y_k - F_j y_j / G_j = 0 and whose last row is sum y = 1.
inline SeedResult penultimate_seed_ex(const Histogram& G, const ModelParams& P) {
  check_dims(G, P, "penultimate_seed");
  detail::require_interior(G, "penultimate_seed(G)");
  const auto g = static_cast<Eigen::Index>(P.g);
  Eigen::MatrixXd A(g, g);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(g);
  for (Eigen::Index j = 0; j + 1 < g; ++j)
    for (Eigen::Index k = 0; k < g; ++k) A(j, k) = j == k ? (1.0 - 1.0 / G[j]) * P.F[j] : P.F[k];
  A.row(g - 1).setOnes();
  b(g - 1) = 1.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
  const auto sv = svd.singularValues();
  const double cond = sv(g - 1) > 0.0 ? sv(0) / sv(g - 1) : std::numeric_limits<double>::infinity();
  if (!(cond < 1e12)) {
    std::ostringstream os;
    os << "penultimate_seed: singular system (condition number " << cond << ")";
    throw DomainError(os.str());
  }
  Eigen::VectorXd y = A.partialPivLu().solve(b);
  std::vector<double> v(y.data(), y.data() + g);
  return {validate_histogram(v, 1e-9), cond};
}

inline Histogram penultimate_seed(const Histogram& G, const ModelParams& P) { return penultimate_seed_ex(G, P).y; }

// ---------------------------------------------------------------------------
// Penultimate candidate sets

// Flat storage of candidate penultimates (row j = point j).
struct PenSet {
  std::size_t g = 0;
  std::vector<double> coords;
  std::vector<float> h;          // gradient norms, filled for quantile_pruned
  std::size_t net_size = 0;      // interior points of the epsilon-net
  double h_threshold = 0.0;      // quantile of h (quantile_pruned only)
  double h_seed = 0.0;           // h(y*, G)
  double c_constant = 0.0;       // h_seed / h_threshold

  std::size_t size() const noexcept { return g == 0 ? 0 : coords.size() / g; }
  std::span<const double> point(std::size_t i) const { return {coords.data() + i * g, g}; }
};

inline std::size_t net_divisions(double epsilon) {
  const double n = std::round(1.0 / epsilon);
  if (!(n >= 1.0) || n > 1e7) throw DomainError("epsilon: 1/epsilon must be a moderate positive integer");
  return static_cast<std::size_t>(n);
}

namespace detail {

inline double binom(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

// Visits all compositions c of n into g parts with every c_j >= lo, in
// lexicographic order, passing the histogram c / n. Parallel over c_0.
template <class Visit>
void for_each_net_point(std::size_t n, std::size_t g, std::size_t lo, unsigned threads, Visit&& visit) {
  if (g * lo > n) return;
  const std::size_t top = n - (g - 1) * lo;
  parallel_for(top - lo + 1, threads, 1, [&](std::size_t b, std::size_t e, unsigned w) {
    std::vector<std::size_t> c(g);
    std::vector<double> y(g);
    const double dn = static_cast<double>(n);
    auto rec = [&](auto& self, std::size_t j, std::size_t rem) -> void {
      if (j == g - 1) {
        c[j] = rem;
        for (std::size_t i = 0; i < g; ++i) y[i] = static_cast<double>(c[i]) / dn;
        visit(y, w);
        return;
      }
      for (std::size_t v = lo; v + (g - 1 - j) * lo <= rem; ++v) {
        c[j] = v;
        self(self, j + 1, rem - v);
      }
    };
    for (std::size_t i = b; i < e; ++i) {
      c[0] = lo + i;
      rec(rec, 1, n - c[0]);
    }
  });
}

}  // namespace detail

// Number of net points with every coordinate >= delta.
inline std::size_t net_lower_index(std::size_t n, double delta) {
  return static_cast<std::size_t>(std::ceil(delta * static_cast<double>(n) - 1e-9));
}

// Candidate penultimates on the epsilon-net (coordinates multiples of 1/n,
// n = 1/epsilon) with b >= delta.
inline PenSet build_pen_set(const Histogram& G, const SearchConfig& cfg, const ModelParams& P) {
  check_dims(G, P, "build_pen_set");
  detail::require_interior(G, "build_pen_set(G)");
  const std::size_t g = P.g;
  const std::size_t n = net_divisions(cfg.epsilon);
  const double delta = cfg.effective_delta(P);
  const std::size_t lo = std::max<std::size_t>(1, net_lower_index(n, delta));
  const unsigned T = std::max(1u, cfg.threads);

  PenSet pen;
  pen.g = g;
  const Histogram ystar = penultimate_seed(G, P);
  pen.h_seed = gradient_norm_raw(ystar.values(), G.values(), P);
  // Points are visited in parallel per leading coordinate; gather per leading
  // coordinate to keep the final order independent of the thread count. Each
  // leading coordinate is handled by one worker, in lexicographic order.
  const std::size_t lead = n + 1;
  auto lead_of = [&](const std::vector<double>& y) {
    return static_cast<std::size_t>(std::llround(y[0] * static_cast<double>(n)));
  };
  std::vector<std::vector<double>> by_lead(lead);
  auto flatten = [&](std::size_t reserve) {
    pen.coords.reserve(reserve * g);
    for (auto& v : by_lead) {
      pen.coords.insert(pen.coords.end(), v.begin(), v.end());
      std::vector<double>().swap(v);
    }
  };

  if (cfg.pen_strategy != PenStrategy::quantile_pruned) {
    const bool ball = cfg.pen_strategy == PenStrategy::seeded_ball;
    detail::for_each_net_point(n, g, lo, T, [&](const std::vector<double>& y, unsigned) {
      if (ball && sup_distance(y, ystar.values()) > cfg.ball_radius + 1e-12) return;
      auto& dst = by_lead[lead_of(y)];
      dst.insert(dst.end(), y.begin(), y.end());
    });
    std::size_t total = 0;
    for (auto& v : by_lead) total += v.size() / g;
    pen.net_size = total;
    if (total == 0) throw DomainError("build_pen_set: empty candidate set (epsilon too coarse or delta too large)");
    flatten(total);
    return pen;
  }

  // Quantile pruning: a first pass keeps only h (a float per net point; the
  // full coordinate list would not fit at fine meshes), a second pass
  // re-enumerates the net and keeps the points at or below the threshold.
  std::vector<std::vector<float>> h_by_lead(lead);
  detail::for_each_net_point(n, g, lo, T, [&](const std::vector<double>& y, unsigned) {
    h_by_lead[lead_of(y)].push_back(static_cast<float>(gradient_norm_raw(y, G.values(), P)));
  });
  std::size_t total = 0;
  for (auto& v : h_by_lead) total += v.size();
  pen.net_size = total;
  if (total == 0) throw DomainError("build_pen_set: empty candidate set (epsilon too coarse or delta too large)");
  // keep the lowest `quantile` fraction of h (highest 1/h)
  const std::size_t keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.quantile * static_cast<double>(total))));
  float thr = 0.0f;
  {
    std::vector<float> tmp;
    tmp.reserve(total);
    for (auto& v : h_by_lead) tmp.insert(tmp.end(), v.begin(), v.end());
    std::nth_element(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(keep - 1), tmp.end());
    thr = tmp[keep - 1];
  }
  pen.h_threshold = thr;
  pen.c_constant = pen.h_seed / static_cast<double>(thr);

  std::vector<std::size_t> next(lead, 0);
  std::vector<std::vector<float>> kept_h_by_lead(lead);
  detail::for_each_net_point(n, g, lo, T, [&](const std::vector<double>& y, unsigned) {
    const std::size_t c0 = lead_of(y);
    const float h = h_by_lead[c0][next[c0]++];
    if (h > thr) return;
    by_lead[c0].insert(by_lead[c0].end(), y.begin(), y.end());
    kept_h_by_lead[c0].push_back(h);
  });
  std::vector<std::vector<float>>().swap(h_by_lead);

  // points strictly below the threshold always stay; ties fill up to `keep`
  // in net order
  pen.coords.reserve(keep * g + g);
  pen.h.reserve(keep);
  std::size_t count = 0;
  for (std::size_t c0 = 0; c0 < lead; ++c0) {
    const auto& hs = kept_h_by_lead[c0];
    for (std::size_t i = 0; i < hs.size(); ++i) {
      if (hs[i] < thr || count < keep) {
        pen.coords.insert(pen.coords.end(), by_lead[c0].begin() + static_cast<std::ptrdiff_t>(i * g),
                          by_lead[c0].begin() + static_cast<std::ptrdiff_t>((i + 1) * g));
        pen.h.push_back(hs[i]);
        ++count;
      }
    }
    std::vector<double>().swap(by_lead[c0]);
  }
  return pen;
}

// Gradient-norm landscape over the interior net: each point with h(y, G).
struct Landscape {
  std::size_t g = 0;
  std::vector<double> coords;
  std::vector<double> h;
  double h_seed = 0.0;
};

inline Landscape pen_landscape(const Histogram& G, double epsilon, double delta, const ModelParams& P,
                               unsigned threads = 1) {
  detail::require_interior(G, "pen_landscape(G)");
  const std::size_t n = net_divisions(epsilon);
  const std::size_t lo = std::max<std::size_t>(1, net_lower_index(n, delta));
  std::vector<std::vector<double>> by_lead(n + 1), h_by(n + 1);
  detail::for_each_net_point(n, P.g, lo, std::max(1u, threads), [&](const std::vector<double>& y, unsigned) {
    const std::size_t c0 = static_cast<std::size_t>(std::llround(y[0] * static_cast<double>(n)));
    by_lead[c0].insert(by_lead[c0].end(), y.begin(), y.end());
    h_by[c0].push_back(gradient_norm_raw(y, G.values(), P));
  });
  Landscape L;
  L.g = P.g;
  for (std::size_t i = 0; i <= n; ++i) {
    L.coords.insert(L.coords.end(), by_lead[i].begin(), by_lead[i].end());
    L.h.insert(L.h.end(), h_by[i].begin(), h_by[i].end());
  }
  L.h_seed = gradient_norm_raw(penultimate_seed(G, P).values(), G.values(), P);
  return L;
}

// c = h(y*, G) / (q-quantile of h over the landscape).
inline double quantile_constant(const Landscape& L, double q) {
  if (L.h.empty()) throw DomainError("quantile_constant: empty landscape");
  std::vector<double> h(L.h);
  const std::size_t keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(q * static_cast<double>(h.size()))));
  std::nth_element(h.begin(), h.begin() + static_cast<std::ptrdiff_t>(keep - 1), h.end());
  return L.h_seed / h[keep - 1];
}

// ---------------------------------------------------------------------------
// Reverse geodesics and splicing

enum class StopReason { boundary, max_len, cap };

inline const char* to_string(StopReason r) noexcept {
  switch (r) {
    case StopReason::boundary: return "boundary";
    case StopReason::max_len: return "max_len";
    default: return "cap";
  }
}

struct ReverseGeodesic {
  std::vector<Histogram> z;            // z_0 = G, z_1 = y, ...
  std::vector<double> terminal_cost;   // terminal_cost[k] = lambda([z_k .. z_0])
  std::size_t k_ter = 0;               // index of the last computed point
  StopReason stop = StopReason::max_len;
};

namespace detail {

// Reverse geodesic in a flat buffer (point k at z[k*g]). Returns false if the
// very first step C(y, G) already exceeds the cap.
struct RawReverse {
  std::vector<double> z;
  std::vector<double> term;
  std::size_t count = 0;  // number of points z_0..z_{count-1}
  StopReason stop = StopReason::max_len;
};

inline bool reverse_geodesic_raw(const double* G, const double* y, const ModelParams& P, double delta, int max_len,
                                 double cap, RawReverse& rg) {
  const std::size_t g = P.g;
  rg.z.assign(G, G + g);
  rg.z.insert(rg.z.end(), y, y + g);
  rg.term.assign(1, 0.0);
  const double c1 = first_order_cost_raw(std::span<const double>(y, g), std::span<const double>(G, g), P);
  rg.term.push_back(c1);
  rg.count = 2;
  if (c1 > cap) {
    rg.stop = StopReason::cap;
    return false;
  }
  Vec x{};
  while (rg.count <= static_cast<std::size_t>(max_len)) {
    const double* zk1 = rg.z.data() + (rg.count - 1) * g;
    const double* zk = rg.z.data() + (rg.count - 2) * g;
    if (!reverse_step_raw(zk1, zk, P, x.data()) ||
        !Histogram::clamp_normalize_in_place(std::span<double>(x.data(), g)) || min_coord_raw(x.data(), g) < delta) {
      rg.stop = StopReason::boundary;
      return true;
    }
    const double c = first_order_cost_raw(std::span<const double>(x.data(), g), std::span<const double>(zk1, g), P);
    const double t = rg.term.back() + c;
    if (t > cap) {
      rg.stop = StopReason::cap;
      return true;
    }
    rg.z.insert(rg.z.end(), x.begin(), x.begin() + static_cast<std::ptrdiff_t>(g));
    rg.term.push_back(t);
    ++rg.count;
  }
  rg.stop = StopReason::max_len;
  return true;
}

}  // namespace detail

// Truncated reverse geodesic from (G, y); stops when the next point has
// b < delta, after max_reverse_len points beyond G, or when the terminal
// segment cost would exceed cap.
inline ReverseGeodesic reverse_geodesic(const Histogram& G, const Histogram& y, const SearchConfig& cfg,
                                        const ModelParams& P, double cap = kInf) {
  check_dims(G, P, "reverse_geodesic");
  check_dims(y, P, "reverse_geodesic");
  const double delta = cfg.effective_delta(P);
  detail::require_interior(G, "reverse_geodesic(G)");
  if (y.min_coord() < delta) throw DomainError("reverse_geodesic: penultimate point is near the boundary (b(y) < delta)");
  detail::RawReverse rg;
  detail::reverse_geodesic_raw(G.values().data(), y.values().data(), P, delta, cfg.max_reverse_len, cap, rg);
  ReverseGeodesic out;
  out.z.push_back(G);
  out.z.push_back(y);
  for (std::size_t k = 2; k < rg.count; ++k)
    out.z.push_back(Histogram::adopt(std::vector<double>(rg.z.begin() + static_cast<std::ptrdiff_t>(k * P.g),
                                                         rg.z.begin() + static_cast<std::ptrdiff_t>((k + 1) * P.g))));
  out.terminal_cost = rg.term;
  out.k_ter = rg.count - 1;
  out.stop = rg.stop;
  return out;
}

// Mean path prepared for fast jump-cost evaluation.
struct SpliceBase {
  std::size_t g = 0;
  std::vector<Histogram> v;          // full mean path v_1, v_2, ...
  std::vector<std::size_t> index;    // eligible positions (b >= delta)
  std::vector<double> log_phi;       // log Phi(v_n), per eligible point
  std::vector<double> fv;            // F_j v_n(j), per eligible point
};

inline SpliceBase make_splice_base(const MeanPath& mp, const ModelParams& P, double delta) {
  SpliceBase b;
  b.g = P.g;
  b.v = mp.path.points;
  for (std::size_t n = 0; n < b.v.size(); ++n) {
    const auto& h = b.v[n];
    if (h.min_coord() < delta) continue;
    b.index.push_back(n);
    const double fh = dot(P.F, h.values());
    for (std::size_t j = 0; j < P.g; ++j) {
      b.fv.push_back(P.F[j] * h[j]);
      b.log_phi.push_back(std::log(P.F[j] * h[j] / fh));
    }
  }
  if (b.index.empty()) throw DomainError("mean path has no interior point with b >= delta");
  return b;
}

struct Splice {
  double jump = kInf;
  std::size_t n = 0;  // 0-based position in the mean path (nu = n + 1)
  std::size_t k = 0;  // reverse index (kappa = k + 1)
  bool complete = false;
};

namespace detail {

// C(v, z) at first order from cached log Phi(v) and F_j v_j.
inline double cached_cost(const double* lp, const double* fv, const double* z, double zlz, const ModelParams& P) {
  const std::size_t g = P.g;
  double kl = zlz;
  Vec u{};
  for (std::size_t j = 0; j < g; ++j) {
    kl -= z[j] * lp[j];
    u[j] = z[j] / fv[j];
  }
  if (P.m == 0.0) return kl;
  double t = 0.0;
  for (std::size_t j = 0; j < g; ++j)
    for (std::size_t k = 0; k < g; ++k) {
      const double q = P.Q(j, k);
      if (q != 0.0) t += fv[j] * q * (1.0 - std::exp(u[k] - u[j]));
    }
  return kl + P.m * t;
}

inline double jump_cost(const SpliceBase& b, std::size_t e, const double* z, double zlz, const ModelParams& P) {
  return cached_cost(b.log_phi.data() + e * b.g, b.fv.data() + e * b.g, z, zlz, P);
}

// Case (i): the first k >= 1 whose best jump is <= eta. Case (ii): the
// overall minimum, ties to the smaller nu + kappa.
inline Splice choose_splice(const SpliceBase& b, const double* z, std::size_t count, double eta,
                            const ModelParams& P) {
  const std::size_t g = b.g;
  Splice best;
  for (std::size_t k = 1; k < count; ++k) {
    const double* zk = z + k * g;
    double zlz = 0.0;
    for (std::size_t j = 0; j < g; ++j) zlz += xlogx(zk[j]);
    double bk = kInf;
    std::size_t bn = 0;
    for (std::size_t e = 0; e < b.index.size(); ++e) {
      const double c = jump_cost(b, e, zk, zlz, P);
      if (c < bk) {
        bk = c;
        bn = b.index[e];
      }
    }
    if (bk <= eta) return {bk, bn, k, true};
    if (bk < best.jump || (bk == best.jump && bn + k < best.n + best.k)) best = {bk, bn, k, false};
  }
  return best;
}

}  // namespace detail

// One evaluated penultimate point.
struct Candidate {
  double total = kInf;  // jump + terminal cost
  double jump = kInf;
  std::size_t nu = 0, kappa = 0;
  bool complete = false;
  StopReason stop = StopReason::max_len;
  double boundary_cost = kInf;  // terminal cost to the last interior point
  std::size_t k_ter = 0;
  std::vector<double> y;
  bool pruned_first = false;  // C(y, G) alone exceeded the cap

  bool valid() const noexcept { return std::isfinite(total); }
};

// (cost, nu + kappa, y) lexicographic.
inline bool better(const Candidate& a, const Candidate& b) {
  if (a.total != b.total) return a.total < b.total;
  if (a.nu + a.kappa != b.nu + b.kappa) return a.nu + a.kappa < b.nu + b.kappa;
  return std::lexicographical_compare(a.y.begin(), a.y.end(), b.y.begin(), b.y.end());
}

namespace detail {

inline Candidate evaluate_candidate(const SpliceBase& base, const double* G, const double* y, const ModelParams& P,
                                    double delta, int max_len, double eta, double cap, RawReverse& rg) {
  Candidate c;
  c.y.assign(y, y + P.g);
  if (!reverse_geodesic_raw(G, y, P, delta, max_len, cap, rg)) {
    c.pruned_first = true;
    return c;
  }
  const Splice s = choose_splice(base, rg.z.data(), rg.count, eta, P);
  c.stop = rg.stop;
  c.k_ter = rg.count - 1;
  c.boundary_cost = rg.term.back();
  if (!std::isfinite(s.jump)) return c;
  c.jump = s.jump;
  c.nu = s.n + 1;
  c.kappa = s.k + 1;
  c.complete = s.complete;
  c.total = s.jump + rg.term[s.k];
  return c;
}

}  // namespace detail

struct GeodesicResult {
  Trajectory path;
  Histogram penultimate;
  std::size_t nu = 0, kappa = 0;
  bool complete = false;
  int stage = 1;
  double jump_cost = 0.0;

  // diagnostics
  double lambda0 = kInf;            // test-path cost used as the prune cap
  double lambda1 = kInf;            // best first-stage cost
  double grid_cost = kInf;          // best cost on the net before refinement
  std::size_t pen_size = 0;
  std::size_t net_size = 0;
  std::size_t evaluated = 0;        // candidates surviving the first-step cap
  std::size_t stage2_candidates = 0;
  double stage2_best = kInf;
  double c_constant = 0.0;
  double wall_seconds = 0.0;
  std::vector<Candidate> runners_up;
};

namespace detail {

inline Trajectory assemble_path(const SpliceBase& base, const Histogram& G, const std::vector<double>& y,
                                const Candidate& c, const SearchConfig& cfg, const ModelParams& P) {
  RawReverse rg;
  reverse_geodesic_raw(G.values().data(), y.data(), P, cfg.effective_delta(P), cfg.max_reverse_len, kInf, rg);
  Trajectory t;
  for (std::size_t n = 0; n < c.nu; ++n) t.points.push_back(base.v[n]);
  for (std::size_t k = c.kappa; k-- > 0;) {
    if (k == 0) {
      t.points.push_back(G);
    } else {
      t.points.push_back(Histogram::adopt(std::vector<double>(rg.z.begin() + static_cast<std::ptrdiff_t>(k * P.g),
                                                              rg.z.begin() + static_cast<std::ptrdiff_t>((k + 1) * P.g))));
    }
  }
  cost_trajectory(t, P, cfg.report_mode);
  return t;
}

struct StageOutput {
  Candidate best;
  std::vector<Candidate> boundary_truncated;  // incomplete, stopped at the boundary
  std::vector<Candidate> top;
  std::size_t pen_size = 0, net_size = 0, evaluated = 0;
  double lambda0 = kInf, grid_cost = kInf, c_constant = 0.0;
};

inline void refine_candidate(const SpliceBase& base, const Histogram& G, const SearchConfig& cfg, const ModelParams& P,
                             double spacing, double cap, Candidate& best) {
  const std::size_t g = P.g;
  const double delta = cfg.effective_delta(P);
  const int w = cfg.refine_half_width;
  const std::size_t side = static_cast<std::size_t>(2 * w + 1);
  std::size_t stencil = 1;
  for (std::size_t d = 0; d + 1 < g; ++d) stencil *= side;
  const unsigned T = std::max(1u, cfg.threads);
  for (double h = spacing / cfg.refine_factor; h >= cfg.refine_min_spacing; h /= cfg.refine_factor) {
    const std::vector<double> center = best.y;
    std::vector<Candidate> results(stencil);
    parallel_for(stencil, T, 8, [&](std::size_t b, std::size_t e, unsigned) {
      RawReverse rg;
      std::vector<double> y(g);
      for (std::size_t i = b; i < e; ++i) {
        std::size_t r = i;
        double last = center[g - 1];
        bool ok = true;
        for (std::size_t d = 0; d + 1 < g; ++d) {
          const int off = static_cast<int>(r % side) - w;
          r /= side;
          y[d] = center[d] + h * off;
          last -= h * off;
          if (y[d] < delta) ok = false;
        }
        y[g - 1] = last;
        if (!ok || last < delta) continue;
        results[i] = evaluate_candidate(base, G.values().data(), y.data(), P, delta, cfg.max_reverse_len, cfg.eta,
                                        cap, rg);
      }
    });
    for (auto& c : results)
      if (c.valid() && better(c, best)) best = std::move(c);
  }
}

inline StageOutput run_stage(const SpliceBase& base, const Histogram& G, const SearchConfig& cfg,
                             const ModelParams& P, double cap_override, bool collect_boundary, std::size_t keep_top) {
  StageOutput out;
  const double delta = cfg.effective_delta(P);
  const unsigned T = std::max(1u, cfg.threads);
  RawReverse rg;

  double cap = cap_override;
  Candidate test_path;
  if (cfg.use_test_path_cap && !std::isfinite(cap)) {
    // preliminary test path through the seed y*; it stays a candidate itself
    // so that a cap no net point can beat still yields a path
    const Histogram ystar = penultimate_seed(G, P);
    if (ystar.min_coord() >= delta) {
      test_path = evaluate_candidate(base, G.values().data(), ystar.values().data(), P, delta, cfg.max_reverse_len,
                                     cfg.eta, kInf, rg);
      if (test_path.valid()) {
        out.lambda0 = test_path.total;
        cap = test_path.total;
      }
    }
  }

  const PenSet pen = build_pen_set(G, cfg, P);
  out.pen_size = pen.size();
  out.net_size = pen.net_size;
  out.c_constant = pen.c_constant;

  const std::size_t np = pen.size();
  constexpr std::size_t chunk = 512;
  const std::size_t nchunks = (np + chunk - 1) / chunk;
  std::vector<Candidate> best_by(nchunks);
  std::vector<std::vector<Candidate>> bnd_by(nchunks), top_by(nchunks);
  std::vector<std::size_t> eval_by(nchunks, 0);
  auto push_top = [&](std::vector<Candidate>& top, const Candidate& c) {
    if (keep_top == 0) return;
    if (top.size() < keep_top) {
      top.push_back(c);
    } else {
      auto worst = std::max_element(top.begin(), top.end(), better);
      if (better(c, *worst)) *worst = c;
    }
  };
  parallel_for(nchunks, T, 1, [&](std::size_t b, std::size_t e, unsigned) {
    RawReverse local;
    for (std::size_t ci = b; ci < e; ++ci) {
      const std::size_t i0 = ci * chunk, i1 = std::min(np, i0 + chunk);
      for (std::size_t i = i0; i < i1; ++i) {
        const auto y = pen.point(i);
        Candidate c = evaluate_candidate(base, G.values().data(), y.data(), P, delta, cfg.max_reverse_len, cfg.eta,
                                         cap, local);
        if (!c.pruned_first) ++eval_by[ci];
        if (collect_boundary && c.valid() && !c.complete && c.stop == StopReason::boundary) bnd_by[ci].push_back(c);
        if (!c.valid()) continue;
        push_top(top_by[ci], c);
        if (!best_by[ci].valid() || better(c, best_by[ci])) best_by[ci] = std::move(c);
      }
    }
  });
  for (std::size_t ci = 0; ci < nchunks; ++ci) {
    out.evaluated += eval_by[ci];
    if (best_by[ci].valid() && (!out.best.valid() || better(best_by[ci], out.best))) out.best = best_by[ci];
    for (auto& c : bnd_by[ci]) out.boundary_truncated.push_back(std::move(c));
    for (auto& c : top_by[ci]) push_top(out.top, c);
  }
  std::sort(out.top.begin(), out.top.end(), better);
  if (test_path.valid() && (!out.best.valid() || better(test_path, out.best))) out.best = test_path;
  if (!out.best.valid()) return out;
  out.grid_cost = out.best.total;
  if (cfg.refine) refine_candidate(base, G, cfg, P, cfg.epsilon, out.best.total, out.best);
  return out;
}

// Interior net points with cached log Phi(y) and F_j y_j, shared by all
// stage-2 sub-searches.
struct NetCache {
  std::vector<double> coords, log_phi, fv;
  std::size_t size() const noexcept { return log_phi.empty() ? 0 : coords.size(); }
};

inline NetCache make_net_cache(double epsilon, double delta, const ModelParams& P) {
  const std::size_t n = net_divisions(epsilon);
  const std::size_t lo = std::max<std::size_t>(1, net_lower_index(n, delta));
  NetCache c;
  for_each_net_point(n, P.g, lo, 1, [&](const std::vector<double>& y, unsigned) {
    const double fy = dot(P.F, y);
    for (std::size_t j = 0; j < P.g; ++j) {
      c.coords.push_back(y[j]);
      c.fv.push_back(P.F[j] * y[j]);
      c.log_phi.push_back(std::log(P.F[j] * y[j] / fy));
    }
  });
  return c;
}

// Best broken geodesic H -> Gy over the cached net with total cost below
// budget (no refinement).
inline Candidate sub_search(const SpliceBase& base, const NetCache& net, const Histogram& Gy, double budget,
                            const SearchConfig& cfg, const ModelParams& P) {
  const std::size_t g = P.g;
  const std::size_t np = net.coords.size() / g;
  const double delta = cfg.effective_delta(P);
  double zlz = 0.0;
  for (std::size_t j = 0; j < g; ++j) zlz += xlogx(Gy[j]);
  constexpr std::size_t chunk = 4096;
  const std::size_t nchunks = (np + chunk - 1) / chunk;
  std::vector<Candidate> best_by(nchunks);
  parallel_for(nchunks, std::max(1u, cfg.threads), 1, [&](std::size_t b, std::size_t e, unsigned) {
    RawReverse rg;
    for (std::size_t ci = b; ci < e; ++ci)
      for (std::size_t i = ci * chunk; i < std::min(np, (ci + 1) * chunk); ++i) {
        const double c1 = cached_cost(net.log_phi.data() + i * g, net.fv.data() + i * g, Gy.values().data(), zlz, P);
        if (!(c1 <= budget)) continue;
        Candidate c = evaluate_candidate(base, Gy.values().data(), net.coords.data() + i * g, P, delta,
                                         cfg.max_reverse_len, cfg.eta, budget, rg);
        if (c.valid() && (!best_by[ci].valid() || better(c, best_by[ci])))
          best_by[ci] = std::move(c);
      }
  });
  Candidate best;
  for (auto& c : best_by)
    if (c.valid() && (!best.valid() || better(c, best))) best = std::move(c);
  return best;
}

}  // namespace detail

inline GeodesicResult first_stage_search(const Histogram& H, const Histogram& G, const SearchConfig& cfg,
                                         const ModelParams& P) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  check_dims(H, P, "first_stage_search");
  check_dims(G, P, "first_stage_search");
  detail::require_interior(H, "first_stage_search(H)");
  detail::require_interior(G, "first_stage_search(G)");
  if (!is_reachable(feasibility(H, G, P))) throw DomainError("first_stage_search: G is not reachable from H");
  const double delta = cfg.effective_delta(P);
  const MeanPath mp = mean_trajectory(H, P, cfg.mean_tol, cfg.mean_max_steps);
  const SpliceBase base = make_splice_base(mp, P, delta);
  auto st = detail::run_stage(base, G, cfg, P, kInf, false, 5);
  if (!st.best.valid()) {
    std::ostringstream os;
    os << "first_stage_search: no feasible splice found (PEN size " << st.pen_size << ", evaluated " << st.evaluated
       << ", cap " << st.lambda0 << ")";
    throw ConvergenceError(os.str());
  }
  GeodesicResult r;
  r.path = detail::assemble_path(base, G, st.best.y, st.best, cfg, P);
  r.penultimate = Histogram::adopt(st.best.y);
  r.nu = st.best.nu;
  r.kappa = st.best.kappa;
  r.complete = st.best.complete;
  r.jump_cost = st.best.jump;
  r.lambda0 = st.lambda0;
  r.lambda1 = r.path.total_cost;
  r.grid_cost = st.grid_cost;
  r.pen_size = st.pen_size;
  r.net_size = st.net_size;
  r.evaluated = st.evaluated;
  r.c_constant = st.c_constant;
  r.runners_up = std::move(st.top);
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// Stage 1, then a second stage through the boundary endpoints of incomplete
// reverse geodesics whose terminal cost undercuts lambda_1.
inline GeodesicResult multi_stage_search(const Histogram& H, const Histogram& G, const SearchConfig& cfg,
                                         const ModelParams& P) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  check_dims(H, P, "multi_stage_search");
  check_dims(G, P, "multi_stage_search");
  detail::require_interior(H, "multi_stage_search(H)");
  detail::require_interior(G, "multi_stage_search(G)");
  if (!is_reachable(feasibility(H, G, P))) throw DomainError("multi_stage_search: G is not reachable from H");
  const double delta = cfg.effective_delta(P);
  const MeanPath mp = mean_trajectory(H, P, cfg.mean_tol, cfg.mean_max_steps);
  const SpliceBase base = make_splice_base(mp, P, delta);
  auto st = detail::run_stage(base, G, cfg, P, kInf, cfg.stages_max >= 2, 5);
  if (!st.best.valid()) {
    std::ostringstream os;
    os << "multi_stage_search: no feasible splice found (PEN size " << st.pen_size << ", evaluated " << st.evaluated
       << ", cap " << st.lambda0 << ")";
    throw ConvergenceError(os.str());
  }

  GeodesicResult r;
  r.path = detail::assemble_path(base, G, st.best.y, st.best, cfg, P);
  r.penultimate = Histogram::adopt(st.best.y);
  r.nu = st.best.nu;
  r.kappa = st.best.kappa;
  r.complete = st.best.complete;
  r.jump_cost = st.best.jump;
  r.lambda0 = st.lambda0;
  r.lambda1 = r.path.total_cost;
  r.grid_cost = st.grid_cost;
  r.pen_size = st.pen_size;
  r.net_size = st.net_size;
  r.evaluated = st.evaluated;
  r.c_constant = st.c_constant;
  r.runners_up = st.top;

  if (cfg.stages_max >= 2) {
    const double lambda1 = st.best.total;
    std::vector<const Candidate*> pen2;
    for (const auto& c : st.boundary_truncated)
      if (c.boundary_cost < lambda1) pen2.push_back(&c);
    r.stage2_candidates = pen2.size();

    const detail::NetCache net = pen2.empty() ? detail::NetCache{} : detail::make_net_cache(cfg.stage2_epsilon, delta, P);
    Candidate best2;
    std::vector<double> best2_target;
    const Candidate* best2_src = nullptr;
    for (const Candidate* c : pen2) {
      detail::RawReverse rg;
      detail::reverse_geodesic_raw(G.values().data(), c->y.data(), P, delta, cfg.max_reverse_len, kInf, rg);
      const std::size_t kt = rg.count - 1;
      std::vector<double> gy(rg.z.begin() + static_cast<std::ptrdiff_t>(kt * P.g),
                             rg.z.begin() + static_cast<std::ptrdiff_t>((kt + 1) * P.g));
      const Histogram Gy = Histogram::adopt(gy);
      const double budget = lambda1 - rg.term[kt];
      if (!(budget > 0.0)) continue;
      const Candidate s2 = detail::sub_search(base, net, Gy, budget, cfg, P);
      if (!s2.valid()) continue;
      Candidate tot = s2;
      tot.total = s2.total + rg.term[kt];
      if (!best2.valid() || better(tot, best2)) {
        best2 = tot;
        best2_target = gy;
        best2_src = c;
      }
    }
    if (best2.valid()) r.stage2_best = best2.total;
    if (best2.valid() && best2.total < lambda1) {
      // three segments: mean path, stage-2 terminal geodesic into G^y, TG(y)
      const Histogram Gy = Histogram::adopt(best2_target);
      Trajectory first = detail::assemble_path(base, Gy, best2.y, best2, cfg, P);
      detail::RawReverse rg;
      detail::reverse_geodesic_raw(G.values().data(), best2_src->y.data(), P, delta, cfg.max_reverse_len, kInf, rg);
      Trajectory t;
      t.points = first.points;
      for (std::size_t k = rg.count - 1; k-- > 0;) {
        if (k == 0)
          t.points.push_back(G);
        else
          t.points.push_back(Histogram::adopt(std::vector<double>(
              rg.z.begin() + static_cast<std::ptrdiff_t>(k * P.g), rg.z.begin() + static_cast<std::ptrdiff_t>((k + 1) * P.g))));
      }
      cost_trajectory(t, P, cfg.report_mode);
      r.path = std::move(t);
      r.penultimate = Histogram::adopt(best2_src->y);
      r.nu = best2.nu;
      r.kappa = r.path.points.size() - best2.nu;
      r.complete = best2.complete;
      r.jump_cost = best2.jump;
      r.stage = 2;
    }
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace evogeo
