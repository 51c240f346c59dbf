#pragma once

// Rate functions and the one-step cost C(H, G).
//
// f_jk below always means Q_jk F_j H(j): the mean number of j->k mutants per
// capita divided by m.

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evogeo/core.hpp"
#include "evogeo/trajectory.hpp"

namespace evogeo {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class CostMode { exact, first_order };

inline const char* to_string(CostMode m) noexcept { return m == CostMode::exact ? "exact" : "first_order"; }

inline CostMode parse_cost_mode(const std::string& s) {
  if (s == "exact") return CostMode::exact;
  if (s == "first_order") return CostMode::first_order;
  throw DomainError("unknown cost mode '" + s + "' (expected exact|first_order)");
}

struct CostBreakdown {
  double mut_part = 0.0;
  double kl_part = 0.0;
  double total = 0.0;
  MutationMatrix minimizer_r;
  bool converged = true;
  int iterations = 0;
};

// y -> y log y with 0 log 0 = 0.
inline double xlogx(double y) noexcept { return y > 0.0 ? y * std::log(y) : 0.0; }

// mut(r, H) = sum over active pairs of mu - r + r log(r / mu), mu = m Q_jk F_j H(j).
inline double mut_rate(const MutationMatrix& r, const Histogram& H, const ModelParams& P) {
  std::string why;
  if (!in_constraint_set(H, r, P, &why)) throw DomainError("mut_rate: r not in K(H): " + why);
  double s = 0.0;
  for (std::size_t j = 0; j < P.g; ++j)
    for (std::size_t k = 0; k < P.g; ++k) {
      const double mu = P.mean_rate(j, k) * P.F[j] * H[j];
      if (!(mu > 0.0)) continue;
      const double x = r(j, k);
      s += mu - x + (x > 0.0 ? x * std::log(x / mu) : 0.0);
    }
  return s;
}

// KL(G, J); +inf when G charges a genotype J does not.
inline double kl_divergence(std::span<const double> G, std::span<const double> J) {
  double s = 0.0;
  for (std::size_t j = 0; j < G.size(); ++j) {
    if (!(G[j] > 0.0)) continue;
    if (!(J[j] > 0.0)) return kInf;
    s += G[j] * std::log(G[j] / J[j]);
  }
  return s;
}
inline double kl_divergence(const Histogram& G, const Histogram& J) {
  return kl_divergence(G.values(), J.values());
}

struct KlPartials {
  std::vector<double> dG;  // 1 + log G - log J
  std::vector<double> dJ;  // -G / J
};

// Partial derivatives of KL at points where both are finite (G, J > 0).
inline KlPartials kl_partials(const Histogram& G, const Histogram& J) {
  KlPartials p;
  p.dG.resize(G.size());
  p.dJ.resize(G.size());
  for (std::size_t j = 0; j < G.size(); ++j) {
    if (!(G[j] > 0.0) || !(J[j] > 0.0)) throw DomainError("kl_partials: coordinates must be positive");
    p.dG[j] = 1.0 + std::log(G[j]) - std::log(J[j]);
    p.dJ[j] = -G[j] / J[j];
  }
  return p;
}

inline double tau(const Histogram& H, const MutationMatrix& r, const Histogram& G, const ModelParams& P) {
  const double mu = mut_rate(r, H, P);
  return mu + kl_divergence(G, post_mutation_map(H, r, P));
}

namespace detail {

inline void require_interior(const Histogram& h, const char* what) {
  if (!h.interior()) throw DomainError(std::string(what) + ": histogram must be interior (all coordinates > 0)");
}

// KL(G, Phi(y)) for raw positive y, G (no normalization of y required; Phi is
// homogeneous of degree 0).
inline double kl_growth_raw(std::span<const double> y, std::span<const double> G, const ModelParams& P) {
  const double fy = dot(P.F, y);
  double s = 0.0;
  for (std::size_t j = 0; j < P.g; ++j)
    if (G[j] > 0.0) s += G[j] * std::log(G[j] * fy / (P.F[j] * y[j]));
  return s;
}

}  // namespace detail

// First-order cost for raw positive vectors y (previous) and z (next):
// KL(z, Phi(y)) + m sum_jk F_j y_j Q_jk (1 - exp(-z_j/(F_j y_j) + z_k/(F_k y_k))).
// Used by the searches and by finite-difference tests; no validation.
inline double first_order_cost_raw(std::span<const double> y, std::span<const double> z, const ModelParams& P) {
  double t = 0.0;
  if (P.m > 0.0) {
    double u[16];
    std::vector<double> ubig;
    double* U = u;
    if (P.g > 16) {
      ubig.resize(P.g);
      U = ubig.data();
    }
    for (std::size_t j = 0; j < P.g; ++j) U[j] = z[j] / (P.F[j] * y[j]);
    for (std::size_t j = 0; j < P.g; ++j)
      for (std::size_t k = 0; k < P.g; ++k) {
        const double q = P.Q(j, k);
        if (q == 0.0) continue;
        t += P.F[j] * y[j] * q * (1.0 - std::exp(U[k] - U[j]));
      }
  }
  return detail::kl_growth_raw(y, z, P) + P.m * t;
}

namespace detail {

inline CostBreakdown first_order_breakdown(const Histogram& H, const Histogram& G, const ModelParams& P) {
  CostBreakdown b;
  const Histogram phi = growth_map(H, P);
  const double kl0 = kl_divergence(G, phi);
  b.minimizer_r = MutationMatrix(P.g);
  double mu = 0.0, eta = 0.0;
  for (std::size_t j = 0; j < P.g; ++j)
    for (std::size_t k = 0; k < P.g; ++k) {
      const double q = P.Q(j, k);
      if (q == 0.0) continue;
      const double fj = P.F[j] * H[j], fk = P.F[k] * H[k];
      const double le = -G[j] / fj + G[k] / fk;
      const double e = std::exp(le);
      const double f = q * fj;
      mu += f * (1.0 - e + e * le);
      eta += q * e * (G[j] - G[k] * fj / fk);
      b.minimizer_r(j, k) = P.m * f * e;
    }
  b.mut_part = P.m * mu;
  b.kl_part = kl0 + P.m * eta;
  b.total = first_order_cost_raw(H.values(), G.values(), P);
  b.iterations = 0;
  b.converged = true;
  return b;
}

inline constexpr double kExactTheta = 0.5;
inline constexpr double kExactTol = 1e-12;
inline constexpr int kExactMaxIter = 500;

inline CostBreakdown exact_breakdown(const Histogram& H, const Histogram& G, const ModelParams& P,
                                     std::optional<SquareMatrix> x_init = std::nullopt) {
  const std::size_t g = P.g;
  CostBreakdown b;
  SquareMatrix f(g), x(g, 0.0);
  std::vector<double> fh(g);
  for (std::size_t j = 0; j < g; ++j) fh[j] = P.F[j] * H[j];
  for (std::size_t j = 0; j < g; ++j)
    for (std::size_t k = 0; k < g; ++k) {
      if (P.Q(j, k) == 0.0) continue;
      f(j, k) = P.Q(j, k) * fh[j];
      x(j, k) = x_init ? (*x_init)(j, k) : std::exp(-G[j] / fh[j] + G[k] / fh[k]);
    }

  std::vector<double> A(g);
  auto colony = [&](const SquareMatrix& xx) {
    for (std::size_t i = 0; i < g; ++i) {
      double s = fh[i];
      for (std::size_t k = 0; k < g; ++k) s += P.m * (-f(i, k) * xx(i, k) + f(k, i) * xx(k, i));
      A[i] = s;
    }
  };
  auto admissible = [&](const SquareMatrix& xx) {
    for (std::size_t i = 0; i < g; ++i) {
      double out = 0.0;
      for (std::size_t k = 0; k < g; ++k) out += f(i, k) * xx(i, k);
      if (!(fh[i] - P.m * out > 0.0)) return false;
    }
    return true;
  };

  bool conv = P.m == 0.0;
  int it = 0;
  if (!conv) {
    for (; it < kExactMaxIter; ++it) {
      colony(x);
      double diff = 0.0;
      for (std::size_t j = 0; j < g; ++j)
        for (std::size_t k = 0; k < g; ++k) {
          if (P.Q(j, k) == 0.0) continue;
          const double w = std::exp(-G[j] / A[j] + G[k] / A[k]);
          const double nx = (1.0 - kExactTheta) * x(j, k) + kExactTheta * w;
          diff = std::max(diff, std::abs(nx - x(j, k)));
          x(j, k) = nx;
        }
      if (!std::isfinite(diff) || !admissible(x)) {
        conv = false;
        break;
      }
      if (diff < kExactTol) {
        conv = true;
        ++it;
        break;
      }
    }
  }

  b.minimizer_r = MutationMatrix(g);
  for (std::size_t j = 0; j < g; ++j)
    for (std::size_t k = 0; k < g; ++k) b.minimizer_r(j, k) = P.m * f(j, k) * x(j, k);
  b.converged = conv;
  b.iterations = it;
  if (!admissible(x)) {
    b.converged = false;
    b.mut_part = b.kl_part = b.total = kInf;
    return b;
  }
  b.mut_part = mut_rate(b.minimizer_r, H, P);
  b.kl_part = kl_divergence(G, post_mutation_map(H, b.minimizer_r, P));
  b.total = b.mut_part + b.kl_part;
  return b;
}

}  // namespace detail

// C(H, G) for interior H, G. Exact mode solves the stationarity system by a
// damped fixed point; `converged` is false when it stalls or leaves K(H).
inline CostBreakdown one_step_cost(const Histogram& H, const Histogram& G, const ModelParams& P,
                                   CostMode mode = CostMode::first_order) {
  check_dims(H, P, "one_step_cost");
  check_dims(G, P, "one_step_cost");
  detail::require_interior(H, "one_step_cost(H)");
  detail::require_interior(G, "one_step_cost(G)");
  return mode == CostMode::exact ? detail::exact_breakdown(H, G, P) : detail::first_order_breakdown(H, G, P);
}

// Exact solve from a caller-supplied starting point x (indexed like Q).
inline CostBreakdown one_step_cost_exact_from(const Histogram& H, const Histogram& G, const ModelParams& P,
                                              const SquareMatrix& x0) {
  detail::require_interior(H, "one_step_cost(H)");
  detail::require_interior(G, "one_step_cost(G)");
  return detail::exact_breakdown(H, G, P, x0);
}

// Single step of lambda. Infeasible steps cost +inf; feasible steps touching
// the boundary are outside the cost expansion and rejected.
inline double step_cost(const Histogram& H, const Histogram& G, const ModelParams& P, CostMode mode) {
  if (feasibility(H, G, P) != Feasibility::feasible_one_step) return kInf;
  if (!H.interior() || !G.interior())
    throw DomainError("path_cost: boundary step is outside the interior cost expansion");
  return one_step_cost(H, G, P, mode).total;
}

// lambda(w) = sum of one-step costs.
inline double path_cost(const Trajectory& w, const ModelParams& P, CostMode mode = CostMode::first_order) {
  double s = 0.0;
  for (std::size_t n = 0; n + 1 < w.points.size(); ++n) {
    const double c = step_cost(w.points[n], w.points[n + 1], P, mode);
    if (!std::isfinite(c)) return kInf;
    s += c;
  }
  return s;
}

// Recomputes step costs and total in place.
inline void cost_trajectory(Trajectory& w, const ModelParams& P, CostMode mode = CostMode::first_order) {
  w.step_costs.clear();
  w.total_cost = 0.0;
  for (std::size_t n = 0; n + 1 < w.points.size(); ++n) {
    const double c = step_cost(w.points[n], w.points[n + 1], P, mode);
    w.step_costs.push_back(c);
    w.total_cost += c;
  }
}

struct CostGradient {
  std::vector<double> wrt_y_prev;  // d/dy C(x, y); empty without x
  std::vector<double> wrt_y_next;  // d/dy C(y, z); empty without z
  double norm_h = std::numeric_limits<double>::quiet_NaN();  // sup-norm of wrt_y_next
};

// Correction term of d/dy_s C(y, z) at first order in m, for raw positive y, z:
//   F_s sum_k Q_sk - (F_s + z_s/y_s) sum_k E_sk Q_sk
//     + z_s/(F_s y_s^2) sum_k F_k y_k Q_ks E_ks,
// E_sk = exp(-z_s/(F_s y_s) + z_k/(F_k y_k)).
inline void next_grad_correction_raw(std::span<const double> y, std::span<const double> z, const ModelParams& P,
                                     std::span<double> out) {
  const std::size_t g = P.g;
  double ub[16];
  std::vector<double> big;
  double* u = ub;
  if (g > 16) {
    big.resize(g);
    u = big.data();
  }
  for (std::size_t j = 0; j < g; ++j) u[j] = z[j] / (P.F[j] * y[j]);
  for (std::size_t s = 0; s < g; ++s) {
    double a = 0.0, b = 0.0, c = 0.0;
    for (std::size_t k = 0; k < g; ++k) {
      if (P.Q(s, k) != 0.0) {
        a += P.Q(s, k);
        b += std::exp(u[k] - u[s]) * P.Q(s, k);
      }
      if (P.Q(k, s) != 0.0) c += P.F[k] * y[k] * P.Q(k, s) * std::exp(u[s] - u[k]);
    }
    out[s] = P.F[s] * a - (P.F[s] + z[s] / y[s]) * b + z[s] / (P.F[s] * y[s] * y[s]) * c;
  }
}

// d/dy_s C(y, z) = F_s/<F,y> - z_s/y_s + m * correction.
inline void next_grad_raw(std::span<const double> y, std::span<const double> z, const ModelParams& P,
                          std::span<double> out) {
  next_grad_correction_raw(y, z, P, out);
  const double fy = dot(P.F, y);
  for (std::size_t s = 0; s < P.g; ++s) out[s] = P.F[s] / fy - z[s] / y[s] + P.m * out[s];
}

// d/dy_s C(x, y) = 1 + log(y_s/F_s) - log x_s + log<F,x> + m sum_k (Q_sk E_sk
//   - (F_k x_k)/(F_s x_s) Q_ks E_ks), E evaluated at (x, y).
inline void prev_grad_raw(std::span<const double> x, std::span<const double> y, const ModelParams& P,
                          std::span<double> out) {
  const std::size_t g = P.g;
  const double lfx = std::log(dot(P.F, x));
  std::vector<double> u(g);
  for (std::size_t j = 0; j < g; ++j) u[j] = y[j] / (P.F[j] * x[j]);
  for (std::size_t s = 0; s < g; ++s) {
    double a = 0.0;
    for (std::size_t k = 0; k < g; ++k) {
      if (P.Q(s, k) != 0.0) a += P.Q(s, k) * std::exp(u[k] - u[s]);
      if (P.Q(k, s) != 0.0) a -= (P.F[k] * x[k]) / (P.F[s] * x[s]) * P.Q(k, s) * std::exp(u[s] - u[k]);
    }
    out[s] = 1.0 + std::log(y[s] / P.F[s]) - std::log(x[s]) + lfx + P.m * a;
  }
}

inline double sup_norm(std::span<const double> v) noexcept {
  double s = 0.0;
  for (double x : v) s = std::max(s, std::abs(x));
  return s;
}

// h(y, G): sup-norm of the first-order gradient of C(., G) at y.
inline double gradient_norm_raw(std::span<const double> y, std::span<const double> G, const ModelParams& P) {
  double buf[16];
  std::vector<double> big;
  std::span<double> out(buf, P.g);
  if (P.g > 16) {
    big.resize(P.g);
    out = big;
  }
  next_grad_raw(y, G, P, out);
  return sup_norm(out);
}

inline CostGradient cost_gradient(const std::optional<Histogram>& x, const Histogram& y,
                                  const std::optional<Histogram>& z, const ModelParams& P) {
  check_dims(y, P, "cost_gradient");
  detail::require_interior(y, "cost_gradient(y)");
  CostGradient out;
  if (x) {
    check_dims(*x, P, "cost_gradient");
    detail::require_interior(*x, "cost_gradient(x)");
    out.wrt_y_prev.resize(P.g);
    prev_grad_raw(x->values(), y.values(), P, out.wrt_y_prev);
  }
  if (z) {
    check_dims(*z, P, "cost_gradient");
    detail::require_interior(*z, "cost_gradient(z)");
    out.wrt_y_next.resize(P.g);
    next_grad_raw(y.values(), z->values(), P, out.wrt_y_next);
    out.norm_h = sup_norm(out.wrt_y_next);
  }
  return out;
}

}  // namespace evogeo
