#pragma once

// Solvers for the augmented-Lagrangian inner problem
//
//     argmin_u  (tau/2) |Ku - b|^2 + J(u)
//
// Each solver stops on its own optimality measure and reports whether the
// tolerance was reached within the iteration cap.

#include <cmath>
#include <optional>
#include <utility>

#include "almreg/error.hpp"
#include "almreg/linop.hpp"
#include "almreg/penalty.hpp"

namespace almreg {

struct SubproblemSpec {
  LinearOperator K;
  Vector b;
  double tau = 1.0;
  double tol = 1e-8;
  int max_inner_iters = 20000;
  std::optional<Vector> warm_u;
  /// Dual field from a previous tv solve (gradient layout, optionally
  /// followed by the data-term dual for non-identity K).
  std::optional<Vector> warm_dual;
};

struct SubproblemResult {
  Vector u;
  Vector dual;  // tv only; empty otherwise
  bool inexact = false;
  double measure = 0.0;
  int iterations = 0;
};

/// Default inner tolerances per penalty family.
inline double default_inner_tol(const Penalty& p) {
  if (p.as_quadratic()) return 1e-10;
  if (p.as_lq()) return 1e-8;
  return 1e-6;
}

struct CgResult {
  int iterations = 0;
  double relative_residual = 0.0;
};

/// Conjugate gradients for a symmetric positive (semi)definite operator.
/// Stops when |rhs - A x| <= tol |rhs|.
template <class ApplyA>
CgResult conjugate_gradient(const ApplyA& apply_a, const Vector& rhs, Vector& x, double tol,
                            int max_iters) {
  const double rhs_norm = rhs.norm();
  if (rhs_norm == 0.0) {
    x.setZero();
    return {0, 0.0};
  }
  Vector r = rhs - apply_a(x);
  Vector p = r;
  double rr = r.squaredNorm();
  int it = 0;
  while (std::sqrt(rr) > tol * rhs_norm && it < max_iters) {
    const Vector ap = apply_a(p);
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) break;
    const double alpha = rr / pap;
    x += alpha * p;
    r -= alpha * ap;
    const double rr_new = r.squaredNorm();
    p = r + (rr_new / rr) * p;
    rr = rr_new;
    ++it;
    // refresh the recursive residual now and then to avoid drift
    if (it % 50 == 0) {
      r = rhs - apply_a(x);
      rr = r.squaredNorm();
    }
  }
  r = rhs - apply_a(x);
  return {it, r.norm() / rhs_norm};
}

namespace detail {

inline void check_spec(const Penalty& p, const SubproblemSpec& s) {
  if (!(s.tau > 0.0)) throw ConfigError("subproblem: tau must be positive");
  if (!(s.tol > 0.0)) throw ConfigError("subproblem: tol must be positive");
  if (s.max_inner_iters < 1) throw ConfigError("subproblem: max_inner_iters must be >= 1");
  if (s.b.size() != s.K.dim_out()) throw ConfigError("subproblem: b does not match K");
  if (auto d = p.domain_dim(); d && *d != s.K.dim_in()) {
    throw ConfigError("subproblem: penalty domain does not match K");
  }
  if (s.warm_u && s.warm_u->size() != s.K.dim_in()) {
    throw ConfigError("subproblem: warm start has wrong length");
  }
}

inline Vector initial_u(const SubproblemSpec& s) {
  return s.warm_u ? *s.warm_u : Vector::Zero(s.K.dim_in());
}

// (tau K*K + L*L) u = tau K* b
inline SubproblemResult solve_quadratic(const QuadraticPenalty& pen, const SubproblemSpec& s) {
  if (pen.L.dim_out() <= 0 || pen.L.dim_in() != s.K.dim_in()) {
    throw ConfigError("quadratic subproblem: L does not act on the domain of K");
  }
  const LinearOperator& K = s.K;
  const LinearOperator& L = pen.L;
  const double tau = s.tau;
  auto apply_a = [&](const Vector& x) -> Vector {
    return tau * K.adjoint_apply(K.apply(x)) + L.adjoint_apply(L.apply(x));
  };
  const Vector rhs = tau * K.adjoint_apply(s.b);
  SubproblemResult out;
  out.u = initial_u(s);
  const CgResult cg = conjugate_gradient(apply_a, rhs, out.u, s.tol, s.max_inner_iters);
  out.iterations = cg.iterations;
  out.measure = cg.relative_residual;
  out.inexact = cg.relative_residual > s.tol;
  return out;
}

// Accelerated proximal gradient with gradient-based adaptive restart.
inline SubproblemResult solve_lq(const LqPenalty& pen, const SubproblemSpec& s) {
  const LinearOperator& K = s.K;
  const double tau = s.tau;
  const double knorm = operator_norm(K);
  if (knorm == 0.0) {
    // objective is J alone
    SubproblemResult out;
    out.u = Vector::Zero(K.dim_in());
    return out;
  }
  // power iteration can undershoot slightly; keep the step safely below 1/Lip
  const double step = 1.0 / (tau * knorm * knorm * 1.02);
  auto grad = [&](const Vector& x) -> Vector { return tau * K.adjoint_apply(K.apply(x) - s.b); };
  auto measure_at = [&](const Vector& x) {
    const Vector xp = prox_power(x - step * grad(x), step, pen.q);
    return (x - xp).norm() / std::max(1.0, x.norm());
  };

  Vector x = initial_u(s);
  SubproblemResult out;
  double m = measure_at(x);
  if (m <= s.tol) {
    out.u = std::move(x);
    out.measure = m;
    return out;
  }
  Vector y = x;
  double t = 1.0;
  int it = 0;
  while (it < s.max_inner_iters) {
    ++it;
    const Vector x_new = prox_power(y - step * grad(y), step, pen.q);
    if ((y - x_new).dot(x_new - x) > 0.0) {
      // momentum points uphill: restart from the last iterate
      t = 1.0;
      y = x_new;
    } else {
      const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = x_new + ((t - 1.0) / t_new) * (x_new - x);
      t = t_new;
    }
    x = x_new;
    m = measure_at(x);
    if (m <= s.tol) break;
  }
  out.u = std::move(x);
  out.measure = m;
  out.iterations = it;
  out.inexact = m > s.tol;
  return out;
}

/// Exact 1-D total variation denoising: argmin ½|x - y|² + λ Σ|x_{k+1} - x_k|.
/// Direct taut-string style algorithm (Condat, 2013), O(n) in practice.
inline Vector tv1d_denoise(const Vector& input, double lambda) {
  const Index width = input.size();
  Vector output(width);
  if (width == 0) return output;
  if (lambda <= 0.0) return input;
  Index k = 0, k0 = 0, kplus = 0, kminus = 0;
  double umin = lambda, umax = -lambda;
  double vmin = input[0] - lambda, vmax = input[0] + lambda;
  const double twolambda = 2.0 * lambda;
  const double minlambda = -lambda;
  for (;;) {
    while (k == width - 1) {
      if (umin < 0.0) {
        do output[k0++] = vmin;
        while (k0 <= kminus);
        k = kminus = k0;
        vmin = input[k];
        umin = lambda;
        umax = vmin + umin - vmax;
      } else if (umax > 0.0) {
        do output[k0++] = vmax;
        while (k0 <= kplus);
        k = kplus = k0;
        vmax = input[k];
        umax = minlambda;
        umin = vmax + umax - vmin;
      } else {
        vmin += umin / static_cast<double>(k - k0 + 1);
        do output[k0++] = vmin;
        while (k0 <= k);
        return output;
      }
    }
    if ((umin += input[k + 1] - vmin) < minlambda) {
      do output[k0++] = vmin;
      while (k0 <= kminus);
      k = kplus = kminus = k0;
      vmin = input[k];
      vmax = vmin + twolambda;
      umin = lambda;
      umax = minlambda;
    } else if ((umax += input[k + 1] - vmax) > lambda) {
      do output[k0++] = vmax;
      while (k0 <= kplus);
      k = kplus = kminus = k0;
      vmax = input[k];
      vmin = vmax - twolambda;
      umin = lambda;
      umax = minlambda;
    } else {
      ++k;
      if (umin >= lambda) {
        kminus = k;
        vmin += (umin - lambda) / static_cast<double>(kminus - k0 + 1);
        umin = lambda;
      }
      if (umax <= minlambda) {
        kplus = k;
        vmax += (umax + lambda) / static_cast<double>(kplus - k0 + 1);
        umax = minlambda;
      }
    }
  }
}

// ROF primal objective and dual value for K = I:
//   P(u) = tau/2 |u - b|² + TV(u),  D(y) = <D^T y, b> - |D^T y|² / (2 tau)
struct RofGap {
  Vector u;
  double gap = 0.0;
  double measure = 0.0;
};

inline RofGap rof_gap(const TvPenalty& pen, const Vector& b, double tau, const Vector& u_candidate,
                      const Vector& y_feasible) {
  const Vector dty = grid_gradient_adjoint(y_feasible, pen.grid);
  const double dual = dty.dot(b) - dty.squaredNorm() / (2.0 * tau);
  auto primal = [&](const Vector& u) {
    return 0.5 * tau * (u - b).squaredNorm() + tv_value(u, pen.grid, pen.flavor);
  };
  Vector u_from_dual = b - dty / tau;
  const double p1 = primal(u_candidate);
  const double p2 = primal(u_from_dual);
  RofGap out;
  if (p2 < p1) {
    out.u = std::move(u_from_dual);
    out.gap = std::max(0.0, p2 - dual);
  } else {
    out.u = u_candidate;
    out.gap = std::max(0.0, p1 - dual);
  }
  // tau-strong convexity: |u - u*| <= sqrt(2 gap / tau)
  out.measure = std::sqrt(2.0 * out.gap / tau) / std::max(1.0, out.u.norm());
  return out;
}

inline SubproblemResult solve_tv_identity_1d(const TvPenalty& pen, const SubproblemSpec& s) {
  SubproblemResult out;
  const Vector u = tv1d_denoise(s.b, 1.0 / s.tau);
  // recover the dual field from D^T z = tau (b - u) by a running sum
  const Index n = pen.grid.size();
  const Vector rhs = s.tau * (s.b - u);
  Vector y = Vector::Zero(2 * n);
  const Index offset = pen.grid.cols == 1 ? 0 : n;
  double z = 0.0;
  for (Index k = 0; k + 1 < n; ++k) {
    z -= rhs[k];
    y[offset + k] = z;
  }
  project_tv_dual_ball(y, n, pen.flavor);
  RofGap g = rof_gap(pen, s.b, s.tau, u, y);
  out.u = std::move(g.u);
  out.dual = std::move(y);
  out.measure = g.measure;
  out.inexact = g.measure > s.tol;
  out.iterations = 1;
  return out;
}

// Accelerated projected gradient on the dual of ROF (K = I, any grid):
//   min_{y in ball} |D^T y|² / (2 tau) - <D^T y, b>,  u = b - D^T y / tau,
// with adaptive restart; the duality gap certifies the primal error.
inline SubproblemResult solve_tv_identity(const TvPenalty& pen, const SubproblemSpec& s) {
  const GridShape g = pen.grid;
  const Index n = g.size();
  const double tau = s.tau;
  const double lip = (g.is_1d() ? 4.0 : 8.0) / tau;

  Vector y = (s.warm_dual && s.warm_dual->size() >= 2 * n) ? Vector(s.warm_dual->head(2 * n))
                                                           : Vector(Vector::Zero(2 * n));
  project_tv_dual_ball(y, n, pen.flavor);
  Vector z = y;
  double t = 1.0;
  auto primal_of = [&](const Vector& dual) -> Vector { return s.b - grid_gradient_adjoint(dual, g) / tau; };
  RofGap best = rof_gap(pen, s.b, tau, primal_of(y), y);
  Vector best_y = y;
  int it = 0;
  while (best.measure > s.tol && it < s.max_inner_iters) {
    ++it;
    Vector y_new = z + grid_gradient(primal_of(z), g) / lip;
    project_tv_dual_ball(y_new, n, pen.flavor);
    if ((z - y_new).dot(y_new - y) > 0.0) {
      t = 1.0;
      z = y_new;
    } else {
      const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      z = y_new + ((t - 1.0) / t_new) * (y_new - y);
      t = t_new;
    }
    y = std::move(y_new);
    if (it % 10 == 0) {
      RofGap cur = rof_gap(pen, s.b, tau, primal_of(y), y);
      if (cur.measure < best.measure) {
        best = std::move(cur);
        best_y = y;
      }
    }
  }
  SubproblemResult out;
  out.u = std::move(best.u);
  out.dual = std::move(best_y);
  out.measure = best.measure;
  out.iterations = it;
  out.inexact = best.measure > s.tol;
  return out;
}

// Plain primal-dual on the stacked operator [K; D] for a general K:
//   min_u  F1(Ku) + F2(Du),  F1(z) = tau/2 |z - b|², F2 = TV norm.
// Stops on the relative primal-dual residual.
inline SubproblemResult solve_tv_general(const TvPenalty& pen, const SubproblemSpec& s) {
  const GridShape g = pen.grid;
  const Index n = g.size();
  const LinearOperator& K = s.K;
  const Index m = K.dim_out();
  const double knorm = operator_norm(K) * 1.02;
  const double lip = std::sqrt(knorm * knorm + (g.is_1d() ? 4.0 : 8.0));
  const double sp = 0.99 / lip;
  const double sd = 0.99 / lip;
  const double tau = s.tau;

  Vector u = initial_u(s);
  Vector yd = Vector::Zero(2 * n);
  Vector yk = Vector::Zero(m);
  if (s.warm_dual && s.warm_dual->size() == 2 * n + m) {
    yd = s.warm_dual->head(2 * n);
    yk = s.warm_dual->tail(m);
  }
  Vector ubar = u;
  SubproblemResult out;
  double measure = kInf;
  int it = 0;
  while (it < s.max_inner_iters) {
    ++it;
    const Vector yd_old = yd;
    const Vector yk_old = yk;
    yk = (yk + sd * K.apply(ubar) - sd * s.b) / (1.0 + sd / tau);
    yd += sd * grid_gradient(ubar, g);
    project_tv_dual_ball(yd, n, pen.flavor);
    const Vector u_old = u;
    u = u - sp * (K.adjoint_apply(yk) + grid_gradient_adjoint(yd, g));
    ubar = 2.0 * u - u_old;

    const Vector du = u_old - u;
    const Vector dyk = yk_old - yk;
    const Vector dyd = yd_old - yd;
    const double primal_res =
        (du / sp - K.adjoint_apply(dyk) - grid_gradient_adjoint(dyd, g)).norm();
    const double dual_res = std::sqrt((dyk / sd - K.apply(du)).squaredNorm() +
                                      (dyd / sd - grid_gradient(du, g)).squaredNorm());
    const double scale =
        std::max({1.0, tau * K.adjoint_apply(s.b).norm(), u.norm()});
    measure = std::max(primal_res, dual_res) / scale;
    if (measure <= s.tol) break;
  }
  out.u = std::move(u);
  out.dual.resize(2 * n + m);
  out.dual << yd, yk;
  out.measure = measure;
  out.iterations = it;
  out.inexact = measure > s.tol;
  return out;
}

}  // namespace detail

/// Solves argmin (tau/2)|Ku - b|² + J(u) to tolerance spec.tol.
///
/// quadratic: conjugate gradients on the normal equations (relative residual);
/// lq: accelerated proximal gradient (relative fixed-point residual);
/// tv: exact direct solver for 1-D denoising, accelerated dual projected
/// gradient with a duality-gap certificate for 2-D denoising, primal-dual residuals otherwise.
inline SubproblemResult solve_subproblem(const Penalty& p, const SubproblemSpec& spec) {
  detail::check_spec(p, spec);
  if (const auto* quad = p.as_quadratic()) return detail::solve_quadratic(*quad, spec);
  if (const auto* lq = p.as_lq()) return detail::solve_lq(*lq, spec);
  const auto* tv = p.as_tv();
  if (spec.K.is_identity()) {
    if (tv->grid.is_1d()) {  // both flavours coincide in 1-D
      return detail::solve_tv_identity_1d(*tv, spec);
    }
    return detail::solve_tv_identity(*tv, spec);
  }
  return detail::solve_tv_general(*tv, spec);
}

}  // namespace almreg
