#pragma once

// The augmented Lagrangian (Bregman) iteration
//
//   u_n = argmin  tau_n/2 |Ku - g|² + J(u) - <p_{n-1}, Ku - g>
//   p_n = p_{n-1} + tau_n (g - K u_n)
//
// together with the dual objective G(p, g) = J*(K*p) - <p, g> and the
// proximal-point descent estimate for the dual sequence.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "almreg/error.hpp"
#include "almreg/linop.hpp"
#include "almreg/penalty.hpp"
#include "almreg/stopping.hpp"
#include "almreg/subproblem.hpp"

namespace almreg {

/// Step sizes tau_1, tau_2, ...: an explicit head followed by a constant tail,
/// so the partial sums t_n diverge and sup tau_n is finite by construction.
class StepSchedule {
 public:
  static StepSchedule constant(double tau) { return StepSchedule({}, tau); }

  static StepSchedule sequence(std::vector<double> head, double tail) {
    return StepSchedule(std::move(head), tail);
  }

  /// tau_n = tau0 ratio^{n-1} for n <= count, then constant.
  static StepSchedule geometric(double tau0, double ratio, std::size_t count) {
    if (!(ratio > 0.0)) throw ConfigError("StepSchedule: ratio must be positive");
    std::vector<double> head;
    double x = tau0;
    for (std::size_t k = 0; k < count; ++k, x *= ratio) head.push_back(x);
    return StepSchedule(std::move(head), x);
  }

  /// tau_n for n >= 1.
  [[nodiscard]] double tau(std::size_t n) const {
    if (n == 0) throw ConfigError("StepSchedule: steps are indexed from 1");
    return n <= head_.size() ? head_[n - 1] : tail_;
  }

  /// t_n = tau_1 + ... + tau_n.
  [[nodiscard]] double t(std::size_t n) const {
    double s = 0.0;
    for (std::size_t k = 1; k <= n; ++k) s += tau(k);
    return s;
  }

  [[nodiscard]] double tau_bar() const {
    double m = tail_;
    for (double v : head_) m = std::max(m, v);
    return m;
  }

  [[nodiscard]] const std::vector<double>& head() const { return head_; }
  [[nodiscard]] double tail() const { return tail_; }

 private:
  StepSchedule(std::vector<double> head, double tail) : head_(std::move(head)), tail_(tail) {
    if (!(tail_ > 0.0) || !std::isfinite(tail_)) {
      throw ConfigError("StepSchedule: step sizes must be positive and finite");
    }
    for (double v : head_) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw ConfigError("StepSchedule: step sizes must be positive and finite");
      }
    }
  }

  std::vector<double> head_;
  double tail_;
};

struct AlmState {
  std::size_t n = 0;
  Vector u;
  Vector p;
  double t = 0.0;
  double tau = 0.0;
  double residual = 0.0;  // |K u_n - g_delta|
  bool inexact = false;
  double inner_measure = 0.0;
  int inner_iterations = 0;
  Vector inner_dual;  // warm start for tv solvers
};

struct AlmCaps {
  std::size_t max_outer = 10000;
  std::optional<double> inner_tol;  // default per penalty family
  int max_inner = 20000;
};

struct AlmTrajectory {
  std::vector<AlmState> states;  // n = 1, 2, ...
  StepSchedule schedule = StepSchedule::constant(1.0);
  Vector p0;
  double inner_tol = 0.0;
  std::optional<std::size_t> gamma;  // index at which the rule fired
  bool unstopped = false;

  [[nodiscard]] const AlmState& at(std::size_t n) const {
    if (n == 0 || n > states.size()) throw ConfigError("AlmTrajectory: index out of range");
    return states[n - 1];
  }
  [[nodiscard]] const Vector& p_prev(std::size_t n) const {
    return n == 1 ? p0 : at(n - 1).p;
  }
  [[nodiscard]] std::vector<double> residuals() const {
    std::vector<double> r;
    r.reserve(states.size());
    for (const auto& s : states) r.push_back(s.residual);
    return r;
  }
};

/// Initial state (n = 0, u = 0, t = 0) for a given p0.
inline AlmState alm_initial_state(const LinearOperator& K, const Vector& g_delta, Vector p0) {
  if (p0.size() != K.dim_out()) throw ConfigError("alm: p0 does not match the data space");
  AlmState s;
  s.u = Vector::Zero(K.dim_in());
  s.p = std::move(p0);
  s.residual = g_delta.norm();
  return s;
}

/// One outer step from `prev` with step size tau_n.
inline AlmState alm_step(const AlmState& prev, const LinearOperator& K, const Vector& g_delta,
                         const Penalty& pen, double tau_n, double tol, int max_inner = 20000) {
  if (!(tau_n > 0.0)) throw ConfigError("alm_step: tau must be positive");
  if (g_delta.size() != K.dim_out()) throw ConfigError("alm_step: data does not match K");
  if (prev.p.size() != K.dim_out() || prev.u.size() != K.dim_in()) {
    throw ConfigError("alm_step: state does not match K");
  }
  SubproblemSpec spec{K, g_delta + prev.p / tau_n, tau_n, tol, max_inner, prev.u, std::nullopt};
  if (prev.inner_dual.size() > 0) spec.warm_dual = prev.inner_dual;
  SubproblemResult sol = solve_subproblem(pen, spec);

  AlmState next;
  next.n = prev.n + 1;
  const Vector ku = K.apply(sol.u);
  next.p = prev.p + tau_n * (g_delta - ku);
  next.u = std::move(sol.u);
  next.t = prev.t + tau_n;
  next.tau = tau_n;
  next.residual = (ku - g_delta).norm();
  next.inexact = sol.inexact;
  next.inner_measure = sol.measure;
  next.inner_iterations = sol.iterations;
  next.inner_dual = std::move(sol.dual);
  return next;
}

/// Runs the iteration until `stop` fires or caps.max_outer steps were taken.
inline AlmTrajectory alm_run(const LinearOperator& K_in, const Vector& g_delta, const Penalty& pen,
                             const StepSchedule& schedule, std::optional<Vector> p0,
                             const StoppingRule& stop, const AlmCaps& caps = {}) {
  if (caps.max_outer < 1) throw ConfigError("alm_run: max_outer must be >= 1");
  if (auto d = pen.domain_dim(); d && *d != K_in.dim_in()) {
    throw ConfigError("alm_run: penalty domain does not match K");
  }
  const LinearOperator K = with_estimated_norm(K_in);
  AlmTrajectory traj;
  traj.schedule = schedule;
  traj.p0 = p0 ? std::move(*p0) : Vector(Vector::Zero(K.dim_out()));
  traj.inner_tol = caps.inner_tol.value_or(default_inner_tol(pen));

  std::size_t target = caps.max_outer;
  std::optional<double> threshold;
  if (const auto* m = std::get_if<rule::Morozov>(&stop.kind)) {
    threshold = m->rho * m->delta;
  } else if (const auto* a = std::get_if<rule::APriori>(&stop.kind)) {
    target = std::max<std::size_t>(1, a->index_fn(a->delta));
  } else {
    target = std::get<rule::Fixed>(stop.kind).steps;
  }

  AlmState state = alm_initial_state(K, g_delta, traj.p0);
  const std::size_t limit = std::min(target, caps.max_outer);
  for (std::size_t n = 1; n <= limit; ++n) {
    state = alm_step(state, K, g_delta, pen, schedule.tau(n), traj.inner_tol, caps.max_inner);
    traj.states.push_back(state);
    if (threshold && state.residual < *threshold) {
      traj.gamma = n;
      break;
    }
  }
  if (!threshold && traj.states.size() == target) traj.gamma = target;
  traj.unstopped = !traj.gamma.has_value();
  // inner dual fields are solver scratch; drop them to keep trajectories small
  for (auto& s : traj.states) s.inner_dual.resize(0);
  return traj;
}

/// G(p, g) = J*(K* p) - <p, g>; nullopt when J* has no closed form.
inline std::optional<double> dual_objective(const Vector& p, const Vector& data,
                                            const LinearOperator& K, const Penalty& pen,
                                            double ball_tol = 0.0) {
  if (p.size() != K.dim_out() || data.size() != K.dim_out()) {
    throw ConfigError("dual_objective: length mismatch");
  }
  auto conj = conjugate_eval(pen, K.adjoint_apply(p), ball_tol);
  if (!conj) return std::nullopt;
  return *conj - p.dot(data);
}

struct GuelerPoint {
  std::size_t n = 0;
  double rhs = 0.0;  // |p-p0|²/2t - |p-p_n|²/2t - t|p_n-p_{n-1}|²/2tau²
  double lhs = 0.0;  // G(p_n) - G(p)
  double slack = 0.0;
  double eps = 0.0;  // allowance for inexact inner solves
};

/// Slack of the proximal-point descent estimate at every n for the reference
/// dual p_ref. Each slack should be >= -eps with eps = eps_scale*tol*(1+t_n).
inline std::optional<std::vector<GuelerPoint>> gueler_slack(const AlmTrajectory& traj,
                                                            const Vector& p_ref,
                                                            const Vector& data,
                                                            const LinearOperator& K,
                                                            const Penalty& pen,
                                                            double eps_scale = 100.0) {
  const double ball_tol = 100.0 * traj.inner_tol;
  auto g_ref = dual_objective(p_ref, data, K, pen, ball_tol);
  if (!g_ref) return std::nullopt;
  std::vector<GuelerPoint> out;
  for (const auto& s : traj.states) {
    auto g_n = dual_objective(s.p, data, K, pen, ball_tol);
    if (!g_n) return std::nullopt;
    GuelerPoint pt;
    pt.n = s.n;
    const Vector& prev = traj.p_prev(s.n);
    pt.rhs = (p_ref - traj.p0).squaredNorm() / (2.0 * s.t) -
             (p_ref - s.p).squaredNorm() / (2.0 * s.t) -
             s.t * (s.p - prev).squaredNorm() / (2.0 * s.tau * s.tau);
    pt.lhs = *g_n - *g_ref;
    pt.slack = pt.rhs - pt.lhs;
    if (std::isnan(pt.slack)) pt.slack = kInf;  // inf - inf: reference outside dom G
    pt.eps = eps_scale * traj.inner_tol * (1.0 + s.t);
    out.push_back(pt);
  }
  return out;
}

/// Largest violation of residual(n+1) <= residual(n) + 10 tol (1 + residual(n)),
/// or 0 when the sequence is monotone up to that slack.
inline double residual_monotonicity_violation(const AlmTrajectory& traj) {
  double worst = 0.0;
  double prev = -1.0;
  for (const auto& s : traj.states) {
    if (prev >= 0.0) {
      const double slack = 10.0 * traj.inner_tol * (1.0 + prev);
      worst = std::max(worst, s.residual - prev - slack);
    }
    prev = s.residual;
  }
  return worst;
}

}  // namespace almreg
