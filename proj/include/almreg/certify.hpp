#pragma once

// Source-condition certificates, the error estimates of the iteration as
// checkable inequalities, sparse-recovery constants, strict-convergence
// metrics for total variation, and log-log slope fitting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "almreg/alm.hpp"
#include "almreg/error.hpp"
#include "almreg/linop.hpp"
#include "almreg/penalty.hpp"
#include "almreg/stopping.hpp"

namespace almreg {

struct CertificateFailure {
  Index index = -1;  // -1 when the failure is not tied to one entry
  double magnitude = 0.0;
  std::string reason;
};

struct SourceCertificate {
  Vector u_dagger;
  Vector p_dagger;
  Vector xi;  // K* p_dagger
  double fenchel_gap = 0.0;
  bool certified = false;
  std::optional<CertificateFailure> failure;
  // l1 only
  std::optional<double> theta;
  std::vector<Index> support;
};

struct CertifyOptions {
  double data_tol = 1e-10;
  double entry_tol = 1e-10;
  double gap_tol = 1e-8;
  int tv_probes = 200;
  std::uint64_t seed = 7;
};

namespace detail {

inline void fail(SourceCertificate& c, Index idx, double mag, std::string why) {
  c.certified = false;
  if (!c.failure) c.failure = CertificateFailure{idx, mag, std::move(why)};
}

// For a 1-D grid, xi ∈ ∂TV(u) iff xi = D^T z with |z| <= 1 and z = sign(Du)
// wherever Du != 0. z is recovered from xi by a running sum.
inline void certify_tv_1d(SourceCertificate& c, const TvPenalty& tv, double tol) {
  const Index n = tv.grid.size();
  const double scale = std::max(1.0, c.xi.cwiseAbs().maxCoeff());
  if (std::abs(c.xi.sum()) > tol * scale * static_cast<double>(n)) {
    fail(c, -1, std::abs(c.xi.sum()), "xi is not orthogonal to constants");
    return;
  }
  double z = 0.0;
  for (Index k = 0; k + 1 < n; ++k) {
    z -= c.xi[k];
    const double jump = c.u_dagger[k + 1] - c.u_dagger[k];
    if (std::abs(z) > 1.0 + tol * scale) {
      fail(c, k, std::abs(z), "dual field exceeds the unit ball");
      return;
    }
    if (std::abs(jump) > tol && std::abs(z - (jump > 0 ? 1.0 : -1.0)) > tol * scale) {
      fail(c, k, std::abs(z), "dual field does not match the jump sign");
      return;
    }
  }
}

// Necessary-condition sampling of J(u) + <xi, v - u> <= J(v).
inline void certify_by_sampling(SourceCertificate& c, const Penalty& pen, const CertifyOptions& o) {
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> logscale(-3.0, 1.0);
  const Vector& u = c.u_dagger;
  const double ju = penalty_eval(pen, u);
  const Index n = u.size();
  auto probe = [&](const Vector& v, Index tag) {
    const double viol = ju + c.xi.dot(v - u) - penalty_eval(pen, v);
    if (viol > o.gap_tol * (1.0 + std::abs(ju))) fail(c, tag, viol, "subgradient inequality violated");
  };
  // structured probes: zero, scalings, coordinate bumps
  probe(Vector::Zero(n), -1);
  probe(2.0 * u, -1);
  probe(0.5 * u, -1);
  for (Index k = 0; k < n && k < o.tv_probes / 4; ++k) {
    Vector v = u;
    v[k] += 0.1;
    probe(v, k);
    v[k] -= 0.2;
    probe(v, k);
  }
  for (int t = 0; t < o.tv_probes; ++t) {
    const double s = std::pow(10.0, logscale(rng));
    probe(u + s * gaussian_vector(n, rng), -1);
  }
}

}  // namespace detail

/// Checks K* p_dagger ∈ ∂J(u_dagger) and K u_dagger = g.
inline SourceCertificate certify_source_condition(const LinearOperator& K, const Penalty& pen,
                                                  const Vector& u_dagger, const Vector& p_dagger,
                                                  const Vector& g, const CertifyOptions& opt = {}) {
  check_domain(pen, u_dagger, "certify_source_condition");
  if (u_dagger.size() != K.dim_in() || p_dagger.size() != K.dim_out() || g.size() != K.dim_out()) {
    throw ConfigError("certify_source_condition: dimensions do not match K");
  }
  SourceCertificate c;
  c.u_dagger = u_dagger;
  c.p_dagger = p_dagger;
  c.xi = K.adjoint_apply(p_dagger);
  c.certified = true;

  const double data_err = (K.apply(u_dagger) - g).norm();
  if (data_err > opt.data_tol * std::max(1.0, g.norm())) {
    detail::fail(c, -1, data_err, "K u_dagger does not reproduce the exact data");
  }
  const double xscale = std::max(1.0, c.xi.cwiseAbs().maxCoeff());

  if (const auto* quad = pen.as_quadratic()) {
    const Vector expect = quad->L.adjoint_apply(quad->L.apply(u_dagger));
    Index idx = 0;
    const double err = (c.xi - expect).cwiseAbs().maxCoeff(&idx);
    if (err > opt.entry_tol * xscale) detail::fail(c, idx, err, "K* p_dagger != L*L u_dagger");
    c.fenchel_gap = fenchel_gap(pen, u_dagger, c.xi).value_or(0.0);
  } else if (const auto* lq = pen.as_lq(); lq && lq->q > 1.0) {
    const double q = lq->q;
    for (Index k = 0; k < u_dagger.size(); ++k) {
      const double uk = u_dagger[k];
      const double expect = q * (uk < 0 ? -1.0 : 1.0) * std::pow(std::abs(uk), q - 1.0);
      const double err = std::abs(c.xi[k] - expect);
      if (err > opt.entry_tol * xscale) {
        detail::fail(c, k, err, "xi_k != q sign(u_k)|u_k|^(q-1)");
        break;
      }
    }
    c.fenchel_gap = *fenchel_gap(pen, u_dagger, c.xi);
  } else if (pen.is_l1()) {
    double theta = 0.0;
    for (Index k = 0; k < u_dagger.size(); ++k) {
      const double x = c.xi[k];
      const double ax = std::abs(x);
      if (ax > 1.0 + opt.entry_tol) {
        if (u_dagger[k] == 0.0) theta = std::max(theta, ax);
        detail::fail(c, k, ax, "|xi_k| > 1");
        continue;
      }
      if (u_dagger[k] != 0.0 && std::abs(x - (u_dagger[k] > 0 ? 1.0 : -1.0)) > opt.entry_tol) {
        detail::fail(c, k, std::abs(x), "xi_k != sign(u_k) on the support");
        continue;
      }
      if (std::abs(ax - 1.0) <= opt.entry_tol) {
        c.support.push_back(k);
      } else {
        theta = std::max(theta, ax);
      }
    }
    c.theta = theta;
    c.fenchel_gap = *fenchel_gap(pen, u_dagger, c.xi);
  } else {
    const auto* tv = pen.as_tv();
    // TV is one-homogeneous, so the gap reduces to J(u) - <xi, u> once
    // <xi, v> <= J(v) holds for all v
    const double ju = penalty_eval(pen, u_dagger);
    c.fenchel_gap = std::abs(ju - c.xi.dot(u_dagger));
    if (c.fenchel_gap > opt.gap_tol * (1.0 + ju)) {
      detail::fail(c, -1, c.fenchel_gap, "J(u_dagger) != <xi, u_dagger>");
    }
    if (tv->grid.is_1d()) detail::certify_tv_1d(c, *tv, opt.entry_tol);
    detail::certify_by_sampling(c, pen, opt);
  }
  if (c.fenchel_gap > opt.gap_tol && !pen.as_tv()) {
    detail::fail(c, -1, c.fenchel_gap, "Fenchel gap above tolerance");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Error estimates along a trajectory

struct BoundCheck {
  std::string name;
  std::size_t n = 0;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;  // rhs - lhs
  double eps = 0.0;    // tolerated negative slack
  [[nodiscard]] bool holds() const { return slack >= -eps; }
};

struct ErrorBoundOptions {
  double gamma = 2.0;   // free parameter of the primal-dual estimate
  double alpha = 0.25;  // weight in the mixed Bregman estimate, 0 < alpha < 1/2
  double rho = 1.6404;
  double eps_scale = 100.0;
  bool discrepancy_stop = true;  // Γ was chosen by the discrepancy principle
};

/// D_{J*}(K*p_n, K*p_dagger) with subgradient u_dagger. Uses the closed-form
/// conjugate where it is smooth, otherwise the identity
/// D_{J*}(xi_n, xi) = D_J(u_dagger, u_n) with xi_n = K*p_n.
inline double conjugate_bregman(const Penalty& pen, const SourceCertificate& cert,
                                const Vector& xi_n, const Vector& u_n) {
  const bool smooth_conjugate =
      (pen.as_quadratic() && pen.as_quadratic()->L.is_identity()) ||
      (pen.as_lq() && pen.as_lq()->q > 1.0);
  if (smooth_conjugate) {
    return *conjugate_eval(pen, xi_n) - *conjugate_eval(pen, cert.xi) -
           cert.u_dagger.dot(xi_n - cert.xi);
  }
  return penalty_eval(pen, cert.u_dagger) - penalty_eval(pen, u_n) -
         xi_n.dot(cert.u_dagger - u_n);
}

/// Evaluates, at every n of the trajectory, the primal-dual estimate, both
/// Bregman-distance corollaries, and at the stopping index the bound on
/// delta t_Γ, the discrepancy-principle estimate and its rough form
/// D_sym < 5 |p0 - p_dagger| delta.
///
/// `g` is the exact data; the trajectory was run on data at distance delta.
inline std::vector<BoundCheck> check_error_bounds(const AlmTrajectory& traj,
                                                  const SourceCertificate& cert,
                                                  const LinearOperator& K, const Penalty& pen,
                                                  const Vector& g, double delta,
                                                  const ErrorBoundOptions& opt = {}) {
  if (!(opt.gamma > 0.0)) throw ConfigError("check_error_bounds: gamma must be positive");
  if (!(opt.alpha > 0.0 && opt.alpha < 0.5)) throw ConfigError("check_error_bounds: bad alpha");
  std::vector<BoundCheck> out;
  const double a = (cert.p_dagger - traj.p0).norm();
  const double a2 = a * a;
  const double g_ = opt.gamma;
  for (const auto& s : traj.states) {
    const double t = s.t;
    const double eps = opt.eps_scale * traj.inner_tol * (1.0 + t);
    const Vector xi_n = K.adjoint_apply(s.p);
    const double res_exact = (K.apply(s.u) - g).norm();
    const double dstar = conjugate_bregman(pen, cert, xi_n, s.u);
    const double dsym = (xi_n - cert.xi).dot(s.u - cert.u_dagger);

    BoundCheck pd{"primal_dual_estimate", s.n, 0.0, 0.0, 0.0, eps};
    pd.lhs = dstar + t / 4.0 * res_exact * res_exact +
             (g_ - 1.0) / (2.0 * g_ * t) * (s.p - cert.p_dagger).squaredNorm();
    pd.rhs = a2 / (2.0 * t) + (1.0 + g_) * t / 2.0 * delta * delta;
    pd.slack = pd.rhs - pd.lhs;
    out.push_back(pd);

    BoundCheck mixed{"mixed_bregman_estimate", s.n, 0.0, 0.0, 0.0, eps};
    mixed.lhs = opt.alpha * dsym + dstar;
    mixed.rhs = (1.0 - opt.alpha) / (1.0 - 2.0 * opt.alpha) * delta * delta * t + a2 / (2.0 * t);
    mixed.slack = mixed.rhs - mixed.lhs;
    out.push_back(mixed);

    BoundCheck sym{"symmetric_bregman_estimate", s.n, 0.0, 0.0, 0.0, eps};
    sym.lhs = dsym;
    sym.rhs = res_exact * (delta * t + std::sqrt(delta * delta * t * t + a2));
    sym.slack = sym.rhs - sym.lhs;
    out.push_back(sym);
  }

  if (traj.gamma && delta > 0.0 && opt.discrepancy_stop) {
    const auto& s = traj.at(*traj.gamma);
    const double rho = opt.rho;
    const double tau_bar = traj.schedule.tau_bar();
    const double eps = opt.eps_scale * traj.inner_tol * (1.0 + s.t);
    const Vector xi_n = K.adjoint_apply(s.p);
    const double dsym = (xi_n - cert.xi).dot(s.u - cert.u_dagger);

    BoundCheck stop_t{"stopping_index_bound", s.n, 0.0, 0.0, 0.0, 0.0};
    stop_t.lhs = delta * s.t;
    stop_t.rhs = a / std::sqrt(rho - 1.0) + delta * tau_bar;
    stop_t.slack = stop_t.rhs - stop_t.lhs;
    out.push_back(stop_t);

    // explicit form of the (1 + O(sqrt(delta))) factor
    BoundCheck disc{"discrepancy_estimate", s.n, 0.0, 0.0, 0.0, eps};
    disc.lhs = dsym;
    disc.rhs = rho * delta *
               ((std::sqrt(rho) + 1.0) / std::sqrt(rho - 1.0) * a + delta * tau_bar +
                std::sqrt(2.0 * tau_bar * delta / std::sqrt(rho - 1.0) * a +
                          delta * delta * tau_bar * tau_bar));
    disc.slack = disc.rhs - disc.lhs;
    out.push_back(disc);

    BoundCheck rough{"rough_estimate", s.n, dsym, 5.0 * a * delta, 0.0, 0.0};
    rough.slack = rough.rhs - rough.lhs;
    out.push_back(rough);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sparse recovery constants

struct SparseConstants {
  double c = 0.0;       // |K P_I u| >= c |P_I u|_1
  double beta1 = 0.0;
  double beta2 = 0.0;
  double K_norm = 0.0;
  double theta = 0.0;
  int probes = 0;
  int probe_violations = 0;
  double min_probe_slack = kInf;
};

/// Lower bound J(u) - J(u†) >= beta1 J(u - u†) - beta2 |K(u - u†)| with
/// beta1 = (1-θ)/(|K|+1), beta2 = (1-θ)/((|K|+1)c) + |p†| and
/// c = σ_min(K_I)/sqrt(|I|). The inequality is probed on `probes` random u.
inline SparseConstants sparse_constants(const LinearOperator& K, const SourceCertificate& cert,
                                        int probes = 500, std::uint64_t seed = 11) {
  if (!cert.theta || cert.support.empty()) {
    throw ConfigError("sparse_constants: needs an l1 certificate with nonempty support");
  }
  SparseConstants sc;
  sc.theta = *cert.theta;
  sc.K_norm = operator_norm_estimate(K, 500, seed);
  const auto s = static_cast<Index>(cert.support.size());
  Matrix cols(K.dim_out(), s);
  Vector e = Vector::Zero(K.dim_in());
  for (Index j = 0; j < s; ++j) {
    e[cert.support[static_cast<std::size_t>(j)]] = 1.0;
    cols.col(j) = K.apply(e);
    e.setZero();
  }
  const Eigen::JacobiSVD<Matrix> svd(cols);
  const Vector sv = svd.singularValues();
  const double smin = sv.size() ? sv[sv.size() - 1] : 0.0;
  const double smax = sv.size() ? sv[0] : 0.0;
  if (s > K.dim_out() || !(smin > 1e-12 * std::max(1.0, smax))) {
    throw RestrictedInjectivityFailure("K restricted to the support is not injective (sigma_min = " +
                                       std::to_string(smin) + ")");
  }
  sc.c = smin / std::sqrt(static_cast<double>(s));
  sc.beta1 = (1.0 - sc.theta) / (sc.K_norm + 1.0);
  sc.beta2 = (1.0 - sc.theta) / ((sc.K_norm + 1.0) * sc.c) + cert.p_dagger.norm();

  const Penalty l1 = Penalty::lq(1.0);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> logscale(-3.0, 1.0);
  std::bernoulli_distribution sparse_probe(0.5);
  const Vector& ud = cert.u_dagger;
  const double jd = ud.cwiseAbs().sum();
  const Index n = ud.size();
  for (int k = 0; k < probes; ++k) {
    Vector w = gaussian_vector(n, rng);
    if (sparse_probe(rng)) {
      // keep the support plus a few random off-support coordinates
      std::uniform_int_distribution<Index> pick(0, n - 1);
      Vector mask = Vector::Zero(n);
      for (Index i : cert.support) mask[i] = 1.0;
      for (int j = 0; j < 3; ++j) mask[pick(rng)] = 1.0;
      w = w.cwiseProduct(mask);
    }
    w *= std::pow(10.0, logscale(rng));
    const Vector u = ud + w;
    const double lhs = u.cwiseAbs().sum() - jd;
    const double rhs = sc.beta1 * w.cwiseAbs().sum() - sc.beta2 * K.apply(w).norm();
    const double slack = lhs - rhs;
    sc.min_probe_slack = std::min(sc.min_probe_slack, slack);
    if (slack < -1e-12 * (1.0 + jd)) ++sc.probe_violations;
    ++sc.probes;
  }
  (void)l1;
  return sc;
}

/// Constant C of the noise-free estimate |u_n - u†|_1 <= C / t_n, evaluated
/// with the free parameter gamma (default 2).
inline double noisefree_l1_constant(const SparseConstants& sc, double p_dagger_norm,
                                    double gamma = 2.0) {
  return (gamma + sc.beta2) * p_dagger_norm / sc.beta1;
}

// ---------------------------------------------------------------------------
// Strict-convergence metrics for total variation

struct StrictMetrics {
  double d_tilde = 0.0;  // |u - v|_1 + |TV(u) - TV(v)|
  double d = 0.0;        // |Ku - Kv|_2 + |TV(u) - TV(v)|
};

inline StrictMetrics strict_metrics(const Vector& u, const Vector& v, const LinearOperator& K,
                                    const Penalty& pen) {
  const auto* tv = pen.as_tv();
  if (!tv) throw ConfigError("strict_metrics: penalty must be total variation");
  check_domain(pen, u, "strict_metrics");
  check_domain(pen, v, "strict_metrics");
  const double dj = std::abs(penalty_eval(pen, u) - penalty_eval(pen, v));
  return {(u - v).cwiseAbs().sum() + dj, K.apply(u - v).norm() + dj};
}

// ---------------------------------------------------------------------------
// lq rates

inline double lq_norm(const Vector& v, double q) {
  if (q == 1.0) return v.cwiseAbs().sum();
  if (q == 2.0) return v.norm();
  if (std::isinf(q)) return v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
  return std::pow(v.cwiseAbs().array().pow(q).sum(), 1.0 / q);
}

struct LqRateInputs {
  double primal_distance = 0.0;  // |u_Γ - u†|_q
  double dual_distance = 0.0;    // |K*p_Γ - K*p†|_r
  double c_q = 0.0;
  double radius = kInf;  // D_J(v,u†) >= c_q |v-u†|_q² is guaranteed below this
  bool inside_radius = true;
};

/// c_q = b q (q-1)/2 |u|_q^{q-2}; radius 3(1-b)|u|_q/(2-q).
inline double lq_bregman_constant(const Vector& u, double q, double b = 0.5) {
  return b * q * (q - 1.0) / 2.0 * std::pow(lq_norm(u, q), q - 2.0);
}

inline double lq_bregman_radius(const Vector& u, double q, double b = 0.5) {
  if (q >= 2.0) return kInf;
  return 3.0 * (1.0 - b) * lq_norm(u, q) / (2.0 - q);
}

inline LqRateInputs lq_norm_rate_inputs(const SourceCertificate& cert, const Vector& u_gamma,
                                        const Vector& xi_gamma, double q, double b = 0.5) {
  if (!(q > 1.0 && q <= 2.0)) throw DomainError("lq_norm_rate_inputs: q must lie in (1, 2]");
  if (!(b > 0.0 && b < 1.0)) throw DomainError("lq_norm_rate_inputs: b must lie in (0, 1)");
  if (cert.u_dagger.norm() == 0.0) throw DomainError("lq_norm_rate_inputs: u_dagger is zero");
  const double r = q == 2.0 ? 2.0 : q / (q - 1.0);
  LqRateInputs out;
  out.primal_distance = lq_norm(u_gamma - cert.u_dagger, q);
  out.dual_distance = lq_norm(xi_gamma - cert.xi, r);
  out.c_q = lq_bregman_constant(cert.u_dagger, q, b);
  out.radius = lq_bregman_radius(cert.u_dagger, q, b);
  out.inside_radius = out.primal_distance < out.radius;
  return out;
}

// ---------------------------------------------------------------------------
// Log-log regression

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::size_t points = 0;
};

/// Least-squares fit of log y against log x over points with x, y > 0.
inline SlopeFit slope_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ConfigError("slope_fit: x and y differ in length");
  std::vector<double> lx;
  std::vector<double> ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > 0.0 && y[i] > 0.0 && std::isfinite(x[i]) && std::isfinite(y[i])) {
      lx.push_back(std::log(x[i]));
      ly.push_back(std::log(y[i]));
    }
  }
  if (lx.size() < 3) throw InsufficientData("slope_fit: fewer than 3 positive points");
  const double n = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx == 0.0) throw InsufficientData("slope_fit: all abscissae coincide");
  SlopeFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  f.points = lx.size();
  return f;
}

struct RatePoint {
  double abscissa = 0.0;
  double ordinate = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;
};

/// A fitted rate: ordinate versus abscissa (delta or t_n) on log-log axes,
/// with an optional analytic bound per point.
struct RateReport {
  std::string abscissa_name;
  std::string ordinate_name;
  std::vector<RatePoint> points;
  std::optional<SlopeFit> fit;       // all points
  std::optional<SlopeFit> tail_fit;  // second half of the points
  bool fits_disagree = false;

  void refit(double disagreement = 0.25) {
    std::vector<double> x, y;
    for (const auto& p : points) {
      x.push_back(p.abscissa);
      y.push_back(p.ordinate);
    }
    try {
      fit = slope_fit(x, y);
    } catch (const InsufficientData&) {
      fit.reset();
    }
    // delta sweeps list decreasing delta, so the second half is the small-delta end
    const std::size_t half = x.size() / 2;
    std::vector<double> tx(x.begin() + static_cast<std::ptrdiff_t>(half), x.end());
    std::vector<double> ty(y.begin() + static_cast<std::ptrdiff_t>(half), y.end());
    try {
      tail_fit = slope_fit(tx, ty);
    } catch (const InsufficientData&) {
      tail_fit.reset();
    }
    fits_disagree = fit && tail_fit && std::abs(fit->slope - tail_fit->slope) > disagreement;
  }
};

}  // namespace almreg
