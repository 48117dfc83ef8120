#pragma once

// Convex penalties J: quadratic ½|Lu|², the lq family Σ|u_k|^q with
// q in [1, 2], and discrete total variation on a grid.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <variant>

#include "almreg/error.hpp"
#include "almreg/linop.hpp"

namespace almreg {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class TvFlavor { anisotropic, isotropic };

struct QuadraticPenalty {
  LinearOperator L;
};

struct LqPenalty {
  double q = 1.0;
  /// Conjugate exponent q/(q-1); infinite for q == 1.
  [[nodiscard]] double r() const { return q > 1.0 ? q / (q - 1.0) : kInf; }
};

struct TvPenalty {
  GridShape grid;
  TvFlavor flavor = TvFlavor::anisotropic;
};

class Penalty {
 public:
  using Variant = std::variant<QuadraticPenalty, LqPenalty, TvPenalty>;

  static Penalty quadratic(LinearOperator L) {
    if (L.dim_in() <= 0) throw ConfigError("quadratic penalty: empty operator");
    return Penalty(QuadraticPenalty{std::move(L)});
  }
  static Penalty quadratic_identity(Index n) { return quadratic(identity_operator(n)); }

  static Penalty lq(double q) {
    if (!(q >= 1.0 && q <= 2.0)) {
      throw ConfigError("lq penalty: q must lie in [1, 2], got " + std::to_string(q));
    }
    return Penalty(LqPenalty{q});
  }

  static Penalty tv(GridShape grid, TvFlavor flavor = TvFlavor::anisotropic) {
    if (grid.rows <= 0 || grid.cols <= 0) throw ConfigError("tv penalty: bad grid");
    return Penalty(TvPenalty{grid, flavor});
  }

  [[nodiscard]] const Variant& kind() const { return kind_; }
  [[nodiscard]] const QuadraticPenalty* as_quadratic() const {
    return std::get_if<QuadraticPenalty>(&kind_);
  }
  [[nodiscard]] const LqPenalty* as_lq() const { return std::get_if<LqPenalty>(&kind_); }
  [[nodiscard]] const TvPenalty* as_tv() const { return std::get_if<TvPenalty>(&kind_); }

  [[nodiscard]] bool is_l1() const {
    const auto* p = as_lq();
    return p != nullptr && p->q == 1.0;
  }

  /// Required length of u, or nullopt when any length is accepted (lq).
  [[nodiscard]] std::optional<Index> domain_dim() const {
    if (const auto* p = as_quadratic()) return p->L.dim_in();
    if (const auto* p = as_tv()) return p->grid.size();
    return std::nullopt;
  }

  [[nodiscard]] std::string name() const {
    if (as_quadratic()) return "quadratic";
    if (const auto* p = as_lq()) return p->q == 1.0 ? "l1" : "lq";
    return "tv";
  }

 private:
  explicit Penalty(Variant v) : kind_(std::move(v)) {}
  Variant kind_;
};

inline void check_domain(const Penalty& p, const Vector& u, const char* what) {
  if (auto d = p.domain_dim(); d && *d != u.size()) {
    throw ConfigError(std::string(what) + ": penalty expects length " + std::to_string(*d) +
                      ", got " + std::to_string(u.size()));
  }
}

// ---------------------------------------------------------------------------
// Discrete gradient on a grid: forward differences with Neumann boundary.
// Output layout is [vertical differences (N) | horizontal differences (N)];
// the last row of the vertical block and last column of the horizontal block
// are identically zero.

inline Vector grid_gradient(const Vector& u, GridShape g) {
  const Index n = g.size();
  Vector out = Vector::Zero(2 * n);
  for (Index i = 0; i < g.rows; ++i) {
    for (Index j = 0; j < g.cols; ++j) {
      const Index k = i * g.cols + j;
      if (i + 1 < g.rows) out[k] = u[k + g.cols] - u[k];
      if (j + 1 < g.cols) out[n + k] = u[k + 1] - u[k];
    }
  }
  return out;
}

/// Exact transpose of grid_gradient (i.e. minus the discrete divergence).
inline Vector grid_gradient_adjoint(const Vector& y, GridShape g) {
  const Index n = g.size();
  Vector x = Vector::Zero(n);
  for (Index i = 0; i < g.rows; ++i) {
    for (Index j = 0; j < g.cols; ++j) {
      const Index k = i * g.cols + j;
      if (i + 1 < g.rows) {
        x[k + g.cols] += y[k];
        x[k] -= y[k];
      }
      if (j + 1 < g.cols) {
        x[k + 1] += y[n + k];
        x[k] -= y[n + k];
      }
    }
  }
  return x;
}

inline LinearOperator grid_gradient_operator(GridShape g) {
  const double bound = g.is_1d() ? 2.0 : std::sqrt(8.0);
  return {g.size(), 2 * g.size(), [g](const Vector& u) { return grid_gradient(u, g); },
          [g](const Vector& y) { return grid_gradient_adjoint(y, g); },
          LinearOperator::Kind::custom, bound};
}

inline double tv_value(const Vector& u, GridShape g, TvFlavor flavor) {
  const Vector d = grid_gradient(u, g);
  const Index n = g.size();
  if (flavor == TvFlavor::anisotropic) return d.cwiseAbs().sum();
  double s = 0.0;
  for (Index k = 0; k < n; ++k) s += std::hypot(d[k], d[n + k]);
  return s;
}

/// Projects a gradient-shaped dual field onto the TV dual unit ball in place.
inline void project_tv_dual_ball(Vector& y, Index n, TvFlavor flavor) {
  if (flavor == TvFlavor::anisotropic) {
    y = y.cwiseMax(-1.0).cwiseMin(1.0);
    return;
  }
  for (Index k = 0; k < n; ++k) {
    const double m = std::hypot(y[k], y[n + k]);
    if (m > 1.0) {
      y[k] /= m;
      y[n + k] /= m;
    }
  }
}

// ---------------------------------------------------------------------------
// Evaluation, conjugates, Bregman distances

inline double penalty_eval(const Penalty& p, const Vector& u) {
  check_domain(p, u, "penalty_eval");
  if (const auto* quad = p.as_quadratic()) {
    return 0.5 * quad->L.apply(u).squaredNorm();
  }
  if (const auto* lq = p.as_lq()) {
    if (lq->q == 1.0) return u.cwiseAbs().sum();
    if (lq->q == 2.0) return u.squaredNorm();
    return u.cwiseAbs().array().pow(lq->q).sum();
  }
  const auto* tv = p.as_tv();
  return tv_value(u, tv->grid, tv->flavor);
}

/// Legendre-Fenchel conjugate J*(xi). Returns nullopt when no closed form is
/// available (tv, quadratic with L != identity) and +inf outside the domain.
/// `ball_tol` widens the l1 dual ball |xi|_inf <= 1 to absorb round-off.
inline std::optional<double> conjugate_eval(const Penalty& p, const Vector& xi,
                                            double ball_tol = 0.0) {
  check_domain(p, xi, "conjugate_eval");
  if (const auto* quad = p.as_quadratic()) {
    if (!quad->L.is_identity()) return std::nullopt;
    return 0.5 * xi.squaredNorm();
  }
  if (const auto* lq = p.as_lq()) {
    if (lq->q == 1.0) {
      if (xi.size() == 0) return 0.0;
      return xi.cwiseAbs().maxCoeff() <= 1.0 + ball_tol ? 0.0 : kInf;
    }
    // sup_t (x t - |t|^q) = (q-1) (|x|/q)^r for J = Σ|u_k|^q (no 1/q factor)
    const double q = lq->q;
    const double r = lq->r();
    return (q - 1.0) * (xi.cwiseAbs().array() / q).pow(r).sum();
  }
  return std::nullopt;
}

/// Fenchel gap J(u) + J*(xi) - <xi, u> >= 0, zero iff xi ∈ ∂J(u).
///
/// For l1 the conjugate is an indicator, so xi is first pulled radially into
/// the dual ball and the excess |xi|_inf - 1 is added to the gap; the result
/// stays finite and still vanishes exactly on the subdifferential graph.
inline std::optional<double> fenchel_gap(const Penalty& p, const Vector& u, const Vector& xi) {
  check_domain(p, u, "fenchel_gap");
  if (u.size() != xi.size()) throw ConfigError("fenchel_gap: u and xi differ in length");
  if (p.is_l1()) {
    const double m = xi.size() ? xi.cwiseAbs().maxCoeff() : 0.0;
    const double scale = std::max(1.0, m);
    return u.cwiseAbs().sum() - xi.dot(u) / scale + (scale - 1.0);
  }
  auto conj = conjugate_eval(p, xi);
  if (!conj) return std::nullopt;
  return penalty_eval(p, u) + *conj - xi.dot(u);
}

/// D_J(v, u) = J(v) - J(u) - <xi, v - u> with xi ∈ ∂J(u).
inline double bregman(const Penalty& p, const Vector& v, const Vector& u, const Vector& xi,
                      double tol = 1e-10) {
  check_domain(p, v, "bregman");
  check_domain(p, u, "bregman");
  if (v.size() != u.size() || xi.size() != u.size()) {
    throw ConfigError("bregman: length mismatch");
  }
  const double d = penalty_eval(p, v) - penalty_eval(p, u) - xi.dot(v - u);
  if (d < -tol) {
    throw InvalidSubgradient("bregman distance " + std::to_string(d) +
                             " is negative: xi is not a subgradient at u");
  }
  return d;
}

/// <eta - xi, v - u> with xi ∈ ∂J(u), eta ∈ ∂J(v).
inline double symmetric_bregman(const Penalty& p, const Vector& v, const Vector& u,
                                const Vector& xi, const Vector& eta, double tol = 1e-10) {
  check_domain(p, v, "symmetric_bregman");
  if (v.size() != u.size() || xi.size() != u.size() || eta.size() != u.size()) {
    throw ConfigError("symmetric_bregman: length mismatch");
  }
  const double d = (eta - xi).dot(v - u);
  if (d < -tol) {
    throw InvalidSubgradient("symmetric bregman distance " + std::to_string(d) +
                             " is negative: invalid subgradient pair");
  }
  return d;
}

// ---------------------------------------------------------------------------
// Scalar proximal map of λ|x|^q

/// argmin_x ½(x - z)² + λ|x|^q for q in [1, 2].
inline double prox_scalar_power(double z, double lambda, double q) {
  if (!(lambda > 0.0)) throw DomainError("prox_scalar_power: lambda must be positive");
  if (!(q >= 1.0 && q <= 2.0)) throw DomainError("prox_scalar_power: q must lie in [1, 2]");
  const double a = std::abs(z);
  const double sign = z < 0.0 ? -1.0 : 1.0;
  if (q == 1.0) return sign * std::max(a - lambda, 0.0);
  if (q == 2.0) return z / (1.0 + 2.0 * lambda);
  if (a == 0.0) return 0.0;

  // h(x) = x + λq x^{q-1} - |z| is increasing on [0, |z|], h(0) < 0 < h(|z|)
  auto h = [&](double x) { return x + lambda * q * std::pow(x, q - 1.0) - a; };
  double lo = 0.0;
  double hi = a;
  for (int it = 0; it < 200 && hi - lo > 1e-12 * std::max(1.0, a); ++it) {
    const double mid = 0.5 * (lo + hi);
    (h(mid) < 0.0 ? lo : hi) = mid;
  }
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 3 && x > 0.0; ++it) {
    const double dh = 1.0 + lambda * q * (q - 1.0) * std::pow(x, q - 2.0);
    const double next = x - h(x) / dh;
    if (!(next >= lo && next <= hi)) break;
    x = next;
  }
  return sign * x;
}

/// Coordinate-wise prox of λ Σ|u_k|^q.
inline Vector prox_power(const Vector& z, double lambda, double q) {
  Vector out(z.size());
  for (Index k = 0; k < z.size(); ++k) out[k] = prox_scalar_power(z[k], lambda, q);
  return out;
}

}  // namespace almreg
