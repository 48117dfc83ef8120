#pragma once

// Stopping rules for the outer iteration: the discrepancy principle,
// a-priori index choices and fixed step counts, plus the scalar utilities
// used when analysing them.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "almreg/error.hpp"

namespace almreg {

namespace rule {

/// Stop at the first n with |K u_n - g_delta| < rho * delta.
struct Morozov {
  double rho = 1.6404;
  double delta = 0.0;
};

/// Stop at n = index_fn(delta).
struct APriori {
  std::function<std::size_t(double)> index_fn;
  double delta = 0.0;
};

struct Fixed {
  std::size_t steps = 1;
};

}  // namespace rule

struct StoppingRule {
  std::variant<rule::Morozov, rule::APriori, rule::Fixed> kind;

  static StoppingRule morozov(double rho, double delta) {
    if (!(rho > 1.0)) throw ConfigError("morozov rule: rho must be > 1");
    if (!(delta >= 0.0)) throw ConfigError("morozov rule: delta must be >= 0");
    return {rule::Morozov{rho, delta}};
  }
  static StoppingRule a_priori(std::function<std::size_t(double)> index_fn, double delta) {
    if (!index_fn) throw ConfigError("a-priori rule: missing index function");
    return {rule::APriori{std::move(index_fn), delta}};
  }
  static StoppingRule fixed(std::size_t steps) {
    if (steps < 1) throw ConfigError("fixed rule: need at least one step");
    return {rule::Fixed{steps}};
  }
};

/// Smallest 1-based n with residuals[n-1] < rho * delta, or nullopt.
inline std::optional<std::size_t> morozov_index(const std::vector<double>& residuals, double rho,
                                                double delta) {
  if (!(rho > 1.0)) throw ConfigError("morozov_index: rho must be > 1");
  if (!(delta > 0.0)) throw ConfigError("morozov_index: delta must be > 0");
  const double threshold = rho * delta;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    if (residuals[i] < threshold) return i + 1;
  }
  return std::nullopt;
}

/// f(rho) = rho (sqrt(rho) + 1) / sqrt(rho - 1), the constant in the
/// discrepancy-principle error estimate.
inline double f_rho(double rho) {
  if (!(rho > 1.0)) throw DomainError("f_rho: rho must be > 1");
  return rho * (std::sqrt(rho) + 1.0) / std::sqrt(rho - 1.0);
}

struct OptimalRho {
  double rho = 0.0;
  double f = 0.0;
};

/// Minimiser of f_rho on (1, 10] by golden-section search.
inline OptimalRho optimal_rho(double tol = 1e-8) {
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 1.0 + 1e-9;
  double b = 10.0;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = f_rho(c);
  double fd = f_rho(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = f_rho(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = f_rho(d);
    }
  }
  const double rho = 0.5 * (a + b);
  return {rho, f_rho(rho)};
}

struct AuxInfimum {
  double value = 0.0;
  double gamma_star = 0.0;
};

/// inf_{γ>1} (γ/(γ-1)) a + (γ²/(γ-1)) b = (sqrt(b) + sqrt(a+b))², attained at
/// γ* = 1 + sqrt(1 + a/b).
inline AuxInfimum auxlem_infimum(double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw DomainError("auxlem_infimum: a and b must be positive");
  const double s = std::sqrt(b) + std::sqrt(a + b);
  return {s * s, 1.0 + std::sqrt(1.0 + a / b)};
}

// ---------------------------------------------------------------------------
// Empirical admissibility of a-priori rules along a finite delta sequence

enum class Trend { decreasing, increasing, constant, mixed };

inline std::string to_string(Trend t) {
  switch (t) {
    case Trend::decreasing: return "decreasing";
    case Trend::increasing: return "increasing";
    case Trend::constant: return "constant";
    case Trend::mixed: return "mixed";
  }
  return "mixed";
}

/// Classifies the monotone trend of a sequence (relative tolerance rtol).
inline Trend classify_trend(const std::vector<double>& v, double rtol = 1e-9) {
  if (v.size() < 2) return Trend::constant;
  bool up = false;
  bool down = false;
  for (std::size_t i = 1; i < v.size(); ++i) {
    const double scale = std::max({1e-300, std::abs(v[i]), std::abs(v[i - 1])});
    const double diff = (v[i] - v[i - 1]) / scale;
    if (diff > rtol) up = true;
    if (diff < -rtol) down = true;
  }
  if (up && down) return Trend::mixed;
  if (up) return Trend::increasing;
  if (down) return Trend::decreasing;
  return Trend::constant;
}

struct AdmissibilityReport {
  std::vector<double> deltas;
  std::vector<std::size_t> indices;
  std::vector<double> t;
  std::vector<double> delta2_t;
  std::vector<double> delta_t;
  Trend delta2_t_trend = Trend::mixed;
  Trend t_trend = Trend::mixed;
  Trend delta_t_trend = Trend::mixed;
  bool satisfies_weak = false;    // delta² t -> 0 and t -> inf
  bool satisfies_strong = false;  // delta t bounded
};

/// Evaluates delta² t_Γ, t_Γ and delta t_Γ along `deltas` for the index rule
/// `index_fn` and step sizes `tau_of(n)` (1-based). Trends are judged on the
/// second half of the sequence.
inline AdmissibilityReport apriori_admissible(const std::function<double(std::size_t)>& tau_of,
                                              const std::function<std::size_t(double)>& index_fn,
                                              const std::vector<double>& deltas) {
  if (deltas.size() < 2) throw InsufficientData("apriori_admissible: need at least two deltas");
  for (std::size_t i = 1; i < deltas.size(); ++i) {
    if (!(deltas[i] < deltas[i - 1]) || !(deltas[i] > 0.0)) {
      throw ConfigError("apriori_admissible: deltas must be positive and strictly decreasing");
    }
  }
  AdmissibilityReport rep;
  rep.deltas = deltas;
  for (double d : deltas) {
    const std::size_t n = index_fn(d);
    double t = 0.0;
    for (std::size_t k = 1; k <= n; ++k) t += tau_of(k);
    rep.indices.push_back(n);
    rep.t.push_back(t);
    rep.delta2_t.push_back(d * d * t);
    rep.delta_t.push_back(d * t);
  }
  const std::size_t half = deltas.size() / 2;
  auto tail = [half](const std::vector<double>& v) {
    return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(half), v.end());
  };
  rep.delta2_t_trend = classify_trend(tail(rep.delta2_t));
  rep.t_trend = classify_trend(tail(rep.t));
  rep.delta_t_trend = classify_trend(tail(rep.delta_t));

  // t_Γ must grow; plateaus from integer indices are allowed
  bool t_nondecreasing = true;
  for (std::size_t i = half + 1; i < rep.t.size(); ++i)
    if (rep.t[i] < rep.t[i - 1]) t_nondecreasing = false;
  rep.satisfies_weak = rep.delta2_t_trend == Trend::decreasing && t_nondecreasing &&
                       rep.t.back() > rep.t[half];
  rep.satisfies_strong =
      rep.delta_t_trend == Trend::decreasing || rep.delta_t_trend == Trend::constant;
  return rep;
}

// ---------------------------------------------------------------------------
// Degenerate stopping indices over a delta sweep

struct SweepRecord {
  std::vector<double> deltas;
  std::vector<std::size_t> gamma_indices;
  std::vector<double> t_values;
};

struct DegeneracyReport {
  std::optional<std::size_t> constant_index;  // N when the tail is constant
  Trend trend = Trend::mixed;
};

/// Looks at the last `window` stopping indices: if all equal N, the sweep is
/// flagged degenerate with limit N.
inline DegeneracyReport degenerate_detect(const std::vector<std::size_t>& gamma_indices,
                                          std::size_t window = 4) {
  if (window < 3) throw ConfigError("degenerate_detect: window must be >= 3");
  DegeneracyReport rep;
  if (gamma_indices.size() < window) {
    rep.trend = Trend::mixed;
    return rep;
  }
  const auto first = gamma_indices.end() - static_cast<std::ptrdiff_t>(window);
  std::vector<double> tail(first, gamma_indices.end());
  bool strictly_up = true;
  bool all_equal = true;
  for (std::size_t i = 1; i < tail.size(); ++i) {
    if (!(tail[i] > tail[i - 1])) strictly_up = false;
    if (tail[i] != tail[0]) all_equal = false;
  }
  if (all_equal) {
    rep.constant_index = static_cast<std::size_t>(tail[0]);
    rep.trend = Trend::constant;
  } else if (strictly_up) {
    rep.trend = Trend::increasing;
  } else {
    rep.trend = classify_trend(tail) == Trend::decreasing ? Trend::decreasing : Trend::mixed;
  }
  return rep;
}

}  // namespace almreg
