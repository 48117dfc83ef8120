#pragma once

// Synthetic problems with certified source elements, exact-norm noise,
// delta sweeps with rate fits, and noise-free runs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "almreg/alm.hpp"
#include "almreg/certify.hpp"
#include "almreg/error.hpp"
#include "almreg/linop.hpp"
#include "almreg/penalty.hpp"
#include "almreg/stopping.hpp"
#include "almreg/subproblem.hpp"

namespace almreg {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct ProblemInstance {
  OperatorSpec K_spec;
  LinearOperator K;
  Penalty penalty;
  Vector g;
  Vector u_dagger;
  std::optional<Vector> p_dagger;
  std::optional<SourceCertificate> certificate;
  std::uint64_t seed = 0;
  std::string label;

  [[nodiscard]] bool certified() const { return certificate && certificate->certified; }
};

/// Builds K from its spec, sets g = K u†, and certifies p† when given.
inline ProblemInstance make_instance(OperatorSpec spec, Penalty pen, Vector u_dagger,
                                     std::optional<Vector> p_dagger, std::uint64_t seed,
                                     std::string label) {
  LinearOperator K = with_estimated_norm(build_operator(spec));
  check_domain(pen, u_dagger, "make_instance");
  if (u_dagger.size() != K.dim_in()) throw ConfigError("make_instance: u_dagger does not match K");
  Vector g = K.apply(u_dagger);
  std::optional<SourceCertificate> cert;
  if (p_dagger) cert = certify_source_condition(K, pen, u_dagger, *p_dagger, g);
  return {std::move(spec), std::move(K), std::move(pen),   std::move(g),
          std::move(u_dagger), std::move(p_dagger), std::move(cert), seed,
          std::move(label)};
}

// ---------------------------------------------------------------------------
// Generators

inline Matrix unit_norm_gaussian(Index m, Index n, std::mt19937_64& rng) {
  Matrix a = gaussian_matrix(m, n, rng);
  const Eigen::JacobiSVD<Matrix> svd(a);
  return a / svd.singularValues()[0];
}

/// J = ½|u|²: u† = K* p† makes the source condition exact.
inline ProblemInstance gen_problem_quadratic(Index m, Index n, std::uint64_t seed) {
  if (m < 1 || n < 1) throw ConfigError("gen_problem_quadratic: m and n must be >= 1");
  std::mt19937_64 rng(seed);
  Matrix a = unit_norm_gaussian(m, n, rng);
  Vector p = gaussian_vector(m, rng);
  Vector u = a.transpose() * p;
  return make_instance({opspec::Dense{std::move(a)}}, Penalty::quadratic_identity(n), std::move(u),
                       std::move(p), seed, "quadratic");
}

/// Quadratic instance for a given operator and dual element.
inline ProblemInstance quadratic_instance(OperatorSpec spec, const Vector& p_dagger,
                                          std::uint64_t seed = 0) {
  const LinearOperator K = build_operator(spec);
  Vector u = K.adjoint_apply(p_dagger);
  const Index n = K.dim_in();
  return make_instance(std::move(spec), Penalty::quadratic_identity(n), std::move(u), p_dagger,
                       seed, "quadratic");
}

struct SparseOptions {
  int max_resample = 200;
  double theta_max = 1.0 - 1e-3;
  double magnitude_min = 1.0;
  double magnitude_max = 2.0;
  bool log_uniform = false;  // magnitudes 10^U(log10 min, log10 max)
};

/// l1 instance for a given operator, support and signs: p† is the
/// least-norm solution of (K*p)_I = σ.
inline ProblemInstance sparse_instance(OperatorSpec spec, const std::vector<Index>& support,
                                       const Vector& signs, const Vector& magnitudes,
                                       std::uint64_t seed = 0) {
  const LinearOperator K = build_operator(spec);
  const auto s = static_cast<Index>(support.size());
  if (signs.size() != s || magnitudes.size() != s) {
    throw ConfigError("sparse_instance: support, signs and magnitudes differ in length");
  }
  Matrix ki(K.dim_out(), s);
  Vector e = Vector::Zero(K.dim_in());
  for (Index j = 0; j < s; ++j) {
    const Index col = support[static_cast<std::size_t>(j)];
    if (col < 0 || col >= K.dim_in()) throw ConfigError("sparse_instance: support out of range");
    e[col] = 1.0;
    ki.col(j) = K.apply(e);
    e[col] = 0.0;
  }
  const Matrix gram = ki.transpose() * ki;
  const Eigen::LDLT<Matrix> ldlt(gram);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw RestrictedInjectivityFailure("sparse_instance: K restricted to the support is singular");
  }
  Vector p = ki * ldlt.solve(signs);
  Vector u = Vector::Zero(K.dim_in());
  for (Index j = 0; j < s; ++j) u[support[static_cast<std::size_t>(j)]] = signs[j] * magnitudes[j];
  return make_instance(std::move(spec), Penalty::lq(1.0), std::move(u), std::move(p), seed, "l1");
}

/// Gaussian K with unit columns, random support and signs, dual certificate
/// by least squares; resampled until the off-support maximum θ is below
/// theta_max.
inline ProblemInstance gen_problem_sparse(Index m, Index n, Index s, std::uint64_t seed,
                                          const SparseOptions& opt = {}) {
  if (!(s >= 1 && s <= m && m <= n)) throw ConfigError("gen_problem_sparse: need 1 <= s <= m <= n");
  if (!(opt.magnitude_min > 0.0 && opt.magnitude_max >= opt.magnitude_min)) {
    throw ConfigError("gen_problem_sparse: bad magnitude range");
  }
  std::mt19937_64 rng(seed);
  double best_theta = kInf;
  for (int attempt = 0; attempt <= opt.max_resample; ++attempt) {
    Matrix a = gaussian_matrix(m, n, rng);
    for (Index j = 0; j < n; ++j) a.col(j).normalize();
    std::vector<Index> cols(static_cast<std::size_t>(n));
    std::iota(cols.begin(), cols.end(), Index{0});
    for (Index i = 0; i < s; ++i) {
      std::uniform_int_distribution<Index> pick(i, n - 1);
      std::swap(cols[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(pick(rng))]);
    }
    std::vector<Index> support(cols.begin(), cols.begin() + s);
    std::sort(support.begin(), support.end());
    Vector signs(s);
    Vector mags(s);
    std::bernoulli_distribution coin(0.5);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (Index j = 0; j < s; ++j) {
      signs[j] = coin(rng) ? 1.0 : -1.0;
      const double x = unif(rng);
      mags[j] = opt.log_uniform
                    ? std::pow(10.0, std::log10(opt.magnitude_min) +
                                         x * (std::log10(opt.magnitude_max) -
                                              std::log10(opt.magnitude_min)))
                    : opt.magnitude_min + x * (opt.magnitude_max - opt.magnitude_min);
    }
    try {
      ProblemInstance inst = sparse_instance({opspec::Dense{std::move(a)}}, support, signs, mags, seed);
      const double theta = inst.certificate->theta.value_or(kInf);
      best_theta = std::min(best_theta, theta);
      if (inst.certified() && theta < opt.theta_max) return inst;
    } catch (const RestrictedInjectivityFailure&) {
      // resample
    }
  }
  throw GenerationFailure("gen_problem_sparse: no certificate with theta < " +
                          std::to_string(opt.theta_max) + " after " +
                          std::to_string(opt.max_resample) + " resamples (best theta " +
                          std::to_string(best_theta) + ")");
}

/// J = Σ|u_k|^q with q in (1, 2]: draw p†, invert ξ = q sign(u)|u|^{q-1}.
inline ProblemInstance gen_problem_lq(Index m, Index n, double q, std::uint64_t seed) {
  if (m < 1 || n < 1) throw ConfigError("gen_problem_lq: m and n must be >= 1");
  if (!(q > 1.0 && q <= 2.0)) throw ConfigError("gen_problem_lq: q must lie in (1, 2]");
  std::mt19937_64 rng(seed);
  Matrix a = unit_norm_gaussian(m, n, rng);
  Vector p = gaussian_vector(m, rng);
  const Vector xi = a.transpose() * p;
  Vector u(n);
  for (Index k = 0; k < n; ++k) {
    const double sgn = xi[k] < 0.0 ? -1.0 : 1.0;
    u[k] = sgn * std::pow(std::abs(xi[k]) / q, 1.0 / (q - 1.0));
  }
  return make_instance({opspec::Dense{std::move(a)}}, Penalty::lq(q), std::move(u), std::move(p),
                       seed, "lq");
}

enum class TvKind { staircase_1d, blocks_2d };
enum class BlurKind { identity, blur };

/// Default blur kernels: well conditioned on the grid so that K* p = ξ is
/// solvable.
inline Matrix default_blur_kernel(GridShape grid) {
  if (grid.is_1d()) {
    Matrix k(3, 1);
    k << 0.15, 0.7, 0.15;
    if (grid.rows == 1) k.transposeInPlace();
    return k;
  }
  Matrix k(3, 3);
  k << 0.05, 0.1, 0.05, 0.1, 0.4, 0.1, 0.05, 0.1, 0.05;
  return k;
}

namespace detail {

/// Edge field z (length N-1) for a 1-D staircase: ±1 at each jump, 0 at the
/// boundary and midway between jumps, linear in between. ξ = D^T z.
inline Vector staircase_dual(const Vector& u, double tol = 0.0) {
  const Index n = u.size();
  std::vector<std::pair<double, double>> knots{{-1.0, 0.0}};
  std::vector<Index> jumps;
  for (Index k = 0; k + 1 < n; ++k) {
    if (std::abs(u[k + 1] - u[k]) > tol) jumps.push_back(k);
  }
  for (std::size_t j = 0; j < jumps.size(); ++j) {
    const auto e = static_cast<double>(jumps[j]);
    if (j > 0) knots.emplace_back(0.5 * (static_cast<double>(jumps[j - 1]) + e), 0.0);
    knots.emplace_back(e, u[jumps[j] + 1] > u[jumps[j]] ? 1.0 : -1.0);
  }
  knots.emplace_back(static_cast<double>(n - 1), 0.0);
  Vector z = Vector::Zero(std::max<Index>(n - 1, 0));
  std::size_t seg = 0;
  for (Index k = 0; k + 1 < n; ++k) {
    const auto x = static_cast<double>(k);
    while (seg + 1 < knots.size() && knots[seg + 1].first < x) ++seg;
    const auto [x0, z0] = knots[seg];
    const auto [x1, z1] = knots[seg + 1];
    z[k] = x1 == x0 ? z1 : z0 + (z1 - z0) * (x - x0) / (x1 - x0);
  }
  Vector xi = Vector::Zero(n);
  for (Index k = 0; k + 1 < n; ++k) {
    xi[k] -= z[k];
    xi[k + 1] += z[k];
  }
  return xi;
}

}  // namespace detail

/// Piecewise-constant u†. The 1-D staircase carries an explicit certificate;
/// 2-D blocks ship uncertified.
inline ProblemInstance gen_problem_tv(GridShape grid, TvKind kind, BlurKind k_kind,
                                      std::uint64_t seed) {
  if (grid.rows < 1 || grid.cols < 1) throw ConfigError("gen_problem_tv: bad grid");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> height(0.5, 1.5);
  std::bernoulli_distribution coin(0.5);
  const Index n = grid.size();
  OperatorSpec spec = k_kind == BlurKind::identity
                          ? OperatorSpec{opspec::Identity{n}}
                          : OperatorSpec{opspec::Convolution{default_blur_kernel(grid), grid}};
  const Penalty pen = Penalty::tv(grid, TvFlavor::anisotropic);

  if (kind == TvKind::staircase_1d) {
    if (!grid.is_1d() || n < 4) throw ConfigError("gen_problem_tv: staircase needs a 1-D grid of length >= 4");
    const Index jumps = std::clamp<Index>(n / 16, 1, 4);
    Vector u = Vector::Zero(n);
    double level = 0.0;
    Index start = 0;
    for (Index j = 0; j <= jumps; ++j) {
      const Index end = j == jumps ? n : n * (j + 1) / (jumps + 1);
      for (Index k = start; k < end; ++k) u[k] = level;
      level += (coin(rng) ? 1.0 : -1.0) * height(rng);
      start = end;
    }
    const Vector xi = detail::staircase_dual(u);
    const LinearOperator K = build_operator(spec);
    Vector p;
    if (k_kind == BlurKind::identity) {
      p = xi;
    } else {
      // K* p = ξ through K K* p = K ξ
      p = Vector::Zero(n);
      conjugate_gradient([&](const Vector& x) { return K.apply(K.adjoint_apply(x)); }, K.apply(xi),
                         p, 1e-14, 5000);
      if ((K.adjoint_apply(p) - xi).norm() > 1e-10 * std::max(1.0, xi.norm())) {
        ProblemInstance inst = make_instance(spec, pen, u, std::nullopt, seed, "tv_staircase_1d");
        return inst;
      }
    }
    return make_instance(std::move(spec), pen, std::move(u), std::move(p), seed, "tv_staircase_1d");
  }

  // two overlapping rectangles on a zero background
  Vector u = Vector::Zero(n);
  for (int b = 0; b < 2; ++b) {
    std::uniform_int_distribution<Index> r0(0, std::max<Index>(grid.rows / 2 - 1, 0));
    std::uniform_int_distribution<Index> c0(0, std::max<Index>(grid.cols / 2 - 1, 0));
    const Index i0 = r0(rng);
    const Index j0 = c0(rng);
    const Index i1 = std::min(grid.rows, i0 + std::max<Index>(grid.rows / 3, 1));
    const Index j1 = std::min(grid.cols, j0 + std::max<Index>(grid.cols / 3, 1));
    const double v = (coin(rng) ? 1.0 : -1.0) * height(rng);
    for (Index i = i0; i < i1; ++i)
      for (Index j = j0; j < j1; ++j) u[i * grid.cols + j] += v;
  }
  return make_instance(std::move(spec), pen, std::move(u), std::nullopt, seed, "tv_blocks_2d");
}

// ---------------------------------------------------------------------------
// Noise

struct NoisyData {
  Vector g_delta;
  double delta = 0.0;
  std::uint64_t seed = 0;
};

/// g + δ e/|e| for Gaussian e; the direction depends on the seed only.
inline NoisyData add_noise(const Vector& g, double delta, std::uint64_t seed) {
  if (!(delta > 0.0) || !std::isfinite(delta)) throw ConfigError("add_noise: delta must be positive");
  if (g.size() == 0) throw ConfigError("add_noise: empty data");
  for (std::uint64_t s = seed;; ++s) {
    std::mt19937_64 rng(s);
    Vector e = gaussian_vector(g.size(), rng);
    const double ne = e.norm();
    if (ne > 0.0 && std::isfinite(ne)) return {g + (delta / ne) * e, delta, s};
  }
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepConfig {
  double delta0 = 0.1;
  double factor = 0.5;
  int count = 8;
  double rho = 1.6404;
  StepSchedule schedule = StepSchedule::constant(1.0);
  AlmCaps caps;
  std::optional<Vector> p0;
  std::uint64_t noise_seed = 1;
  bool fixed_direction = false;  // same noise direction at every delta
  bool parallel = true;
  bool keep_trajectories = false;
  ErrorBoundOptions bounds;
  /// Stopping rule per delta; the discrepancy principle with `rho` when empty.
  std::function<StoppingRule(double)> rule;

  [[nodiscard]] std::vector<double> deltas() const {
    if (!(delta0 > 0.0)) throw ConfigError("sweep: delta0 must be positive");
    if (!(factor > 0.0 && factor < 1.0)) throw ConfigError("sweep: factor must lie in (0, 1)");
    if (count < 1) throw ConfigError("sweep: count must be >= 1");
    if (!(rho > 1.0)) throw ConfigError("sweep: rho must be > 1");
    std::vector<double> d;
    for (int k = 0; k < count; ++k) d.push_back(delta0 * std::pow(factor, k));
    return d;
  }
};

struct RunRecord {
  std::size_t k = 0;
  double delta = 0.0;
  std::uint64_t noise_seed = 0;
  std::optional<std::size_t> gamma;
  bool unstopped = false;
  double t_gamma = kNaN;
  double residual = kNaN;       // |K u_Γ - g_delta|
  double residual_prev = kNaN;  // |K u_{Γ-1} - g_delta|, NaN when Γ = 1
  double d_sym = kNaN;
  double l1_error = kNaN;
  double l2_error = kNaN;
  double lq_error = kNaN;    // |u_Γ - u†|_q
  double dual_error = kNaN;  // |K*p_Γ - K*p†|_r
  double strict_d = kNaN;
  double strict_d_tilde = kNaN;
  double penalty_value = kNaN;
  double penalty_target = kNaN;
  int inexact_steps = 0;
  double monotonicity_violation = 0.0;
  bool bracketing_ok = false;
  std::vector<BoundCheck> bounds;  // Γ-level checks and the worst per-n check per name
  std::optional<AlmTrajectory> trajectory;  // only with SweepConfig::keep_trajectories
  Vector g_delta;                           // likewise
};

struct SweepResult {
  std::string label;
  std::string penalty;
  std::uint64_t instance_seed = 0;
  bool certified = false;
  double p_distance = kNaN;  // |p0 - p†|
  double delta0 = 0.0;
  double factor = 0.0;
  int count = 0;
  double rho = 0.0;
  double tau_bar = 0.0;
  double inner_tol = 0.0;
  std::uint64_t noise_seed = 0;
  bool fixed_direction = false;
  std::vector<RunRecord> runs;
  std::vector<RateReport> rates;
  DegeneracyReport degeneracy;
  std::vector<std::string> violations;
  std::vector<std::string> flags;

  [[nodiscard]] bool bounds_hold() const { return violations.empty(); }
  [[nodiscard]] const RateReport* rate(const std::string& ordinate) const {
    for (const auto& r : rates)
      if (r.ordinate_name == ordinate) return &r;
    return nullptr;
  }
};

namespace detail {

inline std::vector<BoundCheck> summarize_bounds(const std::vector<BoundCheck>& all) {
  std::vector<BoundCheck> out;
  for (const auto& b : all) {
    auto it = std::find_if(out.begin(), out.end(), [&](const BoundCheck& o) { return o.name == b.name; });
    if (it == out.end()) {
      out.push_back(b);
    } else if (b.slack + b.eps < it->slack + it->eps) {
      *it = b;
    }
  }
  return out;
}

inline RunRecord sweep_point(const ProblemInstance& inst, const SweepConfig& cfg, std::size_t k,
                             double delta) {
  RunRecord rec;
  rec.k = k;
  rec.delta = delta;
  const std::uint64_t seed = cfg.fixed_direction ? cfg.noise_seed : cfg.noise_seed + k;
  const NoisyData noisy = add_noise(inst.g, delta, seed);
  rec.noise_seed = noisy.seed;
  const StoppingRule stop = cfg.rule ? cfg.rule(delta) : StoppingRule::morozov(cfg.rho, delta);
  const bool discrepancy = std::holds_alternative<rule::Morozov>(stop.kind);
  const AlmTrajectory traj =
      alm_run(inst.K, noisy.g_delta, inst.penalty, cfg.schedule, cfg.p0, stop, cfg.caps);
  if (cfg.keep_trajectories) {
    rec.trajectory = traj;
    rec.g_delta = noisy.g_delta;
  }
  rec.monotonicity_violation = residual_monotonicity_violation(traj);
  for (const auto& s : traj.states) rec.inexact_steps += s.inexact ? 1 : 0;
  rec.penalty_target = penalty_eval(inst.penalty, inst.u_dagger);
  if (!traj.gamma) {
    rec.unstopped = true;
    return rec;
  }
  rec.gamma = traj.gamma;
  const AlmState& s = traj.at(*traj.gamma);
  rec.t_gamma = s.t;
  rec.residual = s.residual;
  rec.residual_prev = *traj.gamma > 1 ? traj.at(*traj.gamma - 1).residual : kNaN;
  const double thr = cfg.rho * delta;
  rec.bracketing_ok =
      !discrepancy || (s.residual < thr && (*traj.gamma == 1 || rec.residual_prev >= thr));

  const Vector err = s.u - inst.u_dagger;
  rec.l1_error = err.cwiseAbs().sum();
  rec.l2_error = err.norm();
  rec.penalty_value = penalty_eval(inst.penalty, s.u);
  if (inst.penalty.as_tv()) {
    const StrictMetrics sm = strict_metrics(s.u, inst.u_dagger, inst.K, inst.penalty);
    rec.strict_d = sm.d;
    rec.strict_d_tilde = sm.d_tilde;
  }
  if (inst.certified()) {
    const SourceCertificate& cert = *inst.certificate;
    const Vector xi = inst.K.adjoint_apply(s.p);
    rec.d_sym = (xi - cert.xi).dot(s.u - inst.u_dagger);
    if (const auto* lq = inst.penalty.as_lq(); lq && lq->q > 1.0) {
      const LqRateInputs in = lq_norm_rate_inputs(cert, s.u, xi, lq->q);
      rec.lq_error = in.primal_distance;
      rec.dual_error = in.dual_distance;
    }
    ErrorBoundOptions bo = cfg.bounds;
    bo.rho = cfg.rho;
    bo.discrepancy_stop = discrepancy;
    rec.bounds = summarize_bounds(check_error_bounds(traj, cert, inst.K, inst.penalty, inst.g, delta, bo));
  }
  return rec;
}

}  // namespace detail

/// Morozov-stopped runs at delta0 factor^k. Rate fits use stopped runs only.
inline SweepResult sweep_run(const ProblemInstance& inst, const SweepConfig& cfg) {
  const std::vector<double> deltas = cfg.deltas();
  SweepResult res;
  res.label = inst.label;
  res.penalty = inst.penalty.name();
  res.instance_seed = inst.seed;
  res.certified = inst.certified();
  const Vector p0 = cfg.p0.value_or(Vector::Zero(inst.K.dim_out()));
  if (inst.p_dagger) res.p_distance = (p0 - *inst.p_dagger).norm();
  res.delta0 = cfg.delta0;
  res.factor = cfg.factor;
  res.count = cfg.count;
  res.rho = cfg.rho;
  res.tau_bar = cfg.schedule.tau_bar();
  res.inner_tol = cfg.caps.inner_tol.value_or(default_inner_tol(inst.penalty));
  res.noise_seed = cfg.noise_seed;
  res.fixed_direction = cfg.fixed_direction;

  res.runs.resize(deltas.size());
  if (cfg.parallel && deltas.size() > 1) {
    std::vector<std::future<RunRecord>> jobs;
    for (std::size_t k = 0; k < deltas.size(); ++k) {
      jobs.push_back(std::async(std::launch::async, [&, k] {
        return detail::sweep_point(inst, cfg, k, deltas[k]);
      }));
    }
    for (std::size_t k = 0; k < jobs.size(); ++k) res.runs[k] = jobs[k].get();
  } else {
    for (std::size_t k = 0; k < deltas.size(); ++k) res.runs[k] = detail::sweep_point(inst, cfg, k, deltas[k]);
  }

  const std::size_t half = deltas.size() / 2;
  std::vector<std::size_t> gammas;
  for (const auto& r : res.runs) {
    const std::string at = " at delta=" + std::to_string(r.delta);
    if (r.unstopped) {
      res.flags.push_back("unstopped" + at);
      continue;
    }
    gammas.push_back(*r.gamma);
    if (!r.bracketing_ok) res.violations.push_back("morozov bracketing" + at);
    if (r.monotonicity_violation > 0.0) res.violations.push_back("residual monotonicity" + at);
    for (const auto& b : r.bounds) {
      if (b.holds()) continue;
      // the rough estimate is asymptotic: asserted on the small-delta half only
      if (b.name == "rough_estimate" && r.k < half) {
        res.flags.push_back("rough_estimate above bound" + at);
        continue;
      }
      res.violations.push_back(b.name + " (n=" + std::to_string(b.n) + ")" + at);
    }
    if (r.inexact_steps > 0) res.flags.push_back(std::to_string(r.inexact_steps) + " inexact inner solves" + at);
  }
  if (gammas.size() >= 3) res.degeneracy = degenerate_detect(gammas, std::min<std::size_t>(4, gammas.size()));

  auto add_rate = [&](const std::string& name, double RunRecord::*field, const std::string& bound) {
    RateReport rep;
    rep.abscissa_name = "delta";
    rep.ordinate_name = name;
    for (const auto& r : res.runs) {
      if (r.unstopped || !std::isfinite(r.*field)) continue;
      RatePoint pt{r.delta, r.*field, r.*field, kNaN, kNaN};
      for (const auto& b : r.bounds) {
        if (b.name == bound) {
          pt.rhs = b.rhs;
          pt.slack = b.rhs - pt.lhs;
        }
      }
      rep.points.push_back(pt);
    }
    if (rep.points.empty()) return;
    rep.refit();
    if (rep.fits_disagree) res.flags.push_back(name + ": full and small-delta fits disagree");
    res.rates.push_back(std::move(rep));
  };
  add_rate("d_sym", &RunRecord::d_sym, "discrepancy_estimate");
  add_rate("residual", &RunRecord::residual, "");
  if (inst.penalty.is_l1()) add_rate("l1_error", &RunRecord::l1_error, "");
  if (inst.penalty.as_quadratic()) add_rate("l2_error", &RunRecord::l2_error, "");
  if (const auto* lq = inst.penalty.as_lq(); lq && lq->q > 1.0) {
    add_rate("lq_error", &RunRecord::lq_error, "");
    add_rate("dual_error", &RunRecord::dual_error, "");
  }
  if (inst.penalty.as_tv()) {
    add_rate("strict_d", &RunRecord::strict_d, "");
    add_rate("strict_d_tilde", &RunRecord::strict_d_tilde, "");
  }
  return res;
}

// ---------------------------------------------------------------------------
// Noise-free runs

struct NoisefreeResult {
  std::vector<std::size_t> n;
  std::vector<double> t;
  std::vector<double> error;  // l1 for l1 penalties, l2 otherwise
  std::optional<double> bound_constant;  // C in error <= C / t_n (l1 only)
  RateReport rate;
};

/// Exact data, `steps` outer iterations; fits error against t_n over the
/// points whose error is above `floor`. Leading iterates still at the
/// starting error (u_n = 0 while t_n |K*g|_inf < 1 for l1) are left out of
/// the fit.
inline NoisefreeResult noisefree_run(const ProblemInstance& inst, const StepSchedule& schedule,
                                     std::size_t steps, const AlmCaps& caps = {},
                                     double floor = 1e-6) {
  const AlmTrajectory traj = alm_run(inst.K, inst.g, inst.penalty, schedule, std::nullopt,
                                     StoppingRule::fixed(steps), caps);
  NoisefreeResult out;
  out.rate.abscissa_name = "t";
  out.rate.ordinate_name = inst.penalty.is_l1() ? "l1_error" : "l2_error";
  const double start = inst.penalty.is_l1() ? inst.u_dagger.cwiseAbs().sum() : inst.u_dagger.norm();
  bool moved = false;
  for (const auto& s : traj.states) {
    const Vector e = s.u - inst.u_dagger;
    const double err = inst.penalty.is_l1() ? e.cwiseAbs().sum() : e.norm();
    out.n.push_back(s.n);
    out.t.push_back(s.t);
    out.error.push_back(err);
    moved = moved || err < (1.0 - 1e-3) * start;
    if (moved && err > floor) out.rate.points.push_back({s.t, err, err, kNaN, kNaN});
  }
  if (inst.penalty.is_l1() && inst.certified()) {
    const SparseConstants sc = sparse_constants(inst.K, *inst.certificate);
    out.bound_constant = noisefree_l1_constant(sc, inst.p_dagger->norm());
    for (auto& pt : out.rate.points) {
      pt.rhs = *out.bound_constant / pt.abscissa;
      pt.slack = pt.rhs - pt.lhs;
    }
  }
  out.rate.refit();
  return out;
}

}  // namespace almreg
