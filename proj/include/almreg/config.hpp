#pragma once

// Experiment configuration files and instance files.
//
// {
//   "problem":  {"kind", "dims", "q", "support_size", "K_kind", "seed", ...},
//   "solver":   {"tau", "p0", "inner_tol", "max_outer", "max_inner", ...},
//   "stopping": {"rule", "rho", "delta0", "factor", "count", ...},
//   "output":   {"dir", "format"}
// }

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "almreg/alm.hpp"
#include "almreg/error.hpp"
#include "almreg/harness.hpp"
#include "almreg/linop.hpp"
#include "almreg/penalty.hpp"
#include "almreg/report.hpp"
#include "almreg/stopping.hpp"

namespace almreg {

struct ProblemConfig {
  std::string kind = "quadratic";  // quadratic | sparse | lq | tv_staircase_1d | tv_blocks_2d
  std::vector<Index> dims{20, 30};
  double q = 1.5;
  Index support_size = 4;
  std::string K_kind = "gaussian";  // gaussian | identity | blur
  std::uint64_t seed = 1;
  std::uint64_t noise_seed = 2;
  double magnitude_min = 1.0;
  double magnitude_max = 2.0;
  bool log_magnitudes = false;
};

struct SolverConfig {
  double tau = 1.0;
  double tau_growth = 1.0;  // geometric growth of the first `growth_steps` steps
  std::size_t growth_steps = 0;
  double p0 = 0.0;  // constant initial dual
  std::optional<double> inner_tol;
  std::size_t max_outer = 10000;
  int max_inner = 20000;

  [[nodiscard]] StepSchedule schedule() const {
    return growth_steps > 0 ? StepSchedule::geometric(tau, tau_growth, growth_steps)
                            : StepSchedule::constant(tau);
  }
};

struct StoppingConfig {
  std::string rule = "morozov";  // morozov | apriori | fixed
  double rho = 0.0;              // 0 selects the optimal rho
  double delta0 = 0.1;
  double factor = 0.5;
  int count = 8;
  std::size_t steps = 50;         // fixed rule
  double index_scale = 1.0;       // apriori: n = ceil(scale delta^-power)
  double index_power = 1.0;
  bool fixed_direction = false;
};

struct OutputConfig {
  std::string dir = "out";
  ReportFormat format = ReportFormat::json;
};

struct ExperimentConfig {
  ProblemConfig problem;
  SolverConfig solver;
  StoppingConfig stopping;
  OutputConfig output;
  json raw;
};

namespace detail {

inline void reject_unknown(const json& obj, const std::string& where, const std::set<std::string>& known) {
  if (!obj.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!known.count(key)) throw ConfigError("config: unknown key '" + where + "." + key + "'");
  }
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for '" + where + "." + key + "'");
  }
}

}  // namespace detail

/// Applies ALMREG_SEED, if set, to problem.seed.
inline void apply_seed_override(ExperimentConfig& cfg) {
  const char* env = std::getenv("ALMREG_SEED");
  if (!env || !*env) return;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument(env);
    cfg.problem.seed = v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("ALMREG_SEED is not an unsigned integer: '") + env + "'");
  }
}

inline ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  c.raw = j;
  detail::reject_unknown(j, "config", {"problem", "solver", "stopping", "output"});
  if (j.contains("problem")) {
    const json& p = j.at("problem");
    detail::reject_unknown(p, "problem",
                           {"kind", "dims", "q", "support_size", "K_kind", "seed", "noise_seed",
                            "magnitude_min", "magnitude_max", "log_magnitudes"});
    detail::read(p, "kind", c.problem.kind, "problem");
    detail::read(p, "dims", c.problem.dims, "problem");
    detail::read(p, "q", c.problem.q, "problem");
    detail::read(p, "support_size", c.problem.support_size, "problem");
    detail::read(p, "K_kind", c.problem.K_kind, "problem");
    detail::read(p, "seed", c.problem.seed, "problem");
    c.problem.noise_seed = c.problem.seed + 1;
    detail::read(p, "noise_seed", c.problem.noise_seed, "problem");
    detail::read(p, "magnitude_min", c.problem.magnitude_min, "problem");
    detail::read(p, "magnitude_max", c.problem.magnitude_max, "problem");
    detail::read(p, "log_magnitudes", c.problem.log_magnitudes, "problem");
  }
  if (j.contains("solver")) {
    const json& s = j.at("solver");
    detail::reject_unknown(s, "solver", {"tau", "tau_growth", "growth_steps", "p0", "inner_tol",
                                         "max_outer", "max_inner"});
    detail::read(s, "tau", c.solver.tau, "solver");
    detail::read(s, "tau_growth", c.solver.tau_growth, "solver");
    detail::read(s, "growth_steps", c.solver.growth_steps, "solver");
    detail::read(s, "p0", c.solver.p0, "solver");
    if (s.contains("inner_tol") && !s.at("inner_tol").is_null()) {
      double t = 0.0;
      detail::read(s, "inner_tol", t, "solver");
      c.solver.inner_tol = t;
    }
    detail::read(s, "max_outer", c.solver.max_outer, "solver");
    detail::read(s, "max_inner", c.solver.max_inner, "solver");
  }
  if (j.contains("stopping")) {
    const json& s = j.at("stopping");
    detail::reject_unknown(s, "stopping", {"rule", "rho", "delta0", "factor", "count", "steps",
                                           "index_scale", "index_power", "fixed_direction"});
    detail::read(s, "rule", c.stopping.rule, "stopping");
    if (s.contains("rho")) {
      if (s.at("rho").is_string()) {
        if (s.at("rho").get<std::string>() != "optimal") throw ConfigError("config: stopping.rho must be a number or \"optimal\"");
        c.stopping.rho = 0.0;
      } else {
        detail::read(s, "rho", c.stopping.rho, "stopping");
      }
    }
    detail::read(s, "delta0", c.stopping.delta0, "stopping");
    detail::read(s, "factor", c.stopping.factor, "stopping");
    detail::read(s, "count", c.stopping.count, "stopping");
    detail::read(s, "steps", c.stopping.steps, "stopping");
    detail::read(s, "index_scale", c.stopping.index_scale, "stopping");
    detail::read(s, "index_power", c.stopping.index_power, "stopping");
    detail::read(s, "fixed_direction", c.stopping.fixed_direction, "stopping");
  }
  if (j.contains("output")) {
    const json& o = j.at("output");
    detail::reject_unknown(o, "output", {"dir", "format"});
    detail::read(o, "dir", c.output.dir, "output");
    std::string fmt = "json";
    detail::read(o, "format", fmt, "output");
    if (fmt == "json") {
      c.output.format = ReportFormat::json;
    } else if (fmt == "csv") {
      c.output.format = ReportFormat::csv;
    } else {
      throw ConfigError("config: output.format must be json or csv");
    }
  }

  // value checks
  const auto& pr = c.problem;
  static const std::set<std::string> kinds{"quadratic", "sparse", "lq", "tv_staircase_1d", "tv_blocks_2d"};
  if (!kinds.count(pr.kind)) throw ConfigError("config: unknown problem.kind '" + pr.kind + "'");
  static const std::set<std::string> k_kinds{"gaussian", "identity", "blur"};
  if (!k_kinds.count(pr.K_kind)) throw ConfigError("config: unknown problem.K_kind '" + pr.K_kind + "'");
  const bool tv = pr.kind.rfind("tv_", 0) == 0;
  if (tv && pr.K_kind == "gaussian") throw ConfigError("config: tv problems take K_kind identity or blur");
  if (!tv && pr.K_kind == "blur") throw ConfigError("config: blur is only available for tv problems");
  if (pr.dims.empty() || pr.dims.size() > 2) throw ConfigError("config: problem.dims needs one or two entries");
  for (Index d : pr.dims)
    if (d < 1) throw ConfigError("config: problem.dims must be positive");
  if (pr.kind == "lq" && !(pr.q > 1.0 && pr.q <= 2.0)) throw ConfigError("config: problem.q must lie in (1, 2]");
  if (!(c.solver.tau > 0.0) || !(c.solver.tau_growth > 0.0)) throw ConfigError("config: solver.tau must be positive");
  if (c.solver.inner_tol && !(*c.solver.inner_tol > 0.0)) throw ConfigError("config: solver.inner_tol must be positive");
  if (c.solver.max_outer < 1 || c.solver.max_inner < 1) throw ConfigError("config: iteration caps must be positive");
  static const std::set<std::string> rules{"morozov", "apriori", "fixed"};
  if (!rules.count(c.stopping.rule)) throw ConfigError("config: unknown stopping.rule '" + c.stopping.rule + "'");
  if (c.stopping.rho != 0.0 && !(c.stopping.rho > 1.0)) throw ConfigError("config: stopping.rho must be > 1");
  if (!(c.stopping.delta0 >= 0.0)) throw ConfigError("config: stopping.delta0 must be >= 0");
  if (c.stopping.delta0 == 0.0 && c.stopping.rule == "morozov") {
    throw ConfigError("config: the discrepancy principle needs delta0 > 0");
  }
  if (!(c.stopping.factor > 0.0 && c.stopping.factor < 1.0)) throw ConfigError("config: stopping.factor must lie in (0, 1)");
  if (c.stopping.count < 1) throw ConfigError("config: stopping.count must be >= 1");
  if (c.stopping.steps < 1) throw ConfigError("config: stopping.steps must be >= 1");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  ExperimentConfig c = parse_config(read_json_file(path));
  apply_seed_override(c);
  return c;
}

inline double resolved_rho(const ExperimentConfig& c) {
  return c.stopping.rho > 0.0 ? c.stopping.rho : optimal_rho().rho;
}

inline ProblemInstance build_instance(const ExperimentConfig& c) {
  const auto& p = c.problem;
  const Index a = p.dims[0];
  const Index b = p.dims.size() > 1 ? p.dims[1] : p.dims[0];
  if (p.kind == "quadratic") {
    if (p.K_kind == "identity") return quadratic_instance({opspec::Identity{a}}, Vector::Ones(a), p.seed);
    return gen_problem_quadratic(a, b, p.seed);
  }
  if (p.kind == "sparse") {
    SparseOptions so;
    so.magnitude_min = p.magnitude_min;
    so.magnitude_max = p.magnitude_max;
    so.log_uniform = p.log_magnitudes;
    if (p.K_kind == "identity") {
      std::vector<Index> support;
      for (Index k = 0; k < std::min(p.support_size, a); ++k) support.push_back(k);
      const auto s = static_cast<Index>(support.size());
      return sparse_instance({opspec::Identity{a}}, support, Vector::Ones(s),
                             Vector::Constant(s, p.magnitude_min), p.seed);
    }
    return gen_problem_sparse(a, b, p.support_size, p.seed, so);
  }
  if (p.kind == "lq") return gen_problem_lq(a, b, p.q, p.seed);
  const BlurKind blur = p.K_kind == "blur" ? BlurKind::blur : BlurKind::identity;
  if (p.kind == "tv_staircase_1d") {
    return gen_problem_tv({p.dims.size() > 1 ? a * b : a, 1}, TvKind::staircase_1d, blur, p.seed);
  }
  return gen_problem_tv({a, b}, TvKind::blocks_2d, blur, p.seed);
}

inline SweepConfig build_sweep_config(const ExperimentConfig& c, Index data_dim) {
  SweepConfig s;
  s.delta0 = c.stopping.delta0;
  s.factor = c.stopping.factor;
  s.count = c.stopping.count;
  s.rho = resolved_rho(c);
  s.schedule = c.solver.schedule();
  s.caps.max_outer = c.solver.max_outer;
  s.caps.max_inner = c.solver.max_inner;
  s.caps.inner_tol = c.solver.inner_tol;
  if (c.solver.p0 != 0.0) s.p0 = Vector::Constant(data_dim, c.solver.p0);
  s.noise_seed = c.problem.noise_seed;
  s.fixed_direction = c.stopping.fixed_direction;
  if (c.stopping.rule == "fixed") {
    const std::size_t steps = c.stopping.steps;
    s.rule = [steps](double) { return StoppingRule::fixed(steps); };
  } else if (c.stopping.rule == "apriori") {
    const double scale = c.stopping.index_scale;
    const double power = c.stopping.index_power;
    s.rule = [scale, power](double delta) {
      return StoppingRule::a_priori(
          [scale, power](double d) {
            return static_cast<std::size_t>(std::max(1.0, std::ceil(scale * std::pow(d, -power))));
          },
          delta);
    };
  }
  return s;
}

// ---------------------------------------------------------------------------
// Instance files

inline json vector_to_json(const Vector& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Vector vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
    rows.push_back(r);
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty() || rows.front().empty()) throw ConfigError("instance: empty matrix");
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw ConfigError("instance: ragged matrix");
    for (std::size_t k = 0; k < rows[i].size(); ++k) m(static_cast<Index>(i), static_cast<Index>(k)) = rows[i][k];
  }
  return m;
}

inline json operator_to_json(const OperatorSpec& spec) {
  return std::visit(
      [](const auto& k) -> json {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, opspec::Identity>) {
          return {{"type", "identity"}, {"dim", k.dim}};
        } else if constexpr (std::is_same_v<T, opspec::Dense>) {
          return {{"type", "dense"}, {"matrix", matrix_to_json(k.matrix)}};
        } else if constexpr (std::is_same_v<T, opspec::Diagonal>) {
          return {{"type", "diagonal"}, {"weights", vector_to_json(k.weights)}};
        } else if constexpr (std::is_same_v<T, opspec::Convolution>) {
          return {{"type", "convolution"}, {"kernel", matrix_to_json(k.kernel)},
                  {"grid", {k.grid.rows, k.grid.cols}}};
        } else if constexpr (std::is_same_v<T, opspec::MaskedSampling>) {
          return {{"type", "masked_sampling"}, {"mask", k.mask}};
        } else {
          return {{"type", "composition"}, {"outer", operator_to_json(*k.outer)},
                  {"inner", operator_to_json(*k.inner)}};
        }
      },
      spec.kind);
}

inline OperatorSpec operator_from_json(const json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "identity") return {opspec::Identity{j.at("dim").get<Index>()}};
  if (type == "dense") return {opspec::Dense{matrix_from_json(j.at("matrix"))}};
  if (type == "diagonal") return {opspec::Diagonal{vector_from_json(j.at("weights"))}};
  if (type == "convolution") {
    const auto g = j.at("grid").get<std::vector<Index>>();
    if (g.size() != 2) throw ConfigError("instance: convolution grid needs two entries");
    return {opspec::Convolution{matrix_from_json(j.at("kernel")), {g[0], g[1]}}};
  }
  if (type == "masked_sampling") return {opspec::MaskedSampling{j.at("mask").get<std::vector<bool>>()}};
  if (type == "composition") {
    return {opspec::Composition{std::make_shared<const OperatorSpec>(operator_from_json(j.at("outer"))),
                                std::make_shared<const OperatorSpec>(operator_from_json(j.at("inner")))}};
  }
  throw ConfigError("instance: unknown operator type '" + type + "'");
}

inline json penalty_to_json(const Penalty& p) {
  if (const auto* q = p.as_quadratic()) {
    if (!q->L.is_identity()) throw ConfigError("instance: only identity quadratic penalties are serialisable");
    return {{"kind", "quadratic"}, {"dim", q->L.dim_in()}};
  }
  if (const auto* l = p.as_lq()) return {{"kind", "lq"}, {"q", l->q}};
  const auto* t = p.as_tv();
  return {{"kind", "tv"},
          {"grid", {t->grid.rows, t->grid.cols}},
          {"flavor", t->flavor == TvFlavor::anisotropic ? "anisotropic" : "isotropic"}};
}

inline Penalty penalty_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "quadratic") return Penalty::quadratic_identity(j.at("dim").get<Index>());
  if (kind == "lq") return Penalty::lq(j.at("q").get<double>());
  if (kind == "tv") {
    const auto g = j.at("grid").get<std::vector<Index>>();
    if (g.size() != 2) throw ConfigError("instance: tv grid needs two entries");
    const std::string f = j.value("flavor", "anisotropic");
    if (f != "anisotropic" && f != "isotropic") throw ConfigError("instance: unknown tv flavor '" + f + "'");
    return Penalty::tv({g[0], g[1]}, f == "isotropic" ? TvFlavor::isotropic : TvFlavor::anisotropic);
  }
  throw ConfigError("instance: unknown penalty kind '" + kind + "'");
}

inline json instance_to_json(const ProblemInstance& inst) {
  return {{"label", inst.label},
          {"seed", inst.seed},
          {"K", operator_to_json(inst.K_spec)},
          {"penalty", penalty_to_json(inst.penalty)},
          {"u_dagger", vector_to_json(inst.u_dagger)},
          {"p_dagger", inst.p_dagger ? vector_to_json(*inst.p_dagger) : json(nullptr)},
          {"g", vector_to_json(inst.g)}};
}

/// Reads an instance file; g is recomputed from K u† and must agree with
/// the stored data.
inline ProblemInstance instance_from_json(const json& j) {
  try {
    std::optional<Vector> p;
    if (j.contains("p_dagger") && !j.at("p_dagger").is_null()) p = vector_from_json(j.at("p_dagger"));
    ProblemInstance inst = make_instance(operator_from_json(j.at("K")), penalty_from_json(j.at("penalty")),
                                         vector_from_json(j.at("u_dagger")), std::move(p),
                                         j.value("seed", std::uint64_t{0}), j.value("label", std::string("instance")));
    if (j.contains("g") && !j.at("g").is_null()) {
      const Vector g = vector_from_json(j.at("g"));
      if (g.size() != inst.g.size() || (g - inst.g).norm() > 1e-10 * std::max(1.0, g.norm())) {
        throw ConfigError("instance: stored g differs from K u_dagger");
      }
    }
    return inst;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("instance: malformed file: ") + e.what());
  }
}

}  // namespace almreg
