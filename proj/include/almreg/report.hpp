#pragma once

// JSON and CSV emission of sweep results, with a JSON reader for the
// `report` subcommand. Non-finite numbers are written as null.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "almreg/certify.hpp"
#include "almreg/error.hpp"
#include "almreg/harness.hpp"

namespace almreg {

using json = nlohmann::json;

namespace detail {

inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double get_num(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::numeric_limits<double>::quiet_NaN();
  return j.at(key).get<double>();
}

}  // namespace detail

inline json as_json(const BoundCheck& b) {
  return {{"name", b.name}, {"n", b.n},          {"lhs", detail::num(b.lhs)},
          {"rhs", detail::num(b.rhs)}, {"slack", detail::num(b.slack)}, {"eps", detail::num(b.eps)}};
}

inline BoundCheck bound_from_json(const json& j) {
  return {j.at("name").get<std::string>(), j.at("n").get<std::size_t>(), detail::get_num(j, "lhs"),
          detail::get_num(j, "rhs"), detail::get_num(j, "slack"), detail::get_num(j, "eps")};
}

inline json as_json(const SlopeFit& f) {
  return {{"slope", f.slope}, {"intercept", f.intercept}, {"r_squared", f.r_squared}, {"points", f.points}};
}

inline SlopeFit fit_from_json(const json& j) {
  return {j.at("slope").get<double>(), j.at("intercept").get<double>(),
          j.at("r_squared").get<double>(), j.at("points").get<std::size_t>()};
}

inline json as_json(const RateReport& r) {
  json pts = json::array();
  for (const auto& p : r.points) {
    pts.push_back({{"abscissa", detail::num(p.abscissa)},
                   {"ordinate", detail::num(p.ordinate)},
                   {"lhs", detail::num(p.lhs)},
                   {"rhs", detail::num(p.rhs)},
                   {"slack", detail::num(p.slack)}});
  }
  return {{"abscissa", r.abscissa_name},
          {"ordinate", r.ordinate_name},
          {"points", pts},
          {"fit", r.fit ? as_json(*r.fit) : json(nullptr)},
          {"tail_fit", r.tail_fit ? as_json(*r.tail_fit) : json(nullptr)},
          {"fits_disagree", r.fits_disagree}};
}

inline RateReport rate_from_json(const json& j) {
  RateReport r;
  r.abscissa_name = j.at("abscissa").get<std::string>();
  r.ordinate_name = j.at("ordinate").get<std::string>();
  for (const auto& p : j.at("points")) {
    r.points.push_back({detail::get_num(p, "abscissa"), detail::get_num(p, "ordinate"),
                        detail::get_num(p, "lhs"), detail::get_num(p, "rhs"),
                        detail::get_num(p, "slack")});
  }
  if (!j.at("fit").is_null()) r.fit = fit_from_json(j.at("fit"));
  if (!j.at("tail_fit").is_null()) r.tail_fit = fit_from_json(j.at("tail_fit"));
  r.fits_disagree = j.at("fits_disagree").get<bool>();
  return r;
}

inline json as_json(const RunRecord& r) {
  json b = json::array();
  for (const auto& c : r.bounds) b.push_back(as_json(c));
  return {{"k", r.k},
          {"delta", r.delta},
          {"noise_seed", r.noise_seed},
          {"gamma", r.gamma ? json(*r.gamma) : json(nullptr)},
          {"unstopped", r.unstopped},
          {"t_gamma", detail::num(r.t_gamma)},
          {"residual", detail::num(r.residual)},
          {"residual_prev", detail::num(r.residual_prev)},
          {"d_sym", detail::num(r.d_sym)},
          {"l1_error", detail::num(r.l1_error)},
          {"l2_error", detail::num(r.l2_error)},
          {"lq_error", detail::num(r.lq_error)},
          {"dual_error", detail::num(r.dual_error)},
          {"strict_d", detail::num(r.strict_d)},
          {"strict_d_tilde", detail::num(r.strict_d_tilde)},
          {"penalty_value", detail::num(r.penalty_value)},
          {"penalty_target", detail::num(r.penalty_target)},
          {"inexact_steps", r.inexact_steps},
          {"monotonicity_violation", detail::num(r.monotonicity_violation)},
          {"bracketing_ok", r.bracketing_ok},
          {"bounds", b}};
}

inline RunRecord run_from_json(const json& j) {
  RunRecord r;
  r.k = j.at("k").get<std::size_t>();
  r.delta = j.at("delta").get<double>();
  r.noise_seed = j.at("noise_seed").get<std::uint64_t>();
  if (!j.at("gamma").is_null()) r.gamma = j.at("gamma").get<std::size_t>();
  r.unstopped = j.at("unstopped").get<bool>();
  r.t_gamma = detail::get_num(j, "t_gamma");
  r.residual = detail::get_num(j, "residual");
  r.residual_prev = detail::get_num(j, "residual_prev");
  r.d_sym = detail::get_num(j, "d_sym");
  r.l1_error = detail::get_num(j, "l1_error");
  r.l2_error = detail::get_num(j, "l2_error");
  r.lq_error = detail::get_num(j, "lq_error");
  r.dual_error = detail::get_num(j, "dual_error");
  r.strict_d = detail::get_num(j, "strict_d");
  r.strict_d_tilde = detail::get_num(j, "strict_d_tilde");
  r.penalty_value = detail::get_num(j, "penalty_value");
  r.penalty_target = detail::get_num(j, "penalty_target");
  r.inexact_steps = j.at("inexact_steps").get<int>();
  r.monotonicity_violation = detail::get_num(j, "monotonicity_violation");
  r.bracketing_ok = j.at("bracketing_ok").get<bool>();
  for (const auto& b : j.at("bounds")) r.bounds.push_back(bound_from_json(b));
  return r;
}

inline json as_json(const SweepResult& s, const json& config_echo = nullptr) {
  json runs = json::array();
  for (const auto& r : s.runs) runs.push_back(as_json(r));
  json rates = json::array();
  for (const auto& r : s.rates) rates.push_back(as_json(r));
  return {{"config", config_echo},
          {"label", s.label},
          {"penalty", s.penalty},
          {"instance_seed", s.instance_seed},
          {"certified", s.certified},
          {"p_distance", detail::num(s.p_distance)},
          {"delta0", s.delta0},
          {"factor", s.factor},
          {"count", s.count},
          {"rho", s.rho},
          {"tau_bar", s.tau_bar},
          {"inner_tol", s.inner_tol},
          {"noise_seed", s.noise_seed},
          {"fixed_direction", s.fixed_direction},
          {"runs", runs},
          {"rates", rates},
          {"degeneracy",
           {{"constant_index", s.degeneracy.constant_index ? json(*s.degeneracy.constant_index) : json(nullptr)},
            {"trend", to_string(s.degeneracy.trend)}}},
          {"violations", s.violations},
          {"flags", s.flags},
          {"bounds_hold", s.bounds_hold()}};
}

inline Trend trend_from_string(const std::string& s) {
  if (s == "decreasing") return Trend::decreasing;
  if (s == "increasing") return Trend::increasing;
  if (s == "constant") return Trend::constant;
  return Trend::mixed;
}

inline SweepResult sweep_from_json(const json& j) {
  try {
    SweepResult s;
    s.label = j.at("label").get<std::string>();
    s.penalty = j.at("penalty").get<std::string>();
    s.instance_seed = j.at("instance_seed").get<std::uint64_t>();
    s.certified = j.at("certified").get<bool>();
    s.p_distance = detail::get_num(j, "p_distance");
    s.delta0 = j.at("delta0").get<double>();
    s.factor = j.at("factor").get<double>();
    s.count = j.at("count").get<int>();
    s.rho = j.at("rho").get<double>();
    s.tau_bar = j.at("tau_bar").get<double>();
    s.inner_tol = j.at("inner_tol").get<double>();
    s.noise_seed = j.at("noise_seed").get<std::uint64_t>();
    s.fixed_direction = j.at("fixed_direction").get<bool>();
    for (const auto& r : j.at("runs")) s.runs.push_back(run_from_json(r));
    for (const auto& r : j.at("rates")) s.rates.push_back(rate_from_json(r));
    const auto& d = j.at("degeneracy");
    if (!d.at("constant_index").is_null()) s.degeneracy.constant_index = d.at("constant_index").get<std::size_t>();
    s.degeneracy.trend = trend_from_string(d.at("trend").get<std::string>());
    s.violations = j.at("violations").get<std::vector<std::string>>();
    s.flags = j.at("flags").get<std::vector<std::string>>();
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed report: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// CSV

/// Bound names that get a slack column, in column order.
inline const std::vector<std::string>& csv_bound_columns() {
  static const std::vector<std::string> names{
      "primal_dual_estimate", "mixed_bregman_estimate", "symmetric_bregman_estimate",
      "stopping_index_bound", "discrepancy_estimate",   "rough_estimate"};
  return names;
}

inline std::string csv_cell(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string to_csv(const SweepResult& s) {
  std::ostringstream os;
  os << "delta,gamma,t_gamma,residual,d_sym,l1_error,l2_error,lq_error,dual_error,strict_d,"
        "strict_d_tilde,unstopped";
  for (const auto& n : csv_bound_columns()) os << ",slack_" << n;
  os << "\n";
  for (const auto& r : s.runs) {
    os << csv_cell(r.delta) << "," << (r.gamma ? std::to_string(*r.gamma) : "") << ","
       << csv_cell(r.t_gamma) << "," << csv_cell(r.residual) << "," << csv_cell(r.d_sym) << ","
       << csv_cell(r.l1_error) << "," << csv_cell(r.l2_error) << "," << csv_cell(r.lq_error) << ","
       << csv_cell(r.dual_error) << "," << csv_cell(r.strict_d) << "," << csv_cell(r.strict_d_tilde)
       << "," << (r.unstopped ? 1 : 0);
    for (const auto& n : csv_bound_columns()) {
      double v = std::numeric_limits<double>::quiet_NaN();
      for (const auto& b : r.bounds)
        if (b.name == n) v = b.slack;
      os << "," << csv_cell(v);
    }
    os << "\n";
  }
  return os.str();
}

/// abscissa, ordinate, lhs, rhs, slack
inline std::string to_csv(const RateReport& r) {
  std::ostringstream os;
  os << "abscissa,ordinate,lhs,rhs,slack\n";
  for (const auto& p : r.points) {
    os << csv_cell(p.abscissa) << "," << csv_cell(p.ordinate) << "," << csv_cell(p.lhs) << ","
       << csv_cell(p.rhs) << "," << csv_cell(p.slack) << "\n";
  }
  return os.str();
}

/// Per-state summary: n, t, residual, J(u), G(p) (null without a closed-form
/// conjugate), inexact.
inline json trajectory_json(const AlmTrajectory& traj, const LinearOperator& K, const Penalty& pen,
                            const Vector& g_delta) {
  json states = json::array();
  for (const auto& s : traj.states) {
    const auto G = dual_objective(s.p, g_delta, K, pen, 100.0 * traj.inner_tol);
    states.push_back({{"n", s.n},
                      {"t", s.t},
                      {"residual", detail::num(s.residual)},
                      {"J", detail::num(penalty_eval(pen, s.u))},
                      {"G", G ? detail::num(*G) : json(nullptr)},
                      {"inexact", s.inexact}});
  }
  return {{"gamma", traj.gamma ? json(*traj.gamma) : json(nullptr)},
          {"unstopped", traj.unstopped},
          {"inner_tol", traj.inner_tol},
          {"states", states}};
}

/// Full iterate vectors, one row per state: n, then u, then p.
inline std::string trajectory_vectors_csv(const AlmTrajectory& traj) {
  std::ostringstream os;
  os << "n";
  if (!traj.states.empty()) {
    for (Index k = 0; k < traj.states[0].u.size(); ++k) os << ",u" << k;
    for (Index k = 0; k < traj.states[0].p.size(); ++k) os << ",p" << k;
  }
  os << "\n";
  for (const auto& s : traj.states) {
    os << s.n;
    for (Index k = 0; k < s.u.size(); ++k) os << "," << csv_cell(s.u[k]);
    for (Index k = 0; k < s.p.size(); ++k) os << "," << csv_cell(s.p[k]);
    os << "\n";
  }
  return os.str();
}

enum class ReportFormat { json, csv };

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline void report_emit(const SweepResult& s, ReportFormat format, const std::string& path,
                        const json& config_echo = nullptr) {
  if (format == ReportFormat::json) {
    write_text(path, as_json(s, config_echo).dump(2) + "\n");
  } else {
    write_text(path, to_csv(s));
  }
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace almreg
