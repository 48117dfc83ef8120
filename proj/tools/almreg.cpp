// almreg: run, sweep, certify, report.
//
// exit codes: 0 all asserted bounds hold, 1 a bound is violated,
// 2 configuration or input error

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "almreg/almreg.hpp"

namespace fs = std::filesystem;
using namespace almreg;

namespace {

constexpr int kOk = 0;
constexpr int kViolation = 1;
constexpr int kConfigError = 2;

std::string out_path(const ExperimentConfig& cfg, const std::string& stem) {
  std::error_code ec;
  fs::create_directories(cfg.output.dir, ec);
  if (ec) throw IoError("cannot create '" + cfg.output.dir + "': " + ec.message());
  const char* ext = cfg.output.format == ReportFormat::json ? ".json" : ".csv";
  return (fs::path(cfg.output.dir) / (stem + ext)).string();
}

void print_sweep(const SweepResult& r) {
  std::printf("%s (%s), seed %llu, %s\n", r.label.c_str(), r.penalty.c_str(),
              static_cast<unsigned long long>(r.instance_seed), r.certified ? "certified" : "uncertified");
  std::printf("%12s %8s %12s %12s %12s\n", "delta", "gamma", "t_gamma", "residual", "d_sym");
  for (const auto& run : r.runs) {
    if (run.unstopped) {
      std::printf("%12.4e %8s\n", run.delta, "-");
      continue;
    }
    std::printf("%12.4e %8zu %12.4e %12.4e %12.4e\n", run.delta, *run.gamma, run.t_gamma, run.residual,
                run.d_sym);
  }
  for (const auto& rate : r.rates) {
    if (!rate.fit) continue;
    std::printf("slope %-16s %7.3f", rate.ordinate_name.c_str(), rate.fit->slope);
    if (rate.tail_fit) std::printf("  (small-delta half %7.3f)", rate.tail_fit->slope);
    std::printf("\n");
  }
  for (const auto& f : r.flags) std::printf("note: %s\n", f.c_str());
  for (const auto& v : r.violations) std::printf("VIOLATION: %s\n", v.c_str());
}

json noisefree_json(const NoisefreeResult& nf, const ProblemInstance& inst, const json& config) {
  json pts = json::array();
  for (std::size_t i = 0; i < nf.n.size(); ++i) pts.push_back({{"n", nf.n[i]}, {"t", nf.t[i]}, {"error", nf.error[i]}});
  return {{"config", config},
          {"label", inst.label},
          {"mode", "noisefree"},
          {"iterates", pts},
          {"bound_constant", nf.bound_constant ? json(*nf.bound_constant) : json(nullptr)},
          {"rate", as_json(nf.rate)}};
}

int noisefree(const ExperimentConfig& cfg, const ProblemInstance& inst) {
  if (cfg.stopping.rule != "fixed") throw ConfigError("config: delta0 = 0 needs stopping.rule = fixed");
  AlmCaps caps;
  caps.max_outer = std::max(cfg.solver.max_outer, cfg.stopping.steps);
  caps.max_inner = cfg.solver.max_inner;
  caps.inner_tol = cfg.solver.inner_tol;
  const NoisefreeResult nf = noisefree_run(inst, cfg.solver.schedule(), cfg.stopping.steps, caps);
  int violations = 0;
  for (const auto& p : nf.rate.points)
    if (std::isfinite(p.slack) && p.slack < 0.0) ++violations;
  std::printf("%s noise-free, %zu steps, t_n up to %.4e\n", inst.label.c_str(), nf.n.size(),
              nf.t.empty() ? 0.0 : nf.t.back());
  if (nf.rate.fit) std::printf("slope error vs t %7.3f over %zu points\n", nf.rate.fit->slope, nf.rate.fit->points);
  if (nf.bound_constant) std::printf("error <= %.4e / t_n violated at %d points\n", *nf.bound_constant, violations);
  const std::string path = out_path(cfg, "noisefree");
  if (cfg.output.format == ReportFormat::json) {
    write_text(path, noisefree_json(nf, inst, cfg.raw).dump(2) + "\n");
  } else {
    std::string csv = "n,t,error\n";
    for (std::size_t i = 0; i < nf.n.size(); ++i)
      csv += std::to_string(nf.n[i]) + "," + csv_cell(nf.t[i]) + "," + csv_cell(nf.error[i]) + "\n";
    write_text(path, csv);
  }
  std::printf("wrote %s\n", path.c_str());
  return violations ? kViolation : kOk;
}

int cmd_sweep(const std::string& config_path, bool single) {
  ExperimentConfig cfg = load_config(config_path);
  if (single) cfg.stopping.count = 1;
  const ProblemInstance inst = build_instance(cfg);
  if (cfg.stopping.delta0 == 0.0) return noisefree(cfg, inst);
  SweepConfig sc = build_sweep_config(cfg, inst.K.dim_out());
  sc.keep_trajectories = single;
  const SweepResult res = sweep_run(inst, sc);
  print_sweep(res);
  const std::string path = out_path(cfg, single ? "run" : "sweep");
  report_emit(res, cfg.output.format, path, cfg.raw);
  std::printf("wrote %s\n", path.c_str());
  const fs::path dir(cfg.output.dir);
  if (single && res.runs.front().trajectory) {
    const RunRecord& r = res.runs.front();
    const std::string tpath = (dir / "trajectory.json").string();
    write_text(tpath, trajectory_json(*r.trajectory, inst.K, inst.penalty, r.g_delta).dump(2) + "\n");
    write_text((dir / "trajectory_vectors.csv").string(), trajectory_vectors_csv(*r.trajectory));
    std::printf("wrote %s\n", tpath.c_str());
  }
  if (cfg.output.format == ReportFormat::csv) {
    for (const auto& rate : res.rates) {
      write_text((dir / ("rate_" + rate.ordinate_name + ".csv")).string(), to_csv(rate));
    }
  }
  return res.bounds_hold() ? kOk : kViolation;
}

int cmd_certify(const std::string& instance_path, const std::string& config_path, const std::string& save) {
  ProblemInstance inst = !instance_path.empty() ? instance_from_json(read_json_file(instance_path))
                                                : build_instance(load_config(config_path));
  if (!save.empty()) write_text(save, instance_to_json(inst).dump(2) + "\n");
  if (!inst.certificate) {
    std::printf("%s: no source element supplied, nothing to certify\n", inst.label.c_str());
    return kViolation;
  }
  const SourceCertificate& c = *inst.certificate;
  std::printf("%s (%s): %s\n", inst.label.c_str(), inst.penalty.name().c_str(),
              c.certified ? "certified" : "NOT certified");
  std::printf("fenchel gap %.3e\n", c.fenchel_gap);
  if (c.theta) std::printf("theta %.6f, support size %zu\n", *c.theta, c.support.size());
  if (c.failure) {
    std::printf("failure: %s (index %ld, magnitude %.6e)\n", c.failure->reason.c_str(),
                static_cast<long>(c.failure->index), c.failure->magnitude);
  }
  return c.certified ? kOk : kViolation;
}

int cmd_report(const std::string& input, const std::string& output, const std::string& format) {
  const json j = read_json_file(input);
  const SweepResult res = sweep_from_json(j);
  const ReportFormat fmt = format == "json" ? ReportFormat::json : ReportFormat::csv;
  if (output.empty()) {
    std::cout << (fmt == ReportFormat::json ? as_json(res, j.value("config", json(nullptr))).dump(2) + "\n"
                                            : to_csv(res));
  } else {
    report_emit(res, fmt, output, j.value("config", json(nullptr)));
  }
  return res.bounds_hold() ? kOk : kViolation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Augmented Lagrangian regularisation with certified error bounds"};
  app.require_subcommand(1);

  std::string run_cfg;
  auto* run = app.add_subcommand("run", "single Morozov-stopped run at delta0");
  run->add_option("config", run_cfg, "experiment config (JSON)")->required();

  std::string sweep_cfg;
  auto* sweep = app.add_subcommand("sweep", "delta sweep with rate fits and bound checks");
  sweep->add_option("config", sweep_cfg, "experiment config (JSON)")->required();

  std::string inst_path, cert_cfg, save_path;
  auto* certify = app.add_subcommand("certify", "check the source condition of an instance");
  auto* inst_opt = certify->add_option("--instance", inst_path, "instance file (JSON)");
  auto* cfg_opt = certify->add_option("--config", cert_cfg, "generate the instance from a config");
  inst_opt->excludes(cfg_opt);
  certify->add_option("--save-instance", save_path, "write the instance to this file");

  std::string rep_in, rep_out, rep_fmt = "csv";
  auto* report = app.add_subcommand("report", "re-render a stored JSON report");
  report->add_option("input", rep_in, "JSON report")->required();
  report->add_option("-o,--output", rep_out, "output file (stdout when omitted)");
  report->add_option("-f,--format", rep_fmt, "csv or json")->check(CLI::IsMember({"csv", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_sweep(run_cfg, true);
    if (*sweep) return cmd_sweep(sweep_cfg, false);
    if (*certify) {
      if (inst_path.empty() && cert_cfg.empty()) throw ConfigError("certify: give --instance or --config");
      return cmd_certify(inst_path, cert_cfg, save_path);
    }
    return cmd_report(rep_in, rep_out, rep_fmt);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kConfigError;
  } catch (const GenerationFailure& e) {
    std::fprintf(stderr, "generation failed: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kViolation;
  }
}
