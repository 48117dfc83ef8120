#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <random>

#include "almreg/almreg.hpp"

using namespace almreg;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

SweepConfig small_sweep(int count = 6) {
  SweepConfig c;
  c.delta0 = 0.1;
  c.count = count;
  c.rho = optimal_rho().rho;
  return c;
}

json config_json() {
  return json::parse(R"({
    "problem": {"kind": "quadratic", "dims": [6, 9], "seed": 4},
    "solver": {"tau": 1.0, "p0": 0.0, "max_outer": 2000, "max_inner": 5000},
    "stopping": {"rule": "morozov", "rho": "optimal", "delta0": 0.1, "factor": 0.5, "count": 3},
    "output": {"dir": "out/test", "format": "csv"}
  })");
}

}  // namespace

TEST(Generators, QuadraticScalarIdentity) {
  const ProblemInstance inst = quadratic_instance({opspec::Identity{1}}, vec({1}));
  EXPECT_DOUBLE_EQ(inst.u_dagger[0], 1.0);
  EXPECT_DOUBLE_EQ(inst.g[0], 1.0);
  EXPECT_TRUE(inst.certified());
}

TEST(Generators, QuadraticCertificateAndRange) {
  for (std::uint64_t seed : {1u, 2u, 3u, 99u}) {
    const ProblemInstance inst = gen_problem_quadratic(5, 8, seed);
    ASSERT_TRUE(inst.certified());
    EXPECT_LE(inst.certificate->fenchel_gap, 1e-12);
    EXPECT_LE((inst.K.apply(inst.u_dagger) - inst.g).norm(), 1e-12);
    // u† in range(K*): least-squares residual of K* x = u†
    const Matrix kt = to_dense(inst.K).transpose();
    const Vector x = kt.colPivHouseholderQr().solve(inst.u_dagger);
    EXPECT_LE((kt * x - inst.u_dagger).norm(), 1e-10);
    EXPECT_NEAR(operator_norm_estimate(inst.K, 500), 1.0, 1e-6);
  }
}

TEST(Generators, SparseIdentityBasis) {
  const ProblemInstance inst = sparse_instance({opspec::Identity{3}}, {0}, vec({1}), vec({2}));
  ASSERT_TRUE(inst.certified());
  EXPECT_LE((*inst.p_dagger - vec({1, 0, 0})).norm(), 1e-15);
  EXPECT_EQ(*inst.certificate->theta, 0.0);
}

TEST(Generators, SparseGaussianCertified) {
  const ProblemInstance inst = gen_problem_sparse(20, 50, 3, 6);
  ASSERT_TRUE(inst.certified());
  EXPECT_LT(*inst.certificate->theta, 1.0 - 1e-3);
  EXPECT_EQ(inst.certificate->support.size(), 3u);
  // restricted injectivity via a dense SVD oracle on K_I
  const Matrix K = to_dense(inst.K);
  Matrix KI(K.rows(), 3);
  for (int j = 0; j < 3; ++j) KI.col(j) = K.col(inst.certificate->support[static_cast<std::size_t>(j)]);
  const double smin = Eigen::JacobiSVD<Matrix>(KI).singularValues().minCoeff();
  EXPECT_GT(smin, 0.0);
  EXPECT_NEAR(sparse_constants(inst.K, *inst.certificate, 10).c, smin / std::sqrt(3.0), 1e-10);
  for (Index j = 0; j < K.cols(); ++j) EXPECT_NEAR(K.col(j).norm(), 1.0, 1e-12);
}

TEST(Generators, SparseExhaustedResamplingFails) {
  SparseOptions opt;
  opt.max_resample = 1;
  opt.theta_max = 1e-6;
  EXPECT_THROW(gen_problem_sparse(10, 40, 5, 1, opt), GenerationFailure);
  EXPECT_THROW(gen_problem_sparse(5, 4, 2, 1), ConfigError);
}

TEST(Generators, LqCertified) {
  const ProblemInstance inst = gen_problem_lq(10, 14, 1.5, 2);
  ASSERT_TRUE(inst.certified());
  EXPECT_LE(inst.certificate->fenchel_gap, 1e-8);
}

TEST(Generators, TvStaircaseIdentity) {
  const ProblemInstance inst = gen_problem_tv({32, 1}, TvKind::staircase_1d, BlurKind::identity, 3);
  ASSERT_TRUE(inst.certified());
  const Vector& xi = inst.certificate->xi;
  // z with D^T z = xi sits in [-1, 1] and hits ±1 at every jump
  const Vector d = grid_gradient(inst.u_dagger, {32, 1});
  double z = 0.0;
  for (Index k = 0; k + 1 < 32; ++k) {
    z -= xi[k];
    EXPECT_LE(std::abs(z), 1.0 + 1e-12);
    if (d[k] != 0.0) EXPECT_NEAR(z, d[k] > 0 ? 1.0 : -1.0, 1e-12);
  }
  EXPECT_NEAR(penalty_eval(inst.penalty, inst.u_dagger), d.cwiseAbs().sum(), 1e-15);
  // the subgradient inequality on 200 probes
  std::mt19937_64 rng(1);
  const double j0 = penalty_eval(inst.penalty, inst.u_dagger);
  for (int i = 0; i < 200; ++i) {
    const Vector v = gaussian_vector(32, rng);
    EXPECT_LE(j0 + xi.dot(v - inst.u_dagger), penalty_eval(inst.penalty, v) + 1e-12);
  }
}

TEST(Generators, TvConstantImageHasZeroVariation) {
  const Penalty pen = Penalty::tv({4, 4});
  EXPECT_EQ(penalty_eval(pen, Vector::Constant(16, 3.0)), 0.0);
  const LinearOperator K = convolution_operator(default_blur_kernel({4, 4}), {4, 4});
  EXPECT_LE((K.apply(Vector::Constant(16, 3.0)).array() - 3.0).abs().maxCoeff(), 1e-14);
}

TEST(Generators, TvBlurAndBlocks) {
  const ProblemInstance blur = gen_problem_tv({40, 1}, TvKind::staircase_1d, BlurKind::blur, 5);
  EXPECT_LE((blur.K.apply(blur.u_dagger) - blur.g).norm(), 1e-12);
  const ProblemInstance blocks = gen_problem_tv({8, 8}, TvKind::blocks_2d, BlurKind::identity, 5);
  EXPECT_FALSE(blocks.certified());
  EXPECT_GT(penalty_eval(blocks.penalty, blocks.u_dagger), 0.0);
  EXPECT_THROW(gen_problem_tv({4, 4}, TvKind::staircase_1d, BlurKind::identity, 1), ConfigError);
}

TEST(Noise, ExactNormAndDeterminism) {
  const Vector g = vec({1, 2, 3, 4});
  const NoisyData a = add_noise(g, 0.1, 7);
  EXPECT_NEAR((a.g_delta - g).norm(), 0.1, 1e-13);
  EXPECT_EQ(add_noise(g, 0.1, 7).g_delta, a.g_delta);
  const NoisyData b = add_noise(g, 0.1, 8);
  EXPECT_NE(b.g_delta, a.g_delta);
  EXPECT_NEAR((b.g_delta - g).norm(), 0.1, 1e-13);
  // direction depends on the seed only
  const Vector da = (a.g_delta - g) / 0.1;
  const Vector dc = (add_noise(g, 1e-4, 7).g_delta - g) / 1e-4;
  EXPECT_LE((da - dc).norm(), 1e-9);
  EXPECT_THROW(add_noise(g, 0.0, 1), ConfigError);
}

TEST(Sweep, ScalarQuadraticSuperconverges) {
  const ProblemInstance inst = quadratic_instance({opspec::Identity{1}}, vec({1}));
  SweepConfig cfg;
  cfg.delta0 = 0.5;
  cfg.count = 8;
  cfg.rho = 2.0;
  const SweepResult r = sweep_run(inst, cfg);
  EXPECT_TRUE(r.bounds_hold());
  for (const auto& run : r.runs) EXPECT_FALSE(run.unstopped);
  const RateReport* d = r.rate("d_sym");
  ASSERT_NE(d, nullptr);
  ASSERT_TRUE(d->fit.has_value());
  EXPECT_GE(d->fit->slope, 1.0);
}

TEST(Sweep, SparseL1RateAndBracketing) {
  const ProblemInstance inst = gen_problem_sparse(40, 80, 4, 2);
  const SweepResult r = sweep_run(inst, small_sweep(8));
  EXPECT_TRUE(r.bounds_hold());
  const RateReport* l1 = r.rate("l1_error");
  ASSERT_NE(l1, nullptr);
  ASSERT_TRUE(l1->fit.has_value());
  EXPECT_GE(l1->fit->slope, 0.8);
  EXPECT_LE(l1->fit->slope, 1.3);
  for (const auto& run : r.runs) {
    ASSERT_TRUE(run.gamma.has_value());
    EXPECT_LT(run.residual, r.rho * run.delta);
    if (*run.gamma > 1) EXPECT_GE(run.residual_prev, r.rho * run.delta);
    bool found = false;
    for (const auto& b : run.bounds)
      if (b.name == "stopping_index_bound") {
        found = true;
        EXPECT_GE(b.slack, 0.0);
      }
    EXPECT_TRUE(found);
  }
}

TEST(Sweep, DegeneracyMatchesGammaColumn) {
  const ProblemInstance inst = gen_problem_lq(12, 16, 1.5, 9);
  const SweepResult r = sweep_run(inst, small_sweep(6));
  std::vector<std::size_t> gammas;
  for (const auto& run : r.runs) gammas.push_back(*run.gamma);
  const DegeneracyReport d = degenerate_detect(gammas);
  EXPECT_EQ(d.constant_index, r.degeneracy.constant_index);
  EXPECT_EQ(d.trend, r.degeneracy.trend);
}

TEST(Sweep, DeterministicAcrossParallelism) {
  const ProblemInstance inst = gen_problem_lq(10, 12, 1.5, 3);
  SweepConfig a = small_sweep(4);
  SweepConfig b = a;
  b.parallel = false;
  EXPECT_EQ(as_json(sweep_run(inst, a)).dump(), as_json(sweep_run(inst, b)).dump());
  EXPECT_EQ(as_json(sweep_run(gen_problem_lq(10, 12, 1.5, 3), a)).dump(), as_json(sweep_run(inst, a)).dump());
}

TEST(Sweep, UnstoppedRunsAreFlagged) {
  const ProblemInstance inst = gen_problem_quadratic(6, 9, 2);
  SweepConfig cfg = small_sweep(3);
  cfg.caps.max_outer = 1;
  cfg.delta0 = 1e-3;
  const SweepResult r = sweep_run(inst, cfg);
  for (const auto& run : r.runs) EXPECT_TRUE(run.unstopped);
  EXPECT_FALSE(r.flags.empty());
}

TEST(Report, EmptySweepIsValidJson) {
  SweepResult empty;
  const json j = json::parse(as_json(empty).dump());
  EXPECT_TRUE(j.at("runs").is_array());
  EXPECT_TRUE(j.at("runs").empty());
  EXPECT_EQ(sweep_from_json(j).runs.size(), 0u);
}

TEST(Report, OneRunCsvHasHeaderAndRow) {
  const ProblemInstance inst = gen_problem_quadratic(6, 9, 2);
  const SweepResult r = sweep_run(inst, small_sweep(1));
  const std::string csv = to_csv(r);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  EXPECT_EQ(csv.rfind("delta,gamma,t_gamma,residual,d_sym", 0), 0u);
}

TEST(Report, JsonRoundTrip) {
  const ProblemInstance inst = gen_problem_lq(10, 12, 1.5, 5);
  const SweepResult r = sweep_run(inst, small_sweep(5));
  const std::string path = ::testing::TempDir() + "almreg_sweep.json";
  report_emit(r, ReportFormat::json, path);
  const SweepResult back = sweep_from_json(read_json_file(path));
  EXPECT_EQ(as_json(back).dump(), as_json(r).dump());
  EXPECT_EQ(to_csv(back), to_csv(r));
  std::remove(path.c_str());
  EXPECT_THROW(report_emit(r, ReportFormat::csv, "/nonexistent-dir/x.csv"), IoError);
  EXPECT_THROW(sweep_from_json(json::parse(R"({"label": 1})")), ConfigError);
}

TEST(Report, RateCsvAndTrajectoryJson) {
  RateReport rr;
  rr.points.push_back({0.1, 0.2, 0.2, 0.3, 0.1});
  EXPECT_EQ(to_csv(rr), "abscissa,ordinate,lhs,rhs,slack\n0.10000000000000001,0.20000000000000001,"
                        "0.20000000000000001,0.29999999999999999,0.10000000000000001\n");
  const auto traj = alm_run(identity_operator(1), vec({1}), Penalty::quadratic_identity(1),
                            StepSchedule::constant(1.0), std::nullopt, StoppingRule::fixed(3));
  const json j = trajectory_json(traj, identity_operator(1), Penalty::quadratic_identity(1), vec({1}));
  ASSERT_EQ(j.at("states").size(), 3u);
  EXPECT_NEAR(j.at("states")[0].at("G").get<double>(), 0.125 - 0.5, 1e-12);
  EXPECT_NEAR(j.at("states")[1].at("J").get<double>(), 0.5 * 0.75 * 0.75, 1e-12);
  const json tv = trajectory_json(traj, identity_operator(1), Penalty::tv({1, 1}), vec({1}));
  EXPECT_TRUE(tv.at("states")[0].at("G").is_null());
}

TEST(Config, ParsesAndValidates) {
  const ExperimentConfig c = parse_config(config_json());
  EXPECT_EQ(c.problem.dims, (std::vector<Index>{6, 9}));
  EXPECT_NEAR(resolved_rho(c), 1.6404, 5e-4);
  EXPECT_EQ(c.output.format, ReportFormat::csv);

  auto bad = [](const char* path, json value) {
    json j = config_json();
    j[json::json_pointer(path)] = std::move(value);
    return j;
  };
  EXPECT_THROW(parse_config(bad("/problem/kind", "wavelet")), ConfigError);
  EXPECT_THROW(parse_config(bad("/problem/extra", 1)), ConfigError);
  EXPECT_THROW(parse_config(bad("/solver/tau", -1.0)), ConfigError);
  EXPECT_THROW(parse_config(bad("/solver/tau", "fast")), ConfigError);
  EXPECT_THROW(parse_config(bad("/stopping/rho", 0.5)), ConfigError);
  EXPECT_THROW(parse_config(bad("/stopping/rule", "heuristic")), ConfigError);
  EXPECT_THROW(parse_config(bad("/stopping/factor", 1.5)), ConfigError);
  EXPECT_THROW(parse_config(bad("/output/format", "xml")), ConfigError);
  json lq = bad("/problem/kind", "lq");
  lq["problem"]["q"] = 3.0;
  EXPECT_THROW(parse_config(lq), ConfigError);
  EXPECT_THROW(parse_config(json::array()), ConfigError);
}

TEST(Config, SeedOverrideFromEnvironment) {
  ExperimentConfig c = parse_config(config_json());
  ::setenv("ALMREG_SEED", "12345", 1);
  apply_seed_override(c);
  EXPECT_EQ(c.problem.seed, 12345u);
  ::setenv("ALMREG_SEED", "12x", 1);
  EXPECT_THROW(apply_seed_override(c), ConfigError);
  ::unsetenv("ALMREG_SEED");
  ExperimentConfig d = parse_config(config_json());
  apply_seed_override(d);
  EXPECT_EQ(d.problem.seed, 4u);
}

TEST(Config, BuildsEveryProblemKind) {
  for (const char* kind : {"quadratic", "sparse", "lq", "tv_staircase_1d", "tv_blocks_2d"}) {
    json j = config_json();
    j["problem"]["kind"] = kind;
    j["problem"]["dims"] = std::string(kind).rfind("tv", 0) == 0 ? json({8, 8}) : json({12, 20});
    j["problem"]["support_size"] = 2;
    if (std::string(kind).rfind("tv", 0) == 0) j["problem"]["K_kind"] = "identity";
    const ProblemInstance inst = build_instance(parse_config(j));
    EXPECT_LE((inst.K.apply(inst.u_dagger) - inst.g).norm(), 1e-10) << kind;
  }
}

TEST(InstanceIo, RoundTripPreservesCertificate) {
  for (const ProblemInstance& inst :
       {gen_problem_sparse(12, 20, 2, 3), gen_problem_lq(6, 8, 1.5, 1),
        gen_problem_tv({16, 1}, TvKind::staircase_1d, BlurKind::blur, 2)}) {
    const ProblemInstance back = instance_from_json(json::parse(instance_to_json(inst).dump()));
    EXPECT_EQ(back.certified(), inst.certified()) << inst.label;
    EXPECT_LE((back.g - inst.g).norm(), 1e-14);
    EXPECT_LE((back.u_dagger - inst.u_dagger).norm(), 1e-14);
    EXPECT_EQ(back.penalty.name(), inst.penalty.name());
  }
  json j = instance_to_json(gen_problem_lq(6, 8, 1.5, 1));
  j["g"][0] = j["g"][0].get<double>() + 1.0;
  EXPECT_THROW(instance_from_json(j), ConfigError);
}
