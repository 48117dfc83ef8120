#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "almreg/alm.hpp"

using namespace almreg;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

AlmTrajectory scalar_quadratic(std::size_t steps) {
  return alm_run(identity_operator(1), vec({1}), Penalty::quadratic_identity(1), StepSchedule::constant(1.0),
                 std::nullopt, StoppingRule::fixed(steps));
}

}  // namespace

TEST(Schedule, ConstantSequenceGeometric) {
  const auto c = StepSchedule::constant(0.5);
  EXPECT_DOUBLE_EQ(c.t(4), 2.0);
  EXPECT_DOUBLE_EQ(c.tau_bar(), 0.5);
  const auto s = StepSchedule::sequence({1, 3}, 2);
  EXPECT_DOUBLE_EQ(s.tau(2), 3.0);
  EXPECT_DOUBLE_EQ(s.tau(7), 2.0);
  EXPECT_DOUBLE_EQ(s.tau_bar(), 3.0);
  const auto g = StepSchedule::geometric(1.0, 2.0, 3);
  EXPECT_DOUBLE_EQ(g.tau(3), 4.0);
  EXPECT_DOUBLE_EQ(g.tau(9), 8.0);
  EXPECT_THROW(StepSchedule::constant(0.0), ConfigError);
  EXPECT_THROW(StepSchedule::sequence({1, -1}, 1), ConfigError);
  EXPECT_THROW((void)c.tau(0), ConfigError);
}

TEST(AlmStep, ScalarRecursion) {
  const auto traj = scalar_quadratic(10);
  ASSERT_EQ(traj.states.size(), 10u);
  for (const auto& s : traj.states) {
    const double expect = 1.0 - std::ldexp(1.0, -static_cast<int>(s.n));
    EXPECT_NEAR(s.u[0], expect, 1e-10);
    EXPECT_NEAR(s.p[0], expect, 1e-10);
    EXPECT_DOUBLE_EQ(s.t, static_cast<double>(s.n));
  }
}

TEST(AlmStep, L1SoftThresholdAndUpdate) {
  const AlmState s0 = alm_initial_state(identity_operator(2), vec({3, 0.1}), Vector::Zero(2));
  const AlmState s1 = alm_step(s0, identity_operator(2), vec({3, 0.1}), Penalty::lq(1.0), 1.0, 1e-10);
  EXPECT_NEAR(s1.u[0], 2.0, 1e-8);
  EXPECT_NEAR(s1.u[1], 0.0, 1e-8);
  EXPECT_NEAR(s1.p[0], 1.0, 1e-8);
  EXPECT_NEAR(s1.p[1], 0.1, 1e-8);
}

TEST(AlmStep, SaddlePointIsFixed) {
  std::mt19937_64 rng(4);
  const LinearOperator K = dense_operator(gaussian_matrix(5, 5, rng));
  const Vector u = vec({1, 0, -2, 0, 0.5});
  const Vector g = K.apply(u);
  // K* p = sign(u) on the support, 0.3 elsewhere
  const Vector xi = vec({1, 0.3, -1, -0.2, 1});
  const Vector p = to_dense(K).transpose().lu().solve(xi);
  AlmState s = alm_initial_state(K, g, p);
  s.u = u;
  for (const auto& pen : {Penalty::lq(1.0)}) {
    const AlmState next = alm_step(s, with_estimated_norm(K), g, pen, 0.7, 1e-12, 200000);
    EXPECT_LE((next.u - u).norm(), 1e-6);
    EXPECT_LE((next.p - p).norm(), 1e-6);
  }
  const Penalty quad = Penalty::quadratic_identity(5);
  s.p = to_dense(K).transpose().lu().solve(u);
  const AlmState next = alm_step(s, K, g, quad, 2.0, 1e-12);
  EXPECT_LE((next.u - u).norm(), 1e-8);
  EXPECT_LE((next.p - s.p).norm(), 1e-8);
}

TEST(AlmRun, MorozovScalar) {
  const auto traj = alm_run(identity_operator(1), vec({1}), Penalty::quadratic_identity(1), StepSchedule::constant(1.0),
                            std::nullopt, StoppingRule::morozov(2.0, 0.1));
  EXPECT_EQ(traj.gamma, 3u);
  EXPECT_FALSE(traj.unstopped);
}

TEST(AlmRun, APrioriLengthAndCap) {
  const auto rule = StoppingRule::a_priori([](double) { return std::size_t{7}; }, 0.1);
  const auto traj = alm_run(identity_operator(1), vec({1}), Penalty::quadratic_identity(1), StepSchedule::constant(1.0),
                            std::nullopt, rule);
  EXPECT_EQ(traj.states.size(), 7u);
  EXPECT_EQ(traj.gamma, 7u);
  AlmCaps caps;
  caps.max_outer = 4;
  const auto capped = alm_run(identity_operator(1), vec({1}), Penalty::quadratic_identity(1),
                              StepSchedule::constant(1.0), std::nullopt, StoppingRule::morozov(1.01, 1e-9), caps);
  EXPECT_TRUE(capped.unstopped);
  EXPECT_EQ(capped.states.size(), 4u);
}

TEST(AlmRun, DataBelowThresholdStopsAtOne) {
  const Vector g = vec({0.3, -0.2});
  const auto traj = alm_run(identity_operator(2), g, Penalty::lq(1.0), StepSchedule::constant(1.0), std::nullopt,
                            StoppingRule::morozov(1.5, g.norm()));
  EXPECT_EQ(traj.gamma, 1u);
  EXPECT_LE(traj.states[0].u.norm(), 1e-12);
}

TEST(AlmRun, ResidualMonotone) {
  std::mt19937_64 rng(44);
  const LinearOperator K = dense_operator(gaussian_matrix(15, 25, rng));
  const Vector g = gaussian_vector(15, rng);
  for (const auto& pen : {Penalty::quadratic_identity(25), Penalty::lq(1.0), Penalty::lq(1.5),
                          Penalty::tv({5, 5}), Penalty::tv({25, 1})}) {
    const auto traj = alm_run(K, g, pen, StepSchedule::sequence({0.2, 3.0, 0.5}, 1.0), std::nullopt,
                              StoppingRule::fixed(15));
    EXPECT_EQ(residual_monotonicity_violation(traj), 0.0) << pen.name();
  }
}

TEST(DualObjective, Examples) {
  const LinearOperator I1 = identity_operator(1);
  const Penalty quad = Penalty::quadratic_identity(1);
  EXPECT_NEAR(*dual_objective(vec({1}), vec({1}), I1, quad), -0.5, 1e-15);
  EXPECT_NEAR(*dual_objective(vec({3}), vec({1}), I1, quad), 1.5, 1e-15);
  const LinearOperator I2 = identity_operator(2);
  EXPECT_NEAR(*dual_objective(vec({0.5, -1}), vec({2, 3}), I2, Penalty::lq(1.0)), -(1.0 - 3.0), 1e-15);
  EXPECT_TRUE(std::isinf(*dual_objective(vec({1.5, 0}), vec({2, 3}), I2, Penalty::lq(1.0))));
  EXPECT_FALSE(dual_objective(vec({0, 0}), vec({1, 1}), I2, Penalty::tv({2, 1})).has_value());
}

TEST(Gueler, ScalarAtMinimiserAndRandomReferences) {
  const auto traj = scalar_quadratic(12);
  const LinearOperator I1 = identity_operator(1);
  const Penalty quad = Penalty::quadratic_identity(1);
  for (const auto& pt : *gueler_slack(traj, vec({1}), vec({1}), I1, quad)) EXPECT_GE(pt.slack, 0.0);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0.0, 3.0);
  for (int i = 0; i < 20; ++i) {
    for (const auto& pt : *gueler_slack(traj, vec({nd(rng)}), vec({1}), I1, quad)) EXPECT_GE(pt.slack, -1e-10);
  }
}

TEST(Gueler, FirstStepIsProxDescent) {
  const auto traj = scalar_quadratic(1);
  const auto pts = *gueler_slack(traj, traj.p0, vec({1}), identity_operator(1), Penalty::quadratic_identity(1));
  const double p1 = traj.states[0].p[0];
  // both distance terms survive: -|p1 - p0|²/2t1 - t1 |p1 - p0|²/2tau1²
  EXPECT_NEAR(pts[0].rhs, -p1 * p1, 1e-15);
  EXPECT_GE(pts[0].slack, 0.0);
}

TEST(Gueler, RandomReferencesOnLqProblems) {
  std::mt19937_64 rng(19);
  const LinearOperator K = with_estimated_norm(dense_operator(gaussian_matrix(6, 10, rng)));
  const Vector g = gaussian_vector(6, rng);
  for (double q : {1.0, 1.5, 2.0}) {
    const Penalty pen = Penalty::lq(q);
    const auto traj = alm_run(K, g, pen, StepSchedule::constant(0.8), std::nullopt, StoppingRule::fixed(20));
    for (int i = 0; i < 20; ++i) {
      Vector ref = gaussian_vector(6, rng);
      if (q == 1.0) ref /= (K.adjoint_apply(ref).lpNorm<Eigen::Infinity>() * 1.01);
      for (const auto& pt : *gueler_slack(traj, ref, g, K, pen)) EXPECT_GE(pt.slack, -pt.eps) << q;
    }
  }
}

TEST(AlmRun, ExactDataQuadraticResidualRate) {
  std::mt19937_64 rng(33);
  const LinearOperator K = with_estimated_norm(dense_operator(gaussian_matrix(8, 12, rng)));
  const Vector p_dag = gaussian_vector(8, rng);
  const Vector u_dag = K.adjoint_apply(p_dag);
  const Vector g = K.apply(u_dag);
  const auto traj = alm_run(K, g, Penalty::quadratic_identity(12), StepSchedule::constant(0.7), std::nullopt,
                            StoppingRule::fixed(60));
  for (const auto& s : traj.states) EXPECT_LE(s.residual, 2.0 * p_dag.norm() / s.t) << s.n;
}
