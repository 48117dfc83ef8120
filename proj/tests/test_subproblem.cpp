#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "almreg/alm.hpp"
#include "almreg/subproblem.hpp"

using namespace almreg;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

double objective(const Penalty& p, const SubproblemSpec& s, const Vector& u) {
  return 0.5 * s.tau * (s.K.apply(u) - s.b).squaredNorm() + penalty_eval(p, u);
}

// 1-D ROF by projected gradient on the dual, many iterations
Vector rof_1d_oracle(const Vector& y, double lambda) {
  const Index n = y.size();
  const GridShape g{n, 1};
  Vector z = Vector::Zero(2 * n);
  for (int it = 0; it < 200000; ++it) {
    const Vector x = y - grid_gradient_adjoint(z, g);
    z += 0.25 * grid_gradient(x, g);
    for (Index k = 0; k < n - 1; ++k) z[k] = std::clamp(z[k], -lambda, lambda);
  }
  return y - grid_gradient_adjoint(z, g);
}

Matrix unit_norm(Matrix m) {
  return m / Eigen::JacobiSVD<Matrix>(m).singularValues()(0);
}

}  // namespace

TEST(Subproblem, ScalarQuadraticClosedForm) {
  const SubproblemSpec s{identity_operator(1), vec({1}), 1.0};
  EXPECT_NEAR(solve_subproblem(Penalty::quadratic_identity(1), s).u[0], 0.5, 1e-12);
}

TEST(Subproblem, L1IsSoftThreshold) {
  const SubproblemSpec s{identity_operator(2), vec({3, 0.1}), 1.0, 1e-12};
  const Vector u = solve_subproblem(Penalty::lq(1.0), s).u;
  EXPECT_NEAR(u[0], 2.0, 1e-8);
  EXPECT_NEAR(u[1], 0.0, 1e-8);
}

TEST(Subproblem, TvLargeTauReturnsData) {
  const Vector b = vec({0, 0, 1, 1});
  const SubproblemSpec s{identity_operator(4), b, 1e6};
  const Vector u = solve_subproblem(Penalty::tv({4, 1}), s).u;
  EXPECT_LE((u - b).lpNorm<Eigen::Infinity>(), 1e-3);
}

TEST(Subproblem, WrongLengthsRejected) {
  const SubproblemSpec s{identity_operator(3), vec({1, 2}), 1.0};
  EXPECT_THROW(solve_subproblem(Penalty::lq(1.5), s), ConfigError);
  const SubproblemSpec bad_tau{identity_operator(2), vec({1, 2}), 0.0};
  EXPECT_THROW(solve_subproblem(Penalty::lq(1.5), bad_tau), ConfigError);
}

TEST(Subproblem, NoDescentUnderRandomPerturbation) {
  std::mt19937_64 rng(17);
  const LinearOperator K = with_estimated_norm(dense_operator(gaussian_matrix(12, 9, rng)));
  std::vector<Penalty> pens{Penalty::quadratic_identity(9),
                            Penalty::quadratic(dense_operator(gaussian_matrix(9, 9, rng))),
                            Penalty::lq(1.0), Penalty::lq(1.3), Penalty::lq(1.7), Penalty::lq(2.0)};
  for (const auto& pen : pens) {
    SubproblemSpec s{K, gaussian_vector(12, rng), 2.5, 1e-11, 100000};
    const Vector u = solve_subproblem(pen, s).u;
    const double f = objective(pen, s, u);
    for (int i = 0; i < 50; ++i) {
      const Vector d = gaussian_vector(9, rng).normalized();
      EXPECT_GE(objective(pen, s, u + 1e-4 * d) - f, -1e-8 * (1.0 + std::abs(f))) << pen.name();
    }
  }
}

TEST(Subproblem, Tv1dDirectSolverAgreesWithDualOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Vector y = gaussian_vector(10, rng);
    for (double lambda : {0.05, 0.3, 2.0}) {
      const Vector direct = detail::tv1d_denoise(y, lambda);
      EXPECT_LE((direct - rof_1d_oracle(y, lambda)).lpNorm<Eigen::Infinity>(), 1e-8);
    }
  }
}

TEST(Subproblem, TvPrimalDualMatchesDirectSolver) {
  std::mt19937_64 rng(8);
  const Vector b = gaussian_vector(16, rng);
  const double tau = 1.5;
  const Vector exact = detail::tv1d_denoise(b, 1.0 / tau);
  // a dense identity forces the general primal-dual path
  const SubproblemSpec s{dense_operator(Matrix::Identity(16, 16)), b, tau, 1e-9, 200000};
  const SubproblemResult r = solve_subproblem(Penalty::tv({16, 1}), s);
  EXPECT_FALSE(r.inexact);
  EXPECT_LE((r.u - exact).norm(), 1e-4);
}

TEST(Subproblem, Tv2dGapCertificate) {
  std::mt19937_64 rng(9);
  const GridShape g{6, 5};
  const Vector b = gaussian_vector(30, rng);
  const SubproblemSpec s{identity_operator(30), b, 0.8, 1e-6, 100000};
  for (auto flavor : {TvFlavor::anisotropic, TvFlavor::isotropic}) {
    const Penalty pen = Penalty::tv(g, flavor);
    const SubproblemResult r = solve_subproblem(pen, s);
    EXPECT_FALSE(r.inexact);
    const double f = objective(pen, s, r.u);
    for (int i = 0; i < 50; ++i) {
      const Vector d = gaussian_vector(30, rng).normalized();
      EXPECT_GE(objective(pen, s, r.u + 1e-3 * d) - f, -1e-6 * (1.0 + std::abs(f)));
    }
  }
}

TEST(Subproblem, DualUpdateGivesSubgradient) {
  std::mt19937_64 rng(23);
  // unit operator norm, as for every generated problem
  const LinearOperator K = with_estimated_norm(dense_operator(unit_norm(gaussian_matrix(10, 14, rng))));
  const Vector g = gaussian_vector(10, rng);
  for (const auto& pen : {Penalty::quadratic_identity(14), Penalty::lq(1.0), Penalty::lq(1.5)}) {
    const double tol = default_inner_tol(pen);
    AlmState s = alm_initial_state(K, g, Vector::Zero(10));
    for (int n = 0; n < 5; ++n) {
      s = alm_step(s, K, g, pen, 1.0, tol, 200000);
      const double gap = *fenchel_gap(pen, s.u, K.adjoint_apply(s.p));
      // the inner measure is relative to max(1, |u|) and the gap is bilinear in (u, xi)
      const double scale = std::max(1.0, s.u.squaredNorm());
      EXPECT_LE(gap, 100.0 * tol * scale) << pen.name() << " n=" << s.n;
    }
  }
}
