#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <random>

#include "almreg/linop.hpp"

using namespace almreg;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

std::vector<LinearOperator> zoo() {
  std::mt19937_64 rng(3);
  Matrix kernel(3, 3);
  kernel << 1, 2, 1, 2, 4, 2, 1, 2, 1;
  kernel /= 16.0;
  Matrix kernel1d(5, 1);
  kernel1d << 0.1, 0.2, 0.4, 0.2, 0.1;
  std::vector<bool> mask{true, false, true, true, false, true, false, true};
  const LinearOperator dense = dense_operator(gaussian_matrix(6, 8, rng));
  return {identity_operator(7),
          dense,
          diagonal_operator(gaussian_vector(5, rng)),
          convolution_operator(kernel, {5, 6}),
          convolution_operator(kernel1d, {9, 1}),
          masked_sampling_operator(mask),
          compose(dense, masked_sampling_operator(std::vector<bool>(8, true))),
          compose(masked_sampling_operator({true, false, true, true, false, true}), dense)};
}

}  // namespace

TEST(BuildOperator, IdentityAppliesUnchanged) {
  const LinearOperator op = build_operator({opspec::Identity{3}});
  EXPECT_EQ(op.apply(vec({1, 2, 3})), vec({1, 2, 3}));
}

TEST(BuildOperator, DiagonalScales) {
  const LinearOperator op = build_operator({opspec::Diagonal{vec({3, 1})}});
  EXPECT_EQ(op.apply(vec({1, 1})), vec({3, 1}));
}

TEST(BuildOperator, DensePermutationAdjoint) {
  Matrix m(2, 2);
  m << 0, 1, 1, 0;
  const LinearOperator op = build_operator({opspec::Dense{m}});
  EXPECT_EQ(op.adjoint_apply(vec({4, 7})), vec({7, 4}));
}

TEST(BuildOperator, DimensionMismatchIsConfigError) {
  const LinearOperator op = identity_operator(3);
  EXPECT_THROW((void)op.apply(Vector::Zero(4)), ConfigError);
  EXPECT_THROW((void)op.adjoint_apply(Vector::Zero(2)), ConfigError);
  EXPECT_THROW(compose(identity_operator(3), identity_operator(4)), ConfigError);
  EXPECT_THROW(convolution_operator(Matrix::Ones(2, 3), {4, 4}), ConfigError);
  EXPECT_THROW(build_operator({opspec::Identity{0}}), ConfigError);
}

TEST(BuildOperator, CompositionFromSpec) {
  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  auto outer = std::make_shared<const OperatorSpec>(OperatorSpec{opspec::Diagonal{vec({2, -1})}});
  auto inner = std::make_shared<const OperatorSpec>(OperatorSpec{opspec::Dense{m}});
  const LinearOperator op = build_operator({opspec::Composition{outer, inner}});
  EXPECT_EQ(op.apply(vec({1, 0, 1})), vec({8, -10}));
}

TEST(BuildOperator, MaskedSamplingPicksEntries) {
  const LinearOperator op = masked_sampling_operator({false, true, true, false});
  EXPECT_EQ(op.apply(vec({1, 2, 3, 4})), vec({2, 3}));
  EXPECT_EQ(op.adjoint_apply(vec({5, 6})), vec({0, 5, 6, 0}));
}

TEST(AdjointCheck, IdentityIsExact) { EXPECT_LE(adjoint_check(identity_operator(9), 20, 1), 1e-15); }

TEST(AdjointCheck, DenseTranspose) {
  std::mt19937_64 rng(1);
  EXPECT_LE(adjoint_check(dense_operator(gaussian_matrix(7, 4, rng)), 50, 2), 1e-12);
}

TEST(AdjointCheck, WrongAdjointDetected) {
  std::mt19937_64 rng(5);
  const Matrix a = gaussian_matrix(4, 4, rng);
  Matrix wrong = a.transpose();
  wrong(0, 0) = -wrong(0, 0);
  const LinearOperator bad(4, 4, [a](const Vector& u) { return Vector(a * u); },
                           [wrong](const Vector& w) { return Vector(wrong * w); });
  EXPECT_GE(adjoint_check(bad, 200, 3), 0.1);
}

TEST(AdjointCheck, EveryOperatorFamilyHundredPairs) {
  for (const auto& op : zoo()) EXPECT_LE(adjoint_check(op, 100, 11), 1e-10);
}

TEST(Compose, AdjointIsReversedProduct) {
  std::mt19937_64 rng(9);
  const LinearOperator a = dense_operator(gaussian_matrix(3, 5, rng));
  const LinearOperator b = dense_operator(gaussian_matrix(5, 4, rng));
  const LinearOperator ab = compose(a, b);
  for (int t = 0; t < 10; ++t) {
    const Vector w = gaussian_vector(3, rng);
    const Vector lhs = ab.adjoint_apply(w);
    const Vector rhs = b.adjoint_apply(a.adjoint_apply(w));
    EXPECT_LE((lhs - rhs).norm(), 1e-12 * rhs.norm());
  }
}

TEST(Convolution, ConstantsPreservedForUnitSumKernel) {
  Matrix kernel(3, 5);
  kernel.setConstant(1.0 / 15.0);
  kernel(1, 2) += 0.2;
  kernel /= kernel.sum();
  const LinearOperator op = convolution_operator(kernel, {6, 7});
  const Vector y = op.apply(Vector::Constant(42, 2.5));
  EXPECT_LE((y.array() - 2.5).abs().maxCoeff(), 1e-14);
}

TEST(Convolution, MatchesDirectReflectedSum) {
  Matrix kernel(3, 1);
  kernel << 0.25, 0.5, 0.25;
  const LinearOperator op = convolution_operator(kernel, {4, 1});
  // half-sample reflection: x[-1] = x[0], x[4] = x[3]
  EXPECT_LE((op.apply(vec({1, 2, 3, 4})) - vec({1.25, 2, 3, 3.75})).norm(), 1e-15);
}

TEST(OperatorNorm, Identity) { EXPECT_NEAR(operator_norm_estimate(identity_operator(5)), 1.0, 1e-8); }

TEST(OperatorNorm, Diagonal) {
  EXPECT_NEAR(operator_norm_estimate(diagonal_operator(vec({3, 1}))), 3.0, 1e-8);
}

TEST(OperatorNorm, MatchesEigenOracle) {
  std::mt19937_64 rng(21);
  const Matrix a = gaussian_matrix(5, 5, rng);
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(a.transpose() * a);
  const double sigma = std::sqrt(eig.eigenvalues().maxCoeff());
  const double est = operator_norm_estimate(dense_operator(a), 2000, 4);
  EXPECT_NEAR(est, sigma, 1e-6);
  EXPECT_LE(est, sigma + 1e-6);
}

TEST(OperatorNorm, NondecreasingInIters) {
  std::mt19937_64 rng(8);
  const LinearOperator op = dense_operator(gaussian_matrix(6, 9, rng));
  double prev = 0.0;
  for (int it : {10, 20, 40, 80, 160}) {
    const double v = operator_norm_estimate(op, it, 7);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(OperatorNorm, ZeroOperatorAndTooFewIters) {
  EXPECT_EQ(operator_norm_estimate(diagonal_operator(Vector::Zero(4))), 0.0);
  EXPECT_THROW(operator_norm_estimate(identity_operator(2), 9), ConfigError);
}

TEST(ToDense, RoundTripsDenseMatrix) {
  std::mt19937_64 rng(2);
  const Matrix a = gaussian_matrix(3, 4, rng);
  EXPECT_EQ(to_dense(dense_operator(a)), a);
}

TEST(LoadCsv, ReadsRowMajor) {
  const std::string path = ::testing::TempDir() + "almreg_matrix.csv";
  {
    std::ofstream out(path);
    out << "1,2,3\n4,5,6\n";
  }
  const Matrix m = load_dense_csv(path);
  ASSERT_EQ(m.rows(), 2);
  ASSERT_EQ(m.cols(), 3);
  EXPECT_EQ(m(1, 0), 4.0);
  EXPECT_EQ(m(0, 2), 3.0);
  std::remove(path.c_str());
  EXPECT_THROW(load_dense_csv(path), IoError);
}

TEST(LoadCsv, RaggedRowsRejected) {
  const std::string path = ::testing::TempDir() + "almreg_ragged.csv";
  {
    std::ofstream out(path);
    out << "1,2\n3\n";
  }
  EXPECT_THROW(load_dense_csv(path), ConfigError);
  std::remove(path.c_str());
}
