#pragma once

// Finite-dimensional vectors and matrix-free linear operators.
//
// A LinearOperator is an immutable (apply, adjoint_apply) pair with fixed
// dimensions. Copies share the same implementation, so operators are cheap
// to pass around and safe to call from several threads at once.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "almreg/error.hpp"

namespace almreg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Row-major grid on which a Vector is interpreted as an image.
/// One-dimensional signals use cols == 1.
struct GridShape {
  Index rows = 1;
  Index cols = 1;

  [[nodiscard]] Index size() const { return rows * cols; }
  [[nodiscard]] bool is_1d() const { return rows == 1 || cols == 1; }
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

inline void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) {
    throw DomainError(std::string(what) + ": vector has non-finite entries");
  }
}

/// Standard normal vector from a seeded Mersenne twister.
inline Vector gaussian_vector(Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

inline Matrix gaussian_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  // column-major fill order is fixed so results are reproducible
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

class LinearOperator {
 public:
  using Map = std::function<Vector(const Vector&)>;

  enum class Kind { identity, dense, diagonal, convolution, masked_sampling, composition, custom };

  LinearOperator(Index dim_in, Index dim_out, Map apply, Map adjoint, Kind kind = Kind::custom,
                 std::optional<double> norm_hint = std::nullopt)
      : impl_(std::make_shared<const Impl>(
            Impl{dim_in, dim_out, std::move(apply), std::move(adjoint), kind, norm_hint})) {
    if (dim_in <= 0 || dim_out <= 0) {
      throw ConfigError("LinearOperator: dimensions must be positive");
    }
    if (norm_hint && !(*norm_hint >= 0.0)) {
      throw ConfigError("LinearOperator: norm hint must be nonnegative");
    }
  }

  [[nodiscard]] Index dim_in() const { return impl_->dim_in; }
  [[nodiscard]] Index dim_out() const { return impl_->dim_out; }
  [[nodiscard]] Kind kind() const { return impl_->kind; }
  [[nodiscard]] bool is_identity() const { return impl_->kind == Kind::identity; }
  [[nodiscard]] std::optional<double> norm_hint() const { return impl_->norm_hint; }

  [[nodiscard]] Vector apply(const Vector& u) const {
    if (u.size() != dim_in()) {
      throw ConfigError("LinearOperator::apply: expected input of length " +
                        std::to_string(dim_in()) + ", got " + std::to_string(u.size()));
    }
    return impl_->apply(u);
  }

  [[nodiscard]] Vector adjoint_apply(const Vector& w) const {
    if (w.size() != dim_out()) {
      throw ConfigError("LinearOperator::adjoint_apply: expected input of length " +
                        std::to_string(dim_out()) + ", got " + std::to_string(w.size()));
    }
    return impl_->adjoint(w);
  }

  [[nodiscard]] LinearOperator with_norm_hint(double norm) const {
    return LinearOperator(dim_in(), dim_out(), impl_->apply, impl_->adjoint, kind(), norm);
  }

 private:
  struct Impl {
    Index dim_in;
    Index dim_out;
    Map apply;
    Map adjoint;
    Kind kind;
    std::optional<double> norm_hint;
  };
  std::shared_ptr<const Impl> impl_;
};

// ---------------------------------------------------------------------------
// Constructors

inline LinearOperator identity_operator(Index n) {
  auto id = [](const Vector& u) { return u; };
  return {n, n, id, id, LinearOperator::Kind::identity, 1.0};
}

inline LinearOperator dense_operator(Matrix m) {
  if (m.rows() == 0 || m.cols() == 0) throw ConfigError("dense operator: empty matrix");
  if (!m.allFinite()) throw ConfigError("dense operator: non-finite entries");
  auto mat = std::make_shared<const Matrix>(std::move(m));
  return {mat->cols(), mat->rows(), [mat](const Vector& u) -> Vector { return (*mat) * u; },
          [mat](const Vector& w) -> Vector { return mat->transpose() * w; },
          LinearOperator::Kind::dense};
}

inline LinearOperator diagonal_operator(Vector weights) {
  if (weights.size() == 0) throw ConfigError("diagonal operator: empty weights");
  if (!weights.allFinite()) throw ConfigError("diagonal operator: non-finite weights");
  const double norm = weights.cwiseAbs().maxCoeff();
  auto w = std::make_shared<const Vector>(std::move(weights));
  auto op = [w](const Vector& u) -> Vector { return w->cwiseProduct(u); };
  return {w->size(), w->size(), op, op, LinearOperator::Kind::diagonal, norm};
}

namespace detail {

// half-sample symmetric extension: x[-1] = x[0], x[n] = x[n-1]
inline Index reflect(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace detail

/// 2-D convolution with an odd-sized kernel centred on each pixel and
/// symmetric boundary extension. A kernel summing to one maps constants to
/// constants.
inline LinearOperator convolution_operator(Matrix kernel, GridShape grid) {
  if (kernel.rows() % 2 == 0 || kernel.cols() % 2 == 0) {
    throw ConfigError("convolution operator: kernel dimensions must be odd");
  }
  if (grid.rows <= 0 || grid.cols <= 0) throw ConfigError("convolution operator: bad grid");
  if (!kernel.allFinite()) throw ConfigError("convolution operator: non-finite kernel");
  auto h = std::make_shared<const Matrix>(std::move(kernel));
  const Index cr = h->rows() / 2;
  const Index cc = h->cols() / 2;

  auto forward = [h, grid, cr, cc](const Vector& x) -> Vector {
    Vector y = Vector::Zero(grid.size());
    for (Index i = 0; i < grid.rows; ++i) {
      for (Index j = 0; j < grid.cols; ++j) {
        double acc = 0.0;
        for (Index a = 0; a < h->rows(); ++a) {
          const Index si = detail::reflect(i - (a - cr), grid.rows);
          for (Index b = 0; b < h->cols(); ++b) {
            const Index sj = detail::reflect(j - (b - cc), grid.cols);
            acc += (*h)(a, b) * x[si * grid.cols + sj];
          }
        }
        y[i * grid.cols + j] = acc;
      }
    }
    return y;
  };
  auto adjoint = [h, grid, cr, cc](const Vector& w) -> Vector {
    Vector x = Vector::Zero(grid.size());
    for (Index i = 0; i < grid.rows; ++i) {
      for (Index j = 0; j < grid.cols; ++j) {
        const double wij = w[i * grid.cols + j];
        for (Index a = 0; a < h->rows(); ++a) {
          const Index si = detail::reflect(i - (a - cr), grid.rows);
          for (Index b = 0; b < h->cols(); ++b) {
            const Index sj = detail::reflect(j - (b - cc), grid.cols);
            x[si * grid.cols + sj] += (*h)(a, b) * wij;
          }
        }
      }
    }
    return x;
  };
  return {grid.size(), grid.size(), forward, adjoint, LinearOperator::Kind::convolution};
}

/// Keeps the entries where mask is true, in order.
inline LinearOperator masked_sampling_operator(const std::vector<bool>& mask) {
  auto picks = std::make_shared<std::vector<Index>>();
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) picks->push_back(static_cast<Index>(i));
  if (mask.empty() || picks->empty()) {
    throw ConfigError("masked sampling operator: mask selects no entries");
  }
  const auto n = static_cast<Index>(mask.size());
  const auto m = static_cast<Index>(picks->size());
  auto forward = [picks, m](const Vector& u) -> Vector {
    Vector y(m);
    for (Index k = 0; k < m; ++k) y[k] = u[(*picks)[static_cast<std::size_t>(k)]];
    return y;
  };
  auto adjoint = [picks, n, m](const Vector& w) -> Vector {
    Vector x = Vector::Zero(n);
    for (Index k = 0; k < m; ++k) x[(*picks)[static_cast<std::size_t>(k)]] = w[k];
    return x;
  };
  return {n, m, forward, adjoint, LinearOperator::Kind::masked_sampling, 1.0};
}

/// outer ∘ inner, i.e. u ↦ outer(inner(u)).
inline LinearOperator compose(const LinearOperator& outer, const LinearOperator& inner) {
  if (inner.dim_out() != outer.dim_in()) {
    throw ConfigError("compose: inner output dimension " + std::to_string(inner.dim_out()) +
                      " does not match outer input dimension " + std::to_string(outer.dim_in()));
  }
  std::optional<double> hint;
  if (outer.norm_hint() && inner.norm_hint()) hint = *outer.norm_hint() * *inner.norm_hint();
  return {inner.dim_in(),
          outer.dim_out(),
          [outer, inner](const Vector& u) { return outer.apply(inner.apply(u)); },
          [outer, inner](const Vector& w) { return inner.adjoint_apply(outer.adjoint_apply(w)); },
          LinearOperator::Kind::composition,
          hint};
}

// ---------------------------------------------------------------------------
// Declarative operator description, used by config files and instance files.

struct OperatorSpec;

namespace opspec {
struct Identity {
  Index dim = 1;
};
struct Dense {
  Matrix matrix;
};
struct Diagonal {
  Vector weights;
};
struct Convolution {
  Matrix kernel;
  GridShape grid;
};
struct MaskedSampling {
  std::vector<bool> mask;
};
struct Composition {
  std::shared_ptr<const OperatorSpec> outer;
  std::shared_ptr<const OperatorSpec> inner;
};
}  // namespace opspec

struct OperatorSpec {
  std::variant<opspec::Identity, opspec::Dense, opspec::Diagonal, opspec::Convolution,
               opspec::MaskedSampling, opspec::Composition>
      kind;
};

inline LinearOperator build_operator(const OperatorSpec& spec) {
  return std::visit(
      [](const auto& k) -> LinearOperator {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, opspec::Identity>) {
          if (k.dim <= 0) throw ConfigError("identity operator: dimension must be positive");
          return identity_operator(k.dim);
        } else if constexpr (std::is_same_v<T, opspec::Dense>) {
          return dense_operator(k.matrix);
        } else if constexpr (std::is_same_v<T, opspec::Diagonal>) {
          return diagonal_operator(k.weights);
        } else if constexpr (std::is_same_v<T, opspec::Convolution>) {
          return convolution_operator(k.kernel, k.grid);
        } else if constexpr (std::is_same_v<T, opspec::MaskedSampling>) {
          return masked_sampling_operator(k.mask);
        } else {
          if (!k.outer || !k.inner) throw ConfigError("composition: missing operand");
          return compose(build_operator(*k.outer), build_operator(*k.inner));
        }
      },
      spec.kind);
}

// ---------------------------------------------------------------------------
// Diagnostics

/// Materialises the operator column by column. Intended for small problems.
inline Matrix to_dense(const LinearOperator& op) {
  Matrix m(op.dim_out(), op.dim_in());
  Vector e = Vector::Zero(op.dim_in());
  for (Index j = 0; j < op.dim_in(); ++j) {
    e[j] = 1.0;
    m.col(j) = op.apply(e);
    e[j] = 0.0;
  }
  return m;
}

/// max over random (u, w) of |<Ku, w> - <u, K*w>| / (|Ku| |w| + eps).
inline double adjoint_check(const LinearOperator& op, int trials, std::uint64_t seed) {
  if (trials < 1) throw ConfigError("adjoint_check: trials must be >= 1");
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Vector u = gaussian_vector(op.dim_in(), rng);
    const Vector w = gaussian_vector(op.dim_out(), rng);
    const Vector ku = op.apply(u);
    const double lhs = ku.dot(w);
    const double rhs = u.dot(op.adjoint_apply(w));
    const double scale = ku.norm() * w.norm() + std::numeric_limits<double>::epsilon();
    worst = std::max(worst, std::abs(lhs - rhs) / scale);
  }
  return worst;
}

/// Largest singular value by power iteration on K*K. The returned value is
/// the running maximum of the Rayleigh estimates, hence nondecreasing in
/// `iters` for a fixed seed.
inline double operator_norm_estimate(const LinearOperator& op, int iters = 200,
                                     std::uint64_t seed = 0) {
  if (iters < 10) throw ConfigError("operator_norm_estimate: iters must be >= 10");
  std::mt19937_64 rng(seed);
  Vector x = gaussian_vector(op.dim_in(), rng);
  x.normalize();
  double best = 0.0;
  for (int k = 0; k < iters; ++k) {
    const Vector kx = op.apply(x);
    best = std::max(best, kx.norm());
    Vector y = op.adjoint_apply(kx);
    const double ny = y.norm();
    if (ny == 0.0) break;
    x = y / ny;
  }
  return best;
}

/// Norm hint if present, else a power-iteration estimate.
inline double operator_norm(const LinearOperator& op) {
  if (auto h = op.norm_hint()) return *h;
  return operator_norm_estimate(op);
}

/// Attaches a norm estimate unless the operator already carries one.
inline LinearOperator with_estimated_norm(const LinearOperator& op) {
  if (op.norm_hint()) return op;
  return op.with_norm_hint(operator_norm_estimate(op));
}

/// Row-major, header-free CSV of a dense matrix.
inline Matrix load_dense_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open matrix file '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw ConfigError("matrix file '" + path + "': bad number '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ConfigError("matrix file '" + path + "': ragged rows");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError("matrix file '" + path + "' is empty");
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return m;
}

}  // namespace almreg
