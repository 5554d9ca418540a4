#pragma once

// Dense linear algebra for small dimensions: SPD factorization, symmetric
// eigendecomposition, SPD matrix square root / logarithm, the matrix
// exponential and the Gaussian log-density.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "flowjac/errors.hpp"

namespace flowjac {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Pivots and eigenvalues below this value are treated as "not SPD" rather
/// than clamped.
inline constexpr double kEigenFloor = 1e-10;
inline constexpr int kJacobiMaxSweeps = 100;

inline bool all_finite(const Matrix& a) { return a.allFinite(); }

inline double relative_error(const Matrix& got, const Matrix& want) {
  const double scale = std::max(want.norm(), 1e-300);
  return (got - want).norm() / scale;
}

inline void require_square(const Matrix& a, const char* what) {
  if (a.rows() != a.cols()) {
    throw DimensionMismatch(std::string(what) + ": matrix is " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + ", expected square");
  }
}

namespace detail {

/// Lower Cholesky factor; throws NotSpd when a pivot drops below the floor.
inline Matrix cholesky_lower(const Matrix& a) {
  const Eigen::Index n = a.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) pivot -= l(j, k) * l(j, k);
    if (!(pivot >= kEigenFloor)) {
      throw NotSpd("cholesky: pivot " + std::to_string(pivot) + " at index " + std::to_string(j) +
                   " is below the eigen floor");
    }
    const double ljj = std::sqrt(pivot);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

}  // namespace detail

/// A validated symmetric positive definite matrix. Construction factorizes
/// the matrix once; the factor is reused by every solve.
class SpdMatrix {
 public:
  explicit SpdMatrix(Matrix a) : a_(std::move(a)) {
    require_square(a_, "SpdMatrix");
    if (!a_.allFinite()) throw NotSpd("SpdMatrix: non-finite entries");
    const double scale = a_.cwiseAbs().maxCoeff();
    if ((a_ - a_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
      throw NotSpd("SpdMatrix: matrix is not symmetric");
    }
    chol_ = detail::cholesky_lower(a_);
  }

  /// Builds from (a + aᵀ)/2, for inputs that are symmetric up to rounding.
  static SpdMatrix symmetrized(const Matrix& a) {
    require_square(a, "SpdMatrix::symmetrized");
    return SpdMatrix(0.5 * (a + a.transpose()));
  }

  static SpdMatrix identity(Eigen::Index d) { return SpdMatrix(Matrix::Identity(d, d)); }

  Eigen::Index dim() const { return a_.rows(); }
  const Matrix& matrix() const { return a_; }
  const Matrix& cholesky_factor() const { return chol_; }

  Vector solve(const Vector& b) const {
    if (b.size() != dim()) throw DimensionMismatch("SpdMatrix::solve: dimension mismatch");
    Vector y = chol_.triangularView<Eigen::Lower>().solve(b);
    return chol_.transpose().triangularView<Eigen::Upper>().solve(y);
  }

  Matrix solve(const Matrix& b) const {
    if (b.rows() != dim()) throw DimensionMismatch("SpdMatrix::solve: dimension mismatch");
    Matrix y = chol_.triangularView<Eigen::Lower>().solve(b);
    return chol_.transpose().triangularView<Eigen::Upper>().solve(y);
  }

  /// ‖L⁻¹ v‖², i.e. vᵀ a⁻¹ v.
  double quadratic_form_inverse(const Vector& v) const {
    Vector y = chol_.triangularView<Eigen::Lower>().solve(v);
    return y.squaredNorm();
  }

  double log_det() const { return 2.0 * chol_.diagonal().array().log().sum(); }

 private:
  Matrix a_;
  Matrix chol_;
};

inline Vector cholesky_solve(const SpdMatrix& a, const Vector& b) { return a.solve(b); }

struct SymEig {
  Vector values;   // ascending
  Matrix vectors;  // columns are the matching orthonormal eigenvectors
};

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
inline SymEig sym_eig(const Matrix& input) {
  require_square(input, "sym_eig");
  const Eigen::Index n = input.rows();
  Matrix a = 0.5 * (input + input.transpose());
  Matrix v = Matrix::Identity(n, n);
  const double total = a.norm();

  auto off_norm = [&] {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  bool converged = false;
  for (int sweep = 0; sweep <= kJacobiMaxSweeps; ++sweep) {
    const double off = off_norm();
    if (off == 0.0 || off <= 1e-15 * total) {
      converged = true;
      break;
    }
    if (sweep == kJacobiMaxSweeps) break;
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        // Negligible relative to both diagonal entries: drop it.
        if (sweep > 3 && std::abs(a(p, p)) + 100.0 * std::abs(apq) == std::abs(a(p, p)) &&
            std::abs(a(q, q)) + 100.0 * std::abs(apq) == std::abs(a(q, q))) {
          a(p, q) = a(q, p) = 0.0;
          continue;
        }
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        const double tau = s / (1.0 + c);
        a(p, p) -= t * apq;
        a(q, q) += t * apq;
        a(p, q) = a(q, p) = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
          if (j == p || j == q) continue;
          const double g = a(j, p);
          const double h = a(j, q);
          a(j, p) = a(p, j) = g - s * (h + g * tau);
          a(j, q) = a(q, j) = h + s * (g - h * tau);
        }
        for (Eigen::Index j = 0; j < n; ++j) {
          const double g = v(j, p);
          const double h = v(j, q);
          v(j, p) = g - s * (h + g * tau);
          v(j, q) = h + s * (g - h * tau);
        }
      }
    }
  }
  if (!converged) throw NoConvergence("sym_eig: Jacobi iteration exceeded the sweep cap");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index x, Eigen::Index y) { return a(x, x) < a(y, y); });
  SymEig out{Vector(n), Matrix(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index src = order[static_cast<std::size_t>(i)];
    out.values(i) = a(src, src);
    out.vectors.col(i) = v.col(src);
  }
  return out;
}

namespace detail {

template <class Fn>
Matrix spectral_apply(const SpdMatrix& a, Fn fn, const char* what) {
  const SymEig eig = sym_eig(a.matrix());
  if (eig.values(0) < kEigenFloor) {
    throw NotSpd(std::string(what) + ": eigenvalue " + std::to_string(eig.values(0)) +
                 " below the eigen floor");
  }
  const Vector mapped = eig.values.unaryExpr(fn);
  Matrix out = eig.vectors * mapped.asDiagonal() * eig.vectors.transpose();
  return 0.5 * (out + out.transpose());
}

}  // namespace detail

inline SpdMatrix spd_sqrt(const SpdMatrix& a) {
  return SpdMatrix(detail::spectral_apply(a, [](double x) { return std::sqrt(x); }, "spd_sqrt"));
}

inline Matrix spd_inv_sqrt(const SpdMatrix& a) {
  return detail::spectral_apply(a, [](double x) { return 1.0 / std::sqrt(x); }, "spd_inv_sqrt");
}

inline Matrix spd_log(const SpdMatrix& a) {
  return detail::spectral_apply(a, [](double x) { return std::log(x); }, "spd_log");
}

/// Matrix exponential of a general square matrix: scaling and squaring around
/// a degree-6 diagonal Padé approximant.
inline Matrix mat_exp(const Matrix& l) {
  require_square(l, "mat_exp");
  if (!l.allFinite()) throw NonFiniteState("mat_exp: non-finite input");
  const Eigen::Index n = l.rows();
  const double norm1 = l.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm1 > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm1 / 0.5)));
  const Matrix x = l / std::ldexp(1.0, squarings);

  constexpr int q = 6;
  double c = 1.0;
  Matrix power = Matrix::Identity(n, n);
  Matrix num = Matrix::Identity(n, n);
  Matrix den = Matrix::Identity(n, n);
  for (int k = 1; k <= q; ++k) {
    c *= static_cast<double>(q - k + 1) / static_cast<double>(k * (2 * q - k + 1));
    power = power * x;
    num += c * power;
    den += ((k % 2 == 0) ? c : -c) * power;
  }
  Matrix r = den.partialPivLu().solve(num);
  for (int i = 0; i < squarings; ++i) r = r * r;
  return r;
}

/// log N(x; mean, cov).
inline double gaussian_logpdf(const Vector& x, const Vector& mean, const SpdMatrix& cov) {
  if (x.size() != mean.size() || x.size() != cov.dim()) {
    throw DimensionMismatch("gaussian_logpdf: dimension mismatch");
  }
  const double d = static_cast<double>(x.size());
  const double quad = cov.quadratic_form_inverse(x - mean);
  return -0.5 * (quad + d * std::log(2.0 * std::numbers::pi) + cov.log_det());
}

}  // namespace flowjac
