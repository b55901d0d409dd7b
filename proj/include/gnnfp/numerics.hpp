#pragma once

// Dense complex/real kernels shared by the solvers and the GNN loss.
// Everything here is a pure function of its arguments.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <string>

#include "gnnfp/errors.hpp"

namespace gnnfp {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

/// Numerical tolerances used across the library. One record so tests and
/// solvers agree on the same values.
struct Tolerances {
  /// Smallest admissible Cholesky pivot relative to the largest diagonal.
  double pivot_rel = 1e-14;
  /// Relative Frobenius tolerance for Hermitian checks.
  double hermitian_rel = 1e-12;
  /// Relative residual tolerance of the power iteration.
  double power_iteration_tol = 1e-8;
  int power_iteration_cap = 500;
  /// Relative power mismatch at which the multiplier bisection stops.
  double bisection_tol = 1e-9;
  /// Relative width of the multiplier bracket at which bisection stops.
  double bisection_interval = 1e-12;
  /// Upper limit on the multiplier bracket before giving up.
  double lambda_ceiling = 1e18;
};

inline constexpr Tolerances kTolerances{};

/// Solves A X = B for Hermitian positive definite A with a Cholesky
/// factorization. Throws NotPositiveDefinite when a pivot falls under
/// `pivot_rel` times the largest diagonal entry.
template <typename DerivedA, typename DerivedB>
auto hermitian_solve(const Eigen::MatrixBase<DerivedA>& a,
                     const Eigen::MatrixBase<DerivedB>& b,
                     double pivot_rel = kTolerances.pivot_rel) {
  using Scalar = typename DerivedA::Scalar;
  using Real = typename Eigen::NumTraits<Scalar>::Real;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (a.rows() != a.cols() || a.rows() != b.rows()) {
    throw DimensionMismatch("hermitian_solve: A must be square and match B");
  }
  const Real max_diag = a.diagonal().real().maxCoeff();
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success || !(max_diag > Real(0))) {
    throw NotPositiveDefinite("hermitian_solve: factorization failed");
  }
  const auto pivots = llt.matrixLLT().diagonal().real().cwiseAbs2();
  if (pivots.minCoeff() <= Real(pivot_rel) * max_diag) {
    throw NotPositiveDefinite("hermitian_solve: pivot below tolerance");
  }
  return Matrix(llt.solve(b));
}

/// Largest eigenvalue of a Hermitian PSD matrix by power iteration from the
/// normalized all-ones vector. Stops once the eigen-residual
/// ||A x - rho x|| falls under tol * rho.
template <typename Derived>
double dominant_eigenvalue(const Eigen::MatrixBase<Derived>& a,
                           double tol = kTolerances.power_iteration_tol,
                           int max_iterations = kTolerances.power_iteration_cap) {
  using Scalar = typename Derived::Scalar;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  if (a.rows() != a.cols()) {
    throw DimensionMismatch("dominant_eigenvalue: matrix must be square");
  }
  const Eigen::Index n = a.rows();
  if (n == 0) return 0.0;
  Vector x = Vector::Ones(n) / std::sqrt(static_cast<double>(n));
  for (int it = 0; it < max_iterations; ++it) {
    Vector ax = a * x;
    const double rho = std::real(x.dot(ax));
    const double residual = (ax - rho * x).norm();
    if (residual <= tol * std::abs(rho)) return rho;
    const double norm = ax.norm();
    if (norm == 0.0) return 0.0;  // x lies in the null space; A is zero on it
    x = ax / norm;
  }
  throw NoConvergence("dominant_eigenvalue: iteration cap reached");
}

template <typename Derived>
double frobenius_norm(const Eigen::MatrixBase<Derived>& a) {
  return static_cast<double>(a.norm());
}

/// True when ||A - A^H||_F <= rel * ||A||_F.
template <typename Derived>
bool is_hermitian(const Eigen::MatrixBase<Derived>& a,
                  double rel = kTolerances.hermitian_rel) {
  if (a.rows() != a.cols()) return false;
  return (a - a.adjoint()).norm() <= rel * a.norm();
}

/// Real symmetric embedding [[Re A, -Im A], [Im A, Re A]] of a Hermitian A,
/// so that v^H A v = x^T M x with x = [Re v; Im v].
template <typename Derived>
RealMatrix real_embed(const Eigen::MatrixBase<Derived>& a,
                      double rel = kTolerances.hermitian_rel) {
  if (!is_hermitian(a, rel)) {
    throw NotHermitian("real_embed: input is not Hermitian");
  }
  const Eigen::Index n = a.rows();
  RealMatrix m(2 * n, 2 * n);
  m.topLeftCorner(n, n) = a.real();
  m.topRightCorner(n, n) = -a.imag();
  m.bottomLeftCorner(n, n) = a.imag();
  m.bottomRightCorner(n, n) = a.real();
  return m;
}

/// Stacks a complex vector as [Re v; Im v].
template <typename Derived>
RealVector real_stack(const Eigen::MatrixBase<Derived>& v) {
  RealVector x(2 * v.size());
  x.head(v.size()) = v.real();
  x.tail(v.size()) = v.imag();
  return x;
}

}  // namespace gnnfp
