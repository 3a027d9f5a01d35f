#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <fmt/format.h>

#include "nbo/problem.hpp"

namespace nbo {

QuadraticBilevel::QuadraticBilevel(Matrix A, Matrix B, Vector y_target, double c)
    : A_(std::move(A)), B_(std::move(B)), y_target_(std::move(y_target)), c_(c) {
  if (A_.rows() < 1 || A_.rows() != A_.cols()) throw ConfigError("A must be square and non-empty");
  if (B_.rows() < 1 || B_.cols() != A_.rows()) {
    throw ConfigError(fmt::format("B must be m x {}, got {} x {}", A_.rows(), B_.rows(), B_.cols()));
  }
  if (y_target_.size() != A_.rows()) throw ConfigError("y_target length must match A");
  if (!(c_ >= 0.0)) throw ConfigError("c must be non-negative");
  if (!A_.isApprox(A_.transpose(), 1e-12)) throw ConfigError("A must be symmetric");

  Eigen::SelfAdjointEigenSolver<Matrix> eig(A_, Eigen::EigenvaluesOnly);
  spectrum_min_ = eig.eigenvalues().minCoeff();
  spectrum_max_ = eig.eigenvalues().maxCoeff();
  if (!(spectrum_min_ > 0.0)) throw ConfigError("A must be positive definite");
  lower_map_ = A_.llt().solve(B_.transpose());
}

double QuadraticBilevel::f_value(const Vector& x, const Vector& y) const {
  check_dims(x, y);
  return 0.5 * (y - y_target_).squaredNorm() + 0.5 * c_ * x.squaredNorm();
}

double QuadraticBilevel::g_value(const Vector& x, const Vector& y) const {
  check_dims(x, y);
  return 0.5 * y.dot(A_ * y) - x.dot(B_ * y);
}

Vector QuadraticBilevel::grad1_f(const Vector& x, const Vector& y) const {
  check_dims(x, y);
  return c_ * x;
}

Vector QuadraticBilevel::grad2_f(const Vector& x, const Vector& y) const {
  check_dims(x, y);
  return y - y_target_;
}

Vector QuadraticBilevel::grad2_g(const Vector& x, const Vector& y) const {
  check_dims(x, y);
  return A_ * y - B_.transpose() * x;
}

Matrix QuadraticBilevel::hvp22_g_block(const Vector& x, const Vector& y, const Matrix& V) const {
  check_dims(x, y);
  return A_ * V;
}

Vector QuadraticBilevel::jvp12_g(const Vector& x, const Vector& y, const Vector& u) const {
  check_dims(x, y);
  return -(B_ * u);
}

std::optional<Vector> QuadraticBilevel::exact_lower_solution(const Vector& x) const {
  return Vector(lower_map_ * x);
}

double QuadraticBilevel::strong_convexity(const Vector&) const { return spectrum_min_; }

SmoothnessConstants QuadraticBilevel::smoothness(const UpperBox& box) const {
  const Index m = dim_x();
  const Index n = dim_y();
  const double radius =
      std::sqrt(static_cast<double>(m)) * std::max(std::abs(box.lower), std::abs(box.upper));

  // Hessian of g in (x, y) jointly is [[0, -B], [-B', A]].
  Matrix joint = Matrix::Zero(m + n, m + n);
  joint.topRightCorner(m, n) = -B_;
  joint.bottomLeftCorner(n, m) = -B_.transpose();
  joint.bottomRightCorner(n, n) = A_;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(joint, Eigen::EigenvaluesOnly);
  const double joint_norm = eig.eigenvalues().cwiseAbs().maxCoeff();

  Eigen::JacobiSVD<Matrix> svd(lower_map_);
  const double map_norm = svd.singularValues()(0);

  SmoothnessConstants k;
  k.mu = spectrum_min_;
  k.L_g1 = joint_norm;
  k.L_g2 = 0.0;
  k.L_f1 = std::max(1.0, c_);
  k.L_f0 = map_norm * radius + y_target_.norm();
  k.C_f0 = c_ * radius;
  return k;
}

Vector QuadraticBilevel::exact_adjoint(const Vector& x) const {
  return A_.llt().solve(lower_map_ * x - y_target_);
}

double QuadraticBilevel::phi(const Vector& x) const {
  return 0.5 * (lower_map_ * x - y_target_).squaredNorm() + 0.5 * c_ * x.squaredNorm();
}

Vector QuadraticBilevel::phi_gradient(const Vector& x) const {
  return lower_map_.transpose() * (lower_map_ * x - y_target_) + c_ * x;
}

Vector QuadraticBilevel::minimizer() const {
  const Index m = dim_x();
  Matrix normal = lower_map_.transpose() * lower_map_ + c_ * Matrix::Identity(m, m);
  return normal.ldlt().solve(lower_map_.transpose() * y_target_);
}

double QuadraticBilevel::phi_star() const { return phi(minimizer()); }

QuadraticBilevel make_quadratic_bilevel(int m, int n, double spectrum_min, double spectrum_max,
                                        std::uint64_t seed) {
  if (m < 1 || n < 1) throw ConfigError("quadratic problem needs m, n >= 1");
  if (!(spectrum_min > 0.0) || !(spectrum_min <= spectrum_max) || !std::isfinite(spectrum_max)) {
    throw ConfigError("quadratic problem needs 0 < spectrum_min <= spectrum_max");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](Index rows, Index cols) {
    Matrix M(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) M(i, j) = normal(rng);
    return M;
  };

  Vector eigs(n);
  for (int i = 0; i < n; ++i) {
    eigs(i) = n == 1 ? spectrum_min
                     : spectrum_min + (spectrum_max - spectrum_min) * i / static_cast<double>(n - 1);
  }
  Eigen::HouseholderQR<Matrix> qr(draw(n, n));
  Matrix Q = qr.householderQ();
  Matrix A = Q * eigs.asDiagonal() * Q.transpose();
  A = 0.5 * (A + A.transpose());

  Matrix B = draw(m, n) / std::sqrt(static_cast<double>(n));
  Vector y_target = draw(n, 1);
  return QuadraticBilevel(std::move(A), std::move(B), std::move(y_target), 1.0);
}

}  // namespace nbo
