#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "nbo/problem.hpp"

namespace nbo {
namespace {

// psi(t) = log(1 + e^-t) and its derivatives.
double psi(double t) { return t >= 0.0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t)); }
double psi1(double t) { return -1.0 / (1.0 + std::exp(t)); }
double psi2(double t) {
  const double s = 1.0 / (1.0 + std::exp(-t));
  return s * (1.0 - s);
}
// max |psi'''| = max_s |s(1-s)(1-2s)| over s in (0, 1).
const double kPsi3Max = 1.0 / (6.0 * std::sqrt(3.0));

bool covers_in_order(const BatchSpec& b, Index rows) {
  if (static_cast<Index>(b.size()) != rows) return false;
  for (std::size_t i = 0; i < b.size(); ++i)
    if (b.indices[i] != i) return false;
  return true;
}

// Calls fn on the rows of Z selected by b, without copying for the full batch
// so the deterministic and full-batch oracles run the same arithmetic.
template <typename Fn>
auto with_rows(const Matrix& Z, const BatchSpec& b, Fn&& fn) {
  if (covers_in_order(b, Z.rows())) return fn(Z);
  const Matrix Zb = Z(b.indices, Eigen::all);
  return fn(Zb);
}

double largest_eigenvalue_of_gram(const Matrix& Z) {
  if (Z.rows() == 0) return 0.0;
  Matrix gram = Z.transpose() * Z / static_cast<double>(Z.rows());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().maxCoeff();
}

Matrix signed_rows(const DatasetSplit& s) {
  Matrix Z = s.features;
  for (Index e = 0; e < Z.rows(); ++e) Z.row(e) *= s.labels(e);
  return Z;
}

void require_binary(const DatasetSplit& s, const char* which) {
  s.validate();
  for (Index e = 0; e < s.labels.size(); ++e) {
    if (s.labels(e) != 1.0 && s.labels(e) != -1.0) {
      throw ConfigError(fmt::format("{} labels must be +1 or -1", which));
    }
  }
}

}  // namespace

LogisticHyperparameter::LogisticHyperparameter(DatasetSplit train, DatasetSplit validation,
                                               std::optional<DatasetSplit> test)
    : p_(train.features.cols()),
      train_(std::move(train)),
      validation_(std::move(validation)),
      test_(std::move(test)) {
  require_binary(train_, "training");
  require_binary(validation_, "validation");
  if (test_) require_binary(*test_, "test");
  if (p_ < 1 || train_.rows() < 1 || validation_.rows() < 1) {
    throw ConfigError("logistic problem needs p >= 1 and non-empty train/validation splits");
  }
  if (validation_.features.cols() != p_ || (test_ && test_->features.cols() != p_)) {
    throw ConfigError("all splits must share the feature dimension");
  }
  train_.role = SplitRole::train;
  validation_.role = SplitRole::validation;
  if (test_) test_->role = SplitRole::test;
  z_train_ = signed_rows(train_);
  z_val_ = signed_rows(validation_);
  full_train_ = BatchSpec::full(static_cast<std::size_t>(train_.rows()));
  full_val_ = BatchSpec::full(static_cast<std::size_t>(validation_.rows()));
}

Vector LogisticHyperparameter::batch_loss_gradient(const Matrix& Z, const Vector& w,
                                                   const BatchSpec& b) const {
  return with_rows(Z, b, [&](const auto& Zb) -> Vector {
    const Vector coef = (Zb * w).unaryExpr(&psi1);
    return Zb.transpose() * coef / static_cast<double>(b.size());
  });
}

double LogisticHyperparameter::f_value(const Vector& x, const Vector& y) const {
  check_dims(x, y);
  return (z_val_ * y).unaryExpr(&psi).mean();
}

double LogisticHyperparameter::g_value(const Vector& x, const Vector& y) const {
  check_dims(x, y);
  return (z_train_ * y).unaryExpr(&psi).mean() +
         0.5 * (x.array().exp() * y.array().square()).sum();
}

Vector LogisticHyperparameter::grad1_f(const Vector& x, const Vector& y) const {
  return grad1_f_b(x, y, full_val_);
}
Vector LogisticHyperparameter::grad2_f(const Vector& x, const Vector& y) const {
  return grad2_f_b(x, y, full_val_);
}
Vector LogisticHyperparameter::grad2_g(const Vector& x, const Vector& y) const {
  return grad2_g_b(x, y, full_train_);
}
Matrix LogisticHyperparameter::hvp22_g_block(const Vector& x, const Vector& y,
                                             const Matrix& V) const {
  return hvp22_g_block_b(x, y, V, full_train_);
}
Vector LogisticHyperparameter::jvp12_g(const Vector& x, const Vector& y, const Vector& u) const {
  return jvp12_g_b(x, y, u, full_train_);
}

std::optional<std::size_t> LogisticHyperparameter::lower_population() const {
  return static_cast<std::size_t>(train_.rows());
}
std::optional<std::size_t> LogisticHyperparameter::upper_population() const {
  return static_cast<std::size_t>(validation_.rows());
}

Vector LogisticHyperparameter::grad1_f_b(const Vector& x, const Vector& y,
                                         const BatchSpec& b) const {
  check_dims(x, y);
  check_batch(b, upper_population());
  return Vector::Zero(p_);
}

Vector LogisticHyperparameter::grad2_f_b(const Vector& x, const Vector& y,
                                         const BatchSpec& b) const {
  check_dims(x, y);
  check_batch(b, upper_population());
  return batch_loss_gradient(z_val_, y, b);
}

Vector LogisticHyperparameter::grad2_g_b(const Vector& x, const Vector& y,
                                         const BatchSpec& b) const {
  check_dims(x, y);
  check_batch(b, lower_population());
  Vector out = batch_loss_gradient(z_train_, y, b);
  out.array() += x.array().exp() * y.array();
  return out;
}

Matrix LogisticHyperparameter::hvp22_g_block_b(const Vector& x, const Vector& y, const Matrix& V,
                                               const BatchSpec& b) const {
  check_dims(x, y);
  check_batch(b, lower_population());
  if (V.rows() != p_) throw ConfigError("HVP block has the wrong number of rows");
  Matrix out = with_rows(z_train_, b, [&](const auto& Zb) -> Matrix {
    const Vector h = (Zb * y).unaryExpr(&psi2);
    const Matrix S = h.asDiagonal() * (Zb * V);
    return Zb.transpose() * S / static_cast<double>(b.size());
  });
  const Index k = V.cols();
  const Vector ridge = x.array().exp();
  for (Index c = 0; c < k; ++c) out.col(c).array() += ridge.array() * V.col(c).array();
  return out;
}

Vector LogisticHyperparameter::jvp12_g_b(const Vector& x, const Vector& y, const Vector& u,
                                         const BatchSpec& b) const {
  check_dims(x, y);
  check_batch(b, lower_population());
  // Only the ridge term couples l and w.
  return (x.array().exp() * y.array() * u.array()).matrix();
}

double LogisticHyperparameter::strong_convexity(const Vector& x) const {
  return std::exp(x.minCoeff());
}

double LogisticHyperparameter::hessian_lipschitz() const {
  double cubed = 0.0;
  for (Index e = 0; e < z_train_.rows(); ++e) cubed += std::pow(z_train_.row(e).norm(), 3);
  return kPsi3Max * cubed / static_cast<double>(z_train_.rows());
}

SmoothnessConstants LogisticHyperparameter::smoothness(const UpperBox& box) const {
  const double e_lo = std::exp(box.lower);
  const double e_hi = std::exp(box.upper);
  // |w*(l)| <= |grad_w g(l, 0)| / mu and grad_w g(l, 0) = -mean(z)/2 for every l.
  const double w_radius = 0.5 * z_train_.colwise().mean().norm() / e_lo;

  double mean_val_norm = 0.0;
  for (Index e = 0; e < z_val_.rows(); ++e) mean_val_norm += z_val_.row(e).norm();
  mean_val_norm /= static_cast<double>(z_val_.rows());

  SmoothnessConstants k;
  k.mu = e_lo;
  k.L_g1 = 0.25 * largest_eigenvalue_of_gram(z_train_) + e_hi + e_hi * w_radius +
           0.5 * e_hi * w_radius * w_radius;
  k.L_g2 = hessian_lipschitz() + e_hi * (1.0 + w_radius + 0.5 * w_radius * w_radius);
  k.L_f1 = 0.25 * largest_eigenvalue_of_gram(z_val_);
  k.L_f0 = mean_val_norm;
  k.C_f0 = 0.0;
  return k;
}

std::optional<ClassifierShape> LogisticHyperparameter::classifier() const {
  return ClassifierShape{1, p_};
}

const DatasetSplit* LogisticHyperparameter::split(SplitRole role) const {
  switch (role) {
    case SplitRole::train:
      return &train_;
    case SplitRole::validation:
      return &validation_;
    case SplitRole::test:
      return test_ ? &*test_ : nullptr;
  }
  return nullptr;
}

LogisticHyperparameter make_synthetic_logistic(int n_train, int n_val, int p, double r_prime,
                                               std::uint64_t seed) {
  if (n_train < 1 || n_val < 1 || p < 1) {
    throw ConfigError("synthetic logistic problem needs n_train, n_val, p >= 1");
  }
  if (!(r_prime > 0.0)) throw ConfigError("r_prime must be positive");

  const Index n = n_train + n_val;
  for (std::uint64_t attempt = seed;; ++attempt) {
    std::mt19937_64 rng(attempt);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector w_true(p);
    for (auto& v : w_true) v = normal(rng);

    Matrix X(n, p);
    Vector score(n);
    for (Index e = 0; e < n; ++e) {
      for (Index j = 0; j < p; ++j) X(e, j) = r_prime * normal(rng);
      score(e) = X.row(e).dot(w_true) + 0.1 * normal(rng);
    }

    std::vector<double> sorted(score.begin(), score.end());
    const auto mid = sorted.begin() + n / 2;
    std::nth_element(sorted.begin(), mid, sorted.end());
    double median = *mid;
    if (n % 2 == 0) median = 0.5 * (median + *std::max_element(sorted.begin(), mid));

    Vector labels(n);
    for (Index e = 0; e < n; ++e) labels(e) = score(e) > median ? 1.0 : -1.0;

    DatasetSplit train{X.topRows(n_train), labels.head(n_train), SplitRole::train};
    DatasetSplit val{X.bottomRows(n_val), labels.tail(n_val), SplitRole::validation};
    const bool degenerate = train.labels.cwiseAbs().sum() == std::abs(train.labels.sum()) ||
                            val.labels.cwiseAbs().sum() == std::abs(val.labels.sum());
    if (!degenerate) return LogisticHyperparameter(std::move(train), std::move(val));
    spdlog::warn("synthetic logistic data with seed {} has a single-class split; retrying with {}",
                 attempt, attempt + 1);
  }
}

}  // namespace nbo
