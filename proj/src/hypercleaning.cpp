#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "nbo/problem.hpp"

namespace nbo {
namespace {

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// W is stored row-major in a flat vector: W(k, j) = w[k * p + j].
void logits(const Vector& w, const Matrix& X, Index row, int classes, Vector& out) {
  const Index p = X.cols();
  for (int k = 0; k < classes; ++k) {
    double s = 0.0;
    for (Index j = 0; j < p; ++j) s += w(k * p + j) * X(row, j);
    out(k) = s;
  }
}

// Softmax probabilities in place; returns log-sum-exp of the input.
double softmax_inplace(Vector& z) {
  const double top = z.maxCoeff();
  double total = 0.0;
  for (Index k = 0; k < z.size(); ++k) {
    z(k) = std::exp(z(k) - top);
    total += z(k);
  }
  z /= total;
  return top + std::log(total);
}

std::vector<int> class_labels(const DatasetSplit& s, int classes, const char* which) {
  s.validate();
  std::vector<int> out(static_cast<std::size_t>(s.rows()));
  for (Index e = 0; e < s.rows(); ++e) {
    const double v = s.labels(e);
    if (v != std::floor(v) || v < 0 || v >= classes) {
      throw ConfigError(fmt::format("{} label {} is not a class index in [0, {})", which, v, classes));
    }
    out[static_cast<std::size_t>(e)] = static_cast<int>(v);
  }
  return out;
}

double largest_eigenvalue_of_gram(const Matrix& X) {
  Matrix gram = X.transpose() * X / static_cast<double>(X.rows());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().maxCoeff();
}

}  // namespace

HyperCleaning::HyperCleaning(DatasetSplit train, DatasetSplit validation, DatasetSplit test,
                             int n_classes, double c_r, std::vector<bool> corrupted)
    : p_(train.features.cols()),
      n_classes_(n_classes),
      c_r_(c_r),
      train_(std::move(train)),
      validation_(std::move(validation)),
      test_(std::move(test)),
      corrupted_(std::move(corrupted)) {
  if (n_classes_ < 2) throw ConfigError("hyper-cleaning needs at least two classes");
  if (!(c_r_ > 0.0)) throw ConfigError("c_r must be positive");
  if (p_ < 1 || train_.rows() < 1 || validation_.rows() < 1) {
    throw ConfigError("hyper-cleaning needs p >= 1 and non-empty train/validation splits");
  }
  if (validation_.features.cols() != p_ || (test_.rows() > 0 && test_.features.cols() != p_)) {
    throw ConfigError("all splits must share the feature dimension");
  }
  if (!corrupted_.empty() && corrupted_.size() != static_cast<std::size_t>(train_.rows())) {
    throw ConfigError("corruption mask must have one entry per training sample");
  }
  train_labels_ = class_labels(train_, n_classes_, "training");
  val_labels_ = class_labels(validation_, n_classes_, "validation");
  class_labels(test_, n_classes_, "test");
  train_.role = SplitRole::train;
  validation_.role = SplitRole::validation;
  test_.role = SplitRole::test;
  full_train_ = BatchSpec::full(static_cast<std::size_t>(train_.rows()));
  full_val_ = BatchSpec::full(static_cast<std::size_t>(validation_.rows()));
}

double HyperCleaning::f_value(const Vector& x, const Vector& y) const {
  check_dims(x, y);
  Vector z(n_classes_);
  double s = 0.0;
  for (auto e : full_val_.indices) {
    const auto row = static_cast<Index>(e);
    logits(y, validation_.features, row, n_classes_, z);
    const double label_logit = z(val_labels_[e]);
    s += softmax_inplace(z) - label_logit;
  }
  return s / static_cast<double>(full_val_.size());
}

double HyperCleaning::g_value(const Vector& x, const Vector& y) const {
  check_dims(x, y);
  Vector z(n_classes_);
  double s = 0.0;
  for (auto e : full_train_.indices) {
    const auto row = static_cast<Index>(e);
    logits(y, train_.features, row, n_classes_, z);
    const double label_logit = z(train_labels_[e]);
    s += sigmoid(x(row)) * (softmax_inplace(z) - label_logit);
  }
  return s / static_cast<double>(full_train_.size()) + c_r_ * y.squaredNorm();
}

Vector HyperCleaning::grad1_f(const Vector& x, const Vector& y) const {
  return grad1_f_b(x, y, full_val_);
}
Vector HyperCleaning::grad2_f(const Vector& x, const Vector& y) const {
  return grad2_f_b(x, y, full_val_);
}
Vector HyperCleaning::grad2_g(const Vector& x, const Vector& y) const {
  return grad2_g_b(x, y, full_train_);
}
Matrix HyperCleaning::hvp22_g_block(const Vector& x, const Vector& y, const Matrix& V) const {
  return hvp22_g_block_b(x, y, V, full_train_);
}
Vector HyperCleaning::jvp12_g(const Vector& x, const Vector& y, const Vector& u) const {
  return jvp12_g_b(x, y, u, full_train_);
}

std::optional<std::size_t> HyperCleaning::lower_population() const {
  return static_cast<std::size_t>(train_.rows());
}
std::optional<std::size_t> HyperCleaning::upper_population() const {
  return static_cast<std::size_t>(validation_.rows());
}

Vector HyperCleaning::grad1_f_b(const Vector& x, const Vector& y, const BatchSpec& b) const {
  check_dims(x, y);
  check_batch(b, upper_population());
  return Vector::Zero(dim_x());
}

Vector HyperCleaning::grad2_f_b(const Vector& x, const Vector& y, const BatchSpec& b) const {
  check_dims(x, y);
  check_batch(b, upper_population());
  Vector out = Vector::Zero(dim_y());
  Vector z(n_classes_);
  for (auto e : b.indices) {
    const auto row = static_cast<Index>(e);
    logits(y, validation_.features, row, n_classes_, z);
    softmax_inplace(z);
    z(val_labels_[e]) -= 1.0;
    for (int k = 0; k < n_classes_; ++k)
      for (Index j = 0; j < p_; ++j) out(k * p_ + j) += z(k) * validation_.features(row, j);
  }
  return out / static_cast<double>(b.size());
}

Vector HyperCleaning::grad2_g_b(const Vector& x, const Vector& y, const BatchSpec& b) const {
  check_dims(x, y);
  check_batch(b, lower_population());
  Vector out = Vector::Zero(dim_y());
  Vector z(n_classes_);
  for (auto e : b.indices) {
    const auto row = static_cast<Index>(e);
    logits(y, train_.features, row, n_classes_, z);
    softmax_inplace(z);
    z(train_labels_[e]) -= 1.0;
    z *= sigmoid(x(row));
    for (int k = 0; k < n_classes_; ++k)
      for (Index j = 0; j < p_; ++j) out(k * p_ + j) += z(k) * train_.features(row, j);
  }
  out /= static_cast<double>(b.size());
  out += 2.0 * c_r_ * y;
  return out;
}

Matrix HyperCleaning::hvp22_g_block_b(const Vector& x, const Vector& y, const Matrix& V,
                                      const BatchSpec& b) const {
  check_dims(x, y);
  check_batch(b, lower_population());
  if (V.rows() != dim_y()) throw ConfigError("HVP block has the wrong number of rows");
  Matrix out = Matrix::Zero(dim_y(), V.cols());
  Vector prob(n_classes_), s(n_classes_);
  for (auto e : b.indices) {
    const auto row = static_cast<Index>(e);
    logits(y, train_.features, row, n_classes_, prob);
    softmax_inplace(prob);
    const double weight = sigmoid(x(row));
    for (Index c = 0; c < V.cols(); ++c) {
      // s = V_c x, then (diag(pi) - pi pi') s.
      for (int k = 0; k < n_classes_; ++k) {
        double dot = 0.0;
        for (Index j = 0; j < p_; ++j) dot += V(k * p_ + j, c) * train_.features(row, j);
        s(k) = dot;
      }
      const double mean_s = prob.dot(s);
      for (int k = 0; k < n_classes_; ++k) {
        const double t = weight * prob(k) * (s(k) - mean_s);
        for (Index j = 0; j < p_; ++j) out(k * p_ + j, c) += t * train_.features(row, j);
      }
    }
  }
  out /= static_cast<double>(b.size());
  out += 2.0 * c_r_ * V;
  return out;
}

Vector HyperCleaning::jvp12_g_b(const Vector& x, const Vector& y, const Vector& u,
                                const BatchSpec& b) const {
  check_dims(x, y);
  check_batch(b, lower_population());
  if (u.size() != dim_y()) throw ConfigError("JVP vector has the wrong length");
  // Repeated indices add up, so each occurrence contributes 1/|B|.
  Vector out = Vector::Zero(dim_x());
  Vector z(n_classes_);
  const double scale = 1.0 / static_cast<double>(b.size());
  for (auto e : b.indices) {
    const auto row = static_cast<Index>(e);
    logits(y, train_.features, row, n_classes_, z);
    softmax_inplace(z);
    z(train_labels_[e]) -= 1.0;
    double inner = 0.0;
    for (int k = 0; k < n_classes_; ++k) {
      double ux = 0.0;
      for (Index j = 0; j < p_; ++j) ux += u(k * p_ + j) * train_.features(row, j);
      inner += z(k) * ux;
    }
    const double s = sigmoid(x(row));
    out(row) += scale * s * (1.0 - s) * inner;
  }
  return out;
}

double HyperCleaning::strong_convexity(const Vector&) const { return 2.0 * c_r_; }

SmoothnessConstants HyperCleaning::smoothness(const UpperBox& box) const {
  const double n = static_cast<double>(train_.rows());
  const double classes = n_classes_;
  const double s_hi = sigmoid(box.upper);

  double mean_norm = 0.0, mean_cubed = 0.0, max_norm = 0.0, sum_sq = 0.0;
  for (Index e = 0; e < train_.rows(); ++e) {
    const double r = train_.features.row(e).norm();
    mean_norm += r / n;
    mean_cubed += r * r * r / n;
    max_norm = std::max(max_norm, r);
    sum_sq += r * r;
  }
  double mean_val_norm = 0.0;
  for (Index e = 0; e < validation_.rows(); ++e) mean_val_norm += validation_.features.row(e).norm();
  mean_val_norm /= static_cast<double>(validation_.rows());

  // |W*| <= |grad_W g(l, 0)| / mu, and at W = 0 every softmax is uniform.
  const double mu = 2.0 * c_r_;
  const double w_radius = std::sqrt((classes - 1.0) / classes) * s_hi * mean_norm / mu;
  const double max_ce = std::log(classes) + 2.0 * w_radius * max_norm;
  const double sig2_max = 1.0 / (6.0 * std::sqrt(3.0));

  // Block bounds of the joint Hessian in (l, W): softmax curvature <= 1/2,
  // |pi - e_label| <= sqrt 2, |sigmoid'| <= 1/4.
  const double ww = 0.5 * s_hi * largest_eigenvalue_of_gram(train_.features) + mu;
  const double lw = std::sqrt(2.0) * 0.25 * std::sqrt(sum_sq) / n;
  const double ll = sig2_max * max_ce / n;

  SmoothnessConstants k;
  k.mu = mu;
  k.L_g1 = ww + lw + ll;
  k.L_g2 = s_hi * mean_cubed + 0.5 * 0.25 * max_norm * max_norm / n +
           sig2_max * std::sqrt(2.0) * max_norm / n;
  k.L_f1 = 0.5 * largest_eigenvalue_of_gram(validation_.features);
  k.L_f0 = std::sqrt(2.0) * mean_val_norm;
  k.C_f0 = 0.0;
  return k;
}

std::optional<ClassifierShape> HyperCleaning::classifier() const {
  return ClassifierShape{n_classes_, p_};
}

const DatasetSplit* HyperCleaning::split(SplitRole role) const {
  switch (role) {
    case SplitRole::train:
      return &train_;
    case SplitRole::validation:
      return &validation_;
    case SplitRole::test:
      return test_.rows() > 0 ? &test_ : nullptr;
  }
  return nullptr;
}

HyperCleaning make_hypercleaning(int n_train, int n_val, int n_test, int p, int n_classes,
                                 double p_corrupt, double c_r, std::uint64_t seed) {
  if (!(p_corrupt >= 0.0 && p_corrupt <= 1.0)) throw ConfigError("p_corrupt must lie in [0, 1]");
  if (n_train < 1 || n_val < 1 || n_test < 0 || p < 1 || n_classes < 2) {
    throw ConfigError("hyper-cleaning needs n_train, n_val, p >= 1, n_test >= 0, n_classes >= 2");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix w_true(n_classes, p);
  for (Index k = 0; k < n_classes; ++k)
    for (Index j = 0; j < p; ++j) w_true(k, j) = normal(rng);

  auto draw = [&](int rows, SplitRole role) {
    DatasetSplit s{Matrix(rows, p), Vector(rows), role};
    for (Index e = 0; e < rows; ++e) {
      for (Index j = 0; j < p; ++j) s.features(e, j) = normal(rng);
      Index best = 0;
      (w_true * s.features.row(e).transpose()).maxCoeff(&best);
      s.labels(e) = static_cast<double>(best);
    }
    return s;
  };
  DatasetSplit train = draw(n_train, SplitRole::train);
  DatasetSplit val = draw(n_val, SplitRole::validation);
  DatasetSplit test = draw(n_test, SplitRole::test);

  std::bernoulli_distribution flip(p_corrupt);
  std::uniform_int_distribution<int> other(0, n_classes - 2);
  std::vector<bool> corrupted(static_cast<std::size_t>(n_train), false);
  for (Index e = 0; e < n_train; ++e) {
    if (!flip(rng)) continue;
    int label = other(rng);
    if (label >= static_cast<int>(train.labels(e))) ++label;
    train.labels(e) = label;
    corrupted[static_cast<std::size_t>(e)] = true;
  }
  return HyperCleaning(std::move(train), std::move(val), std::move(test), n_classes, c_r,
                       std::move(corrupted));
}

}  // namespace nbo
