#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include "nbo/constants.hpp"
#include "nbo/types.hpp"

namespace nbo {

/// Sample indices drawn for one stochastic oracle call. Repeated indices are
/// allowed (sampling with replacement); order matters only for rounding.
struct BatchSpec {
  std::vector<std::size_t> indices;

  std::size_t size() const { return indices.size(); }

  /// All samples 0..population-1 in order.
  static BatchSpec full(std::size_t population);
  /// `size` indices uniform on [0, population) with replacement.
  static BatchSpec sample(std::size_t population, std::size_t size, std::mt19937_64& rng);
};

enum class SplitRole { train, validation, test };

struct DatasetSplit {
  Matrix features;  ///< one sample per row
  Vector labels;    ///< +-1 for binary problems, class index for multiclass
  SplitRole role = SplitRole::train;

  Index rows() const { return features.rows(); }
  /// Throws ConfigError on shape mismatch or non-finite entries.
  void validate() const;
};

/// How the lower-level variable is read as a linear classifier.
struct ClassifierShape {
  int n_classes;  ///< 1 means a binary sign classifier
  Index n_features;
};

/// Per-coordinate box for the upper-level variable over which smoothness
/// constants are bounded.
struct UpperBox {
  double lower = -1.0;
  double upper = 1.0;
};

/// Oracle bundle of a bilevel problem min_x f(x, y*(x)), y*(x) = argmin_y g(x, y).
///
/// Implementations are immutable after construction, so a single instance can
/// serve concurrent runs. Finite-sum problems implement the batched oracles;
/// their deterministic oracles evaluate the batched path on the full index
/// list so both agree bit for bit.
class BilevelProblem {
 public:
  virtual ~BilevelProblem() = default;

  virtual std::string_view kind() const = 0;
  virtual Index dim_x() const = 0;
  virtual Index dim_y() const = 0;

  virtual double f_value(const Vector& x, const Vector& y) const = 0;
  virtual double g_value(const Vector& x, const Vector& y) const = 0;
  virtual Vector grad1_f(const Vector& x, const Vector& y) const = 0;
  virtual Vector grad2_f(const Vector& x, const Vector& y) const = 0;
  virtual Vector grad2_g(const Vector& x, const Vector& y) const = 0;
  /// Hessian of g in y applied to each column of V.
  virtual Matrix hvp22_g_block(const Vector& x, const Vector& y, const Matrix& V) const = 0;
  /// Cross derivative d/dx <grad_y g(x, y), u>.
  virtual Vector jvp12_g(const Vector& x, const Vector& y, const Vector& u) const = 0;

  Vector hvp22_g(const Vector& x, const Vector& y, const Vector& v) const;

  // Finite-sum structure. f-side batches index upper_population(), g-side
  // batches index lower_population().
  virtual std::optional<std::size_t> lower_population() const { return std::nullopt; }
  virtual std::optional<std::size_t> upper_population() const { return std::nullopt; }
  bool is_finite_sum() const { return lower_population().has_value(); }

  virtual Vector grad1_f_b(const Vector& x, const Vector& y, const BatchSpec& b) const;
  virtual Vector grad2_f_b(const Vector& x, const Vector& y, const BatchSpec& b) const;
  virtual Vector grad2_g_b(const Vector& x, const Vector& y, const BatchSpec& b) const;
  virtual Matrix hvp22_g_block_b(const Vector& x, const Vector& y, const Matrix& V,
                                 const BatchSpec& b) const;
  virtual Vector jvp12_g_b(const Vector& x, const Vector& y, const Vector& u,
                           const BatchSpec& b) const;

  Vector hvp22_g_b(const Vector& x, const Vector& y, const Vector& v, const BatchSpec& b) const;

  /// Closed-form y*(x) for diagnostic problems.
  virtual std::optional<Vector> exact_lower_solution(const Vector& /*x*/) const {
    return std::nullopt;
  }

  /// Strong convexity modulus of g(x, .) valid at this x.
  virtual double strong_convexity(const Vector& x) const = 0;

  /// Conservative constants valid for x inside `box`.
  virtual SmoothnessConstants smoothness(const UpperBox& box) const = 0;

  virtual std::optional<ClassifierShape> classifier() const { return std::nullopt; }
  virtual const DatasetSplit* split(SplitRole /*role*/) const { return nullptr; }

 protected:
  void check_dims(const Vector& x, const Vector& y) const;
  void check_batch(const BatchSpec& b, std::optional<std::size_t> population) const;
};

/// g(x,y) = 1/2 y'Ay - x'By, f(x,y) = 1/2 |y - y_t|^2 + c/2 |x|^2.
class QuadraticBilevel final : public BilevelProblem {
 public:
  /// A is n x n symmetric positive definite, B is m x n.
  QuadraticBilevel(Matrix A, Matrix B, Vector y_target, double c);

  std::string_view kind() const override { return "quadratic"; }
  Index dim_x() const override { return B_.rows(); }
  Index dim_y() const override { return A_.rows(); }

  double f_value(const Vector& x, const Vector& y) const override;
  double g_value(const Vector& x, const Vector& y) const override;
  Vector grad1_f(const Vector& x, const Vector& y) const override;
  Vector grad2_f(const Vector& x, const Vector& y) const override;
  Vector grad2_g(const Vector& x, const Vector& y) const override;
  Matrix hvp22_g_block(const Vector& x, const Vector& y, const Matrix& V) const override;
  Vector jvp12_g(const Vector& x, const Vector& y, const Vector& u) const override;

  std::optional<Vector> exact_lower_solution(const Vector& x) const override;
  double strong_convexity(const Vector& x) const override;
  /// `box` bounds every coordinate of x, which bounds L_f0 and C_f0.
  SmoothnessConstants smoothness(const UpperBox& box) const override;

  /// Closed forms used as independent references in tests and diagnostics.
  Vector exact_adjoint(const Vector& x) const;  ///< u*(x) = A^-1 (y*(x) - y_t)
  double phi(const Vector& x) const;
  Vector phi_gradient(const Vector& x) const;
  Vector minimizer() const;
  double phi_star() const;

  const Matrix& A() const { return A_; }
  const Matrix& B() const { return B_; }
  const Vector& y_target() const { return y_target_; }
  double c() const { return c_; }

 private:
  Matrix A_;
  Matrix B_;
  Vector y_target_;
  double c_;
  Matrix lower_map_;  ///< A^-1 B', so y*(x) = lower_map_ x
  double spectrum_min_;
  double spectrum_max_;
};

/// Random instance whose A has eigenvalues spread over [spectrum_min, spectrum_max]
/// (both endpoints attained), B with N(0, 1/n) entries, y_t ~ N(0, I) and c = 1.
QuadraticBilevel make_quadratic_bilevel(int m, int n, double spectrum_min, double spectrum_max,
                                        std::uint64_t seed);

/// Ridge-hyperparameter selection for binary logistic regression:
///   f(l, w) = mean_val psi(w.x y),
///   g(l, w) = mean_train psi(w.x y) + 1/2 sum_i exp(l_i) w_i^2,
/// with psi(t) = log(1 + exp(-t)). Upper variable l and lower variable w are in R^p.
class LogisticHyperparameter final : public BilevelProblem {
 public:
  /// Labels must be +-1. `test` may be empty.
  LogisticHyperparameter(DatasetSplit train, DatasetSplit validation,
                         std::optional<DatasetSplit> test = std::nullopt);

  std::string_view kind() const override { return "logistic"; }
  Index dim_x() const override { return p_; }
  Index dim_y() const override { return p_; }

  double f_value(const Vector& x, const Vector& y) const override;
  double g_value(const Vector& x, const Vector& y) const override;
  Vector grad1_f(const Vector& x, const Vector& y) const override;
  Vector grad2_f(const Vector& x, const Vector& y) const override;
  Vector grad2_g(const Vector& x, const Vector& y) const override;
  Matrix hvp22_g_block(const Vector& x, const Vector& y, const Matrix& V) const override;
  Vector jvp12_g(const Vector& x, const Vector& y, const Vector& u) const override;

  std::optional<std::size_t> lower_population() const override;
  std::optional<std::size_t> upper_population() const override;
  Vector grad1_f_b(const Vector& x, const Vector& y, const BatchSpec& b) const override;
  Vector grad2_f_b(const Vector& x, const Vector& y, const BatchSpec& b) const override;
  Vector grad2_g_b(const Vector& x, const Vector& y, const BatchSpec& b) const override;
  Matrix hvp22_g_block_b(const Vector& x, const Vector& y, const Matrix& V,
                         const BatchSpec& b) const override;
  Vector jvp12_g_b(const Vector& x, const Vector& y, const Vector& u,
                   const BatchSpec& b) const override;

  double strong_convexity(const Vector& x) const override;
  SmoothnessConstants smoothness(const UpperBox& box) const override;

  /// Lipschitz constant of the lower Hessian in w alone, from the bound
  /// |psi'''| <= 1/(6 sqrt 3) and the mean cubed feature norm.
  double hessian_lipschitz() const;

  std::optional<ClassifierShape> classifier() const override;
  const DatasetSplit* split(SplitRole role) const override;

 private:
  Vector batch_loss_gradient(const Matrix& signed_features, const Vector& w,
                             const BatchSpec& b) const;

  Index p_;
  DatasetSplit train_;
  DatasetSplit validation_;
  std::optional<DatasetSplit> test_;
  Matrix z_train_;  ///< rows x_e * y_e
  Matrix z_val_;
  BatchSpec full_train_;
  BatchSpec full_val_;
};

/// Synthetic data: x_e ~ N(0, r'^2 I), score w_true.x_e + 0.1 z with
/// w_true ~ N(0, I); scores strictly above the median of all generated
/// samples become +1, the rest -1.
LogisticHyperparameter make_synthetic_logistic(int n_train, int n_val, int p, double r_prime,
                                               std::uint64_t seed);

/// Data hyper-cleaning with one weight per training sample:
///   f(l, W) = mean_val CE(W x, y),
///   g(l, W) = mean_train sigmoid(l_e) CE(W x_e, y_e) + c_r |W|^2,
/// where W is [n_classes x p] flattened row-major into the lower variable.
class HyperCleaning final : public BilevelProblem {
 public:
  /// Labels are class indices in [0, n_classes). `corrupted` optionally marks
  /// training samples whose label is known to be noisy (diagnostics only).
  HyperCleaning(DatasetSplit train, DatasetSplit validation, DatasetSplit test, int n_classes,
                double c_r, std::vector<bool> corrupted = {});

  std::string_view kind() const override { return "hypercleaning"; }
  Index dim_x() const override { return train_.rows(); }
  Index dim_y() const override { return n_classes_ * p_; }

  double f_value(const Vector& x, const Vector& y) const override;
  double g_value(const Vector& x, const Vector& y) const override;
  Vector grad1_f(const Vector& x, const Vector& y) const override;
  Vector grad2_f(const Vector& x, const Vector& y) const override;
  Vector grad2_g(const Vector& x, const Vector& y) const override;
  Matrix hvp22_g_block(const Vector& x, const Vector& y, const Matrix& V) const override;
  Vector jvp12_g(const Vector& x, const Vector& y, const Vector& u) const override;

  std::optional<std::size_t> lower_population() const override;
  std::optional<std::size_t> upper_population() const override;
  Vector grad1_f_b(const Vector& x, const Vector& y, const BatchSpec& b) const override;
  Vector grad2_f_b(const Vector& x, const Vector& y, const BatchSpec& b) const override;
  Vector grad2_g_b(const Vector& x, const Vector& y, const BatchSpec& b) const override;
  Matrix hvp22_g_block_b(const Vector& x, const Vector& y, const Matrix& V,
                         const BatchSpec& b) const override;
  Vector jvp12_g_b(const Vector& x, const Vector& y, const Vector& u,
                   const BatchSpec& b) const override;

  double strong_convexity(const Vector& x) const override;
  SmoothnessConstants smoothness(const UpperBox& box) const override;

  std::optional<ClassifierShape> classifier() const override;
  const DatasetSplit* split(SplitRole role) const override;

  double c_r() const { return c_r_; }
  /// Training samples whose label was replaced by the corruption step.
  const std::vector<bool>& corrupted() const { return corrupted_; }

 private:
  Index p_;
  int n_classes_;
  double c_r_;
  DatasetSplit train_;
  DatasetSplit validation_;
  DatasetSplit test_;
  std::vector<int> train_labels_;
  std::vector<int> val_labels_;
  BatchSpec full_train_;
  BatchSpec full_val_;
  std::vector<bool> corrupted_;
};

/// Synthetic multiclass data: x ~ N(0, I_p), clean label argmax(W_true x) with
/// W_true ~ N(0, I). A p_corrupt fraction of training labels (each sample
/// independently) is replaced by a uniformly drawn wrong class; validation
/// and test labels stay clean.
HyperCleaning make_hypercleaning(int n_train, int n_val, int n_test, int p, int n_classes,
                                 double p_corrupt, double c_r, std::uint64_t seed);

/// Dense LIBSVM / SVMlight reader. 1-based feature indices become 0-based
/// columns; absent features are zero. Without `expected_dim` the width is the
/// largest index seen.
DatasetSplit load_libsvm(const std::filesystem::path& path,
                         std::optional<Index> expected_dim = std::nullopt,
                         SplitRole role = SplitRole::train);

}  // namespace nbo
