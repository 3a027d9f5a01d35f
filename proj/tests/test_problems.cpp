#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <Eigen/Eigenvalues>

#include <gtest/gtest.h>

#include "nbo/harness.hpp"
#include "nbo/hypergrad.hpp"
#include "nbo/problem.hpp"
#include "nbo/solver.hpp"
#include "support.hpp"

using namespace nbo;

namespace {

void expect_oracles_consistent(const BilevelProblem& p, double box = 1.0) {
  for (const auto& item : run_gradcheck(p, {-box, box}, 5, 3)) {
    EXPECT_TRUE(item.passed()) << item.name << " error " << item.max_error;
  }
}

std::filesystem::path temp_file(const std::string& name, const std::string& content) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << content;
  return path;
}

}  // namespace

TEST(Quadratic, ScalarInstance) {
  const auto p = fixtures::scalar_quadratic();
  const Vector x = Vector::Constant(1, 2.0);
  EXPECT_DOUBLE_EQ((*p.exact_lower_solution(x))(0), 1.0);
  EXPECT_NEAR(p.exact_adjoint(x)(0), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(p.phi_gradient(x)(0), 2.0);
  EXPECT_DOUBLE_EQ(p.phi(x), 2.0);
  // Phi(x) = 1/2 (x/2 - 1)^2 + 1/2 x^2 is minimized at x = 2/5.
  EXPECT_NEAR(p.minimizer()(0), 0.4, 1e-15);
  EXPECT_NEAR(p.phi_star(), 0.4, 1e-15);
}

TEST(Quadratic, SpectrumEndpoints) {
  const auto p = make_quadratic_bilevel(4, 6, 0.5, 3.0, 7);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(p.A());
  EXPECT_NEAR(eig.eigenvalues().minCoeff(), 0.5, 1e-12);
  EXPECT_NEAR(eig.eigenvalues().maxCoeff(), 3.0, 1e-12);
  EXPECT_EQ(p.dim_x(), 4);
  EXPECT_EQ(p.dim_y(), 6);
  EXPECT_NEAR(p.smoothness({}).mu, 0.5, 1e-12);
}

TEST(Quadratic, RejectsBadInputs) {
  EXPECT_THROW(make_quadratic_bilevel(2, 2, 0.0, 1.0, 0), ConfigError);
  EXPECT_THROW(make_quadratic_bilevel(2, 2, 2.0, 1.0, 0), ConfigError);
  EXPECT_THROW(QuadraticBilevel(Matrix::Identity(2, 2), Matrix::Identity(3, 3), Vector::Zero(2), 1),
               ConfigError);
}

TEST(Quadratic, OracleConsistency) { expect_oracles_consistent(make_quadratic_bilevel(5, 7, 1, 4, 2)); }

TEST(Quadratic, PhiGradientMatchesImplicitFormula) {
  const auto p = make_quadratic_bilevel(3, 5, 1, 4, 3);
  std::mt19937_64 rng(1);
  const Vector x = fixtures::random_vector(3, rng);
  EXPECT_LT((p.phi_gradient(x) - fd_hypergradient(p, x)).norm(), 1e-7);
}

TEST(Quadratic, DimensionMismatchThrows) {
  const auto p = make_quadratic_bilevel(3, 5, 1, 4, 3);
  EXPECT_THROW(p.grad2_g(Vector::Zero(2), Vector::Zero(5)), ConfigError);
  EXPECT_THROW(p.hvp22_g(Vector::Zero(3), Vector::Zero(5), Vector::Zero(4)), ConfigError);
}

TEST(Logistic, GradientAtOrigin) {
  const auto p = make_synthetic_logistic(200, 50, 4, 1.0, 0);
  const auto& train = *p.split(SplitRole::train);
  Vector expected = Vector::Zero(4);
  for (Index e = 0; e < train.rows(); ++e) {
    expected -= 0.5 * train.labels(e) * train.features.row(e).transpose();
  }
  expected /= static_cast<double>(train.rows());
  EXPECT_LT((p.grad2_g(Vector::Zero(4), Vector::Zero(4)) - expected).norm(), 1e-14);
}

TEST(Logistic, OracleConsistency) { expect_oracles_consistent(make_synthetic_logistic(300, 100, 6, 1.0, 4)); }

TEST(Logistic, LabelsBalancedByMedian) {
  const auto p = make_synthetic_logistic(1000, 1000, 5, 1.0, 9);
  double positives = 0;
  for (auto role : {SplitRole::train, SplitRole::validation}) {
    const auto& s = *p.split(role);
    for (Index e = 0; e < s.rows(); ++e) positives += s.labels(e) > 0;
  }
  EXPECT_EQ(positives, 1000.0);
}

TEST(Logistic, FullScaleShapes) {
  const auto p = make_synthetic_logistic(16000, 4000, 50, 1.0, 0);
  EXPECT_EQ(p.dim_x(), 50);
  EXPECT_EQ(*p.lower_population(), 16000u);
  EXPECT_EQ(*p.upper_population(), 4000u);
}

TEST(Logistic, SeedDeterminism) {
  const auto a = make_synthetic_logistic(50, 20, 3, 1.0, 5);
  const auto b = make_synthetic_logistic(50, 20, 3, 1.0, 5);
  EXPECT_TRUE(a.split(SplitRole::train)->features.cwiseEqual(b.split(SplitRole::train)->features).all());
}

TEST(Logistic, BatchedOraclesAverageSamples) {
  const auto p = make_synthetic_logistic(40, 10, 3, 1.0, 1);
  const Vector x = Vector::Constant(3, 0.2), y = Vector::Constant(3, -0.3);
  Vector mean = Vector::Zero(3);
  for (std::size_t i = 0; i < 40; ++i) mean += p.grad2_g_b(x, y, BatchSpec{{i}}) / 40.0;
  EXPECT_LT((mean - p.grad2_g(x, y)).norm(), 1e-14);
  EXPECT_THROW(p.grad2_g_b(x, y, BatchSpec{{40}}), ConfigError);
  EXPECT_THROW(p.grad2_f_b(x, y, BatchSpec{{10}}), ConfigError);
  EXPECT_THROW(p.grad2_g_b(x, y, BatchSpec{}), ConfigError);
}

TEST(Logistic, RejectsNonBinaryLabels) {
  DatasetSplit train{Matrix::Ones(2, 2), Vector::Constant(2, 2.0), SplitRole::train};
  DatasetSplit val{Matrix::Ones(2, 2), Vector::Constant(2, 1.0), SplitRole::validation};
  EXPECT_THROW(LogisticHyperparameter(train, val), ConfigError);
}

TEST(Logistic, HessianLipschitzBoundsMeasuredChange) {
  const auto p = make_synthetic_logistic(200, 50, 4, 1.0, 2);
  std::mt19937_64 rng(3);
  const double L = p.hessian_lipschitz();
  const Matrix I = Matrix::Identity(4, 4);
  const Vector x = Vector::Zero(4);
  for (int i = 0; i < 20; ++i) {
    const Vector a = fixtures::random_vector(4, rng), b = fixtures::random_vector(4, rng);
    const double change = (p.hvp22_g_block(x, a, I) - p.hvp22_g_block(x, b, I)).norm();
    EXPECT_LE(change, L * (a - b).norm() * 2.0 + 1e-12);  // Frobenius vs spectral factor
  }
}

TEST(HyperCleaning, OracleConsistency) {
  expect_oracles_consistent(make_hypercleaning(60, 30, 10, 4, 3, 0.5, 1e-2, 1), 2.0);
}

TEST(HyperCleaning, CorruptionRateAndLabels) {
  const auto p = make_hypercleaning(4000, 10, 10, 5, 4, 0.3, 1e-3, 2);
  double corrupted = 0;
  for (bool c : p.corrupted()) corrupted += c;
  EXPECT_NEAR(corrupted / 4000.0, 0.3, 4 * std::sqrt(0.3 * 0.7 / 4000));
  const auto& val = *p.split(SplitRole::validation);
  for (Index e = 0; e < val.rows(); ++e) {
    EXPECT_GE(val.labels(e), 0.0);
    EXPECT_LT(val.labels(e), 4.0);
  }
}

TEST(HyperCleaning, RejectsBadParameters) {
  EXPECT_THROW(make_hypercleaning(10, 10, 10, 3, 3, 1.5, 1e-3, 0), ConfigError);
  EXPECT_THROW(make_hypercleaning(10, 10, 10, 3, 1, 0.5, 1e-3, 0), ConfigError);
  EXPECT_THROW(make_hypercleaning(0, 10, 10, 3, 3, 0.5, 1e-3, 0), ConfigError);
}

TEST(HyperCleaning, StrongConvexityIsRidge) {
  const auto p = make_hypercleaning(20, 10, 5, 3, 3, 0.5, 0.05, 0);
  EXPECT_DOUBLE_EQ(p.strong_convexity(Vector::Zero(20)), 0.1);
}

TEST(TestError, TieRuleAndPerfectModel) {
  const auto p = make_synthetic_logistic(100, 100, 3, 1.0, 0);
  const auto& val = *p.split(SplitRole::validation);
  double negatives = 0;
  for (Index e = 0; e < val.rows(); ++e) negatives += val.labels(e) < 0;
  EXPECT_DOUBLE_EQ(test_error(p, Vector::Zero(3), val), negatives / val.rows());
}

TEST(TestError, RandomLabelsMulticlass) {
  const auto p = make_hypercleaning(10, 10, 20000, 3, 4, 0.0, 1e-3, 0);
  std::mt19937_64 rng(11);
  const Vector y = fixtures::random_vector(p.dim_y(), rng);
  // Labels come from an independent teacher, so a random model errs ~3/4 of the time.
  const double err = test_error(p, y, *p.split(SplitRole::test));
  EXPECT_NEAR(err, 0.75, 0.15);
}

TEST(TestError, RequiresClassifier) {
  const auto p = fixtures::scalar_quadratic();
  DatasetSplit s{Matrix::Ones(1, 1), Vector::Ones(1), SplitRole::test};
  EXPECT_THROW(test_error(p, Vector::Zero(1), s), ConfigError);
}

TEST(Libsvm, ParsesSparseRows) {
  const auto path = temp_file("nbo_ok.svm", "# header\n+1 1:0.5 3:-2\n\n-1 2:1e-1  # trailing\n");
  const auto s = load_libsvm(path);
  ASSERT_EQ(s.rows(), 2);
  ASSERT_EQ(s.features.cols(), 3);
  EXPECT_DOUBLE_EQ(s.labels(0), 1.0);
  EXPECT_DOUBLE_EQ(s.labels(1), -1.0);
  EXPECT_DOUBLE_EQ(s.features(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(s.features(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(s.features(0, 2), -2.0);
  EXPECT_DOUBLE_EQ(s.features(1, 1), 0.1);
  EXPECT_EQ(load_libsvm(path, 5).features.cols(), 5);
}

TEST(Libsvm, ReportsLineOfMalformedInput) {
  const auto bad = temp_file("nbo_bad.svm", "1 1:1\n1 2:x\n");
  try {
    load_libsvm(bad);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
  }
  EXPECT_THROW(load_libsvm(temp_file("nbo_order.svm", "1 3:1 2:1\n")), ParseError);
  EXPECT_THROW(load_libsvm(temp_file("nbo_zero.svm", "1 0:1\n")), ParseError);
  EXPECT_THROW(load_libsvm(temp_file("nbo_wide.svm", "1 4:1\n"), 3), ParseError);
  EXPECT_THROW(load_libsvm("/nonexistent/file.svm"), ConfigError);
}
