#include <cmath>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <gtest/gtest.h>

#include "nbo/subsolver.hpp"
#include "support.hpp"

using namespace nbo;

namespace {

BlockOperator dense(const Matrix& H) {
  return [H](const Matrix& V) -> Matrix { return H * V; };
}

Matrix random_spd(Index n, double kappa, std::mt19937_64& rng) {
  Matrix G(n, n);
  std::normal_distribution<double> normal;
  for (auto& a : G.reshaped()) a = normal(rng);
  const Matrix Q = G.householderQr().householderQ();
  Vector eig(n);
  for (Index i = 0; i < n; ++i) eig(i) = std::pow(kappa, static_cast<double>(i) / (n - 1));
  return Q * eig.asDiagonal() * Q.transpose();
}

}  // namespace

TEST(InnerGd, ScalarRecursion) {
  const auto r = inner_gd(dense(Matrix::Constant(1, 1, 2.0)), Vector::Constant(1, 2.0),
                          Vector::Constant(1, 2.0), 0.25, 3);
  EXPECT_DOUBLE_EQ(r.v(0), 0.9375);
  EXPECT_DOUBLE_EQ(r.w(0), 0.9375);
  EXPECT_EQ(r.inner_iterations, 4);
  EXPECT_EQ(r.hvp_count, 8);
}

TEST(InnerGd, ExactStepSolvesScalarSystem) {
  const auto r = inner_gd(dense(Matrix::Constant(1, 1, 2.0)), Vector::Constant(1, 2.0),
                          Vector::Constant(1, -4.0), 0.5, 0);
  EXPECT_DOUBLE_EQ(r.v(0), 1.0);
  EXPECT_DOUBLE_EQ(r.w(0), -2.0);
}

TEST(InnerGd, ZeroRightHandSide) {
  const auto r = inner_gd(dense(Matrix::Identity(3, 3)), Vector::Zero(3), Vector::Zero(3), 0.5, 5);
  EXPECT_EQ(r.v.norm(), 0.0);
  EXPECT_EQ(r.w.norm(), 0.0);
}

TEST(InnerGd, ConvergesToSolution) {
  std::mt19937_64 rng(1);
  const Matrix H = random_spd(6, 10.0, rng);
  const Vector b = fixtures::random_vector(6, rng);
  const auto r = inner_gd(dense(H), b, -b, 0.1, 2000);
  const Vector x = H.ldlt().solve(b);
  EXPECT_LT((r.v - x).norm(), 1e-10);
  EXPECT_LT((r.w + x).norm(), 1e-10);
}

TEST(InnerGd, DivergenceDetected) {
  EXPECT_THROW(inner_gd(dense(Matrix::Constant(1, 1, 10.0)), Vector::Ones(1), Vector::Ones(1), 1.0,
                        200),
               DivergenceError);
}

TEST(InnerGd, BadArguments) {
  EXPECT_THROW(inner_gd(dense(Matrix::Identity(2, 2)), Vector::Ones(2), Vector::Ones(2), 0.0, 1),
               ConfigError);
  EXPECT_THROW(inner_gd(dense(Matrix::Identity(2, 2)), Vector::Ones(2), Vector::Ones(2), 0.1, -1),
               ConfigError);
}

TEST(InnerCg, DiagonalSystem) {
  const Matrix H = Vector(Eigen::Vector3d(1, 2, 3)).asDiagonal();
  const auto r = inner_cg([&](const Vector& v) -> Vector { return H * v; },
                          Vector(Eigen::Vector3d(1, 2, 3)), 5);
  EXPECT_LT((r.solution - Vector::Ones(3)).norm(), 1e-14);
  EXPECT_LE(r.iterations, 3);
}

TEST(InnerCg, ScalarOneStepIsExact) {
  const auto r = inner_cg([](const Vector& v) -> Vector { return 4.0 * v; }, Vector::Constant(1, 2.0),
                          0);
  EXPECT_DOUBLE_EQ(r.solution(0), 0.5);
  EXPECT_EQ(r.iterations, 1);
}

TEST(InnerCg, ZeroRightHandSide) {
  const auto r = inner_cg([](const Vector& v) -> Vector { return v; }, Vector::Zero(4), 3);
  EXPECT_EQ(r.solution.norm(), 0.0);
}

TEST(InnerCg, IndefiniteOperatorRejected) {
  const Matrix H = Vector(Eigen::Vector2d(1, -1)).asDiagonal();
  EXPECT_THROW(inner_cg([&](const Vector& v) -> Vector { return H * v; }, Vector(Eigen::Vector2d(0, 1)),
                        3),
               DefinitenessError);
}

TEST(InnerCg, RateBound) {
  std::mt19937_64 rng(2);
  const double kappa = 100.0;
  const Matrix H = random_spd(50, kappa, rng);
  const Vector b = fixtures::random_vector(50, rng);
  const Vector x = H.ldlt().solve(b);
  for (int T : {5, 10}) {
    const auto r = inner_cg([&](const Vector& v) -> Vector { return H * v; }, b, T);
    const Vector e = r.solution - x;
    const double err = std::sqrt(e.dot(H * e));
    const double q = (std::sqrt(kappa) - 1) / (std::sqrt(kappa) + 1);
    EXPECT_LE(err, 2 * std::pow(q, T + 1) * std::sqrt(x.dot(H * x)) * (1 + 1e-9));
  }
}

TEST(InnerCg, EarlyStopOnTolerance) {
  std::mt19937_64 rng(3);
  const Matrix H = random_spd(30, 10.0, rng);
  const Vector b = fixtures::random_vector(30, rng);
  const auto r = inner_cg([&](const Vector& v) -> Vector { return H * v; }, b, 100, 1e-3);
  EXPECT_LT(r.iterations, 30);
  EXPECT_LE((H * r.solution - b).norm(), 1e-3 * b.norm());
}

TEST(InnerSgd, FullBatchMatchesInnerGd) {
  const Matrix per_sample_scale = Vector(Eigen::Vector2d(1.0, 3.0));
  BatchedBlockOperator op = [&](const Matrix& V, const BatchSpec& b) -> Matrix {
    double s = 0;
    for (auto i : b.indices) s += per_sample_scale(static_cast<Index>(i));
    return V * (s / static_cast<double>(b.size()));
  };
  std::mt19937_64 rng(4);
  const auto a = inner_sgd(op, Vector::Constant(1, 2.0), Vector::Constant(1, 1.0), 0.1, 7,
                           kFullBatch, 2, rng);
  const auto b = inner_gd([&](const Matrix& V) { return op(V, BatchSpec::full(2)); },
                          Vector::Constant(1, 2.0), Vector::Constant(1, 1.0), 0.1, 7);
  EXPECT_EQ(a.v(0), b.v(0));
  EXPECT_EQ(a.w(0), b.w(0));
}

TEST(InnerSgd, MeanMatchesFixedPoint) {
  BatchedBlockOperator op = [](const Matrix& V, const BatchSpec& b) -> Matrix {
    return V * (b.indices[0] == 0 ? 1.0 : 3.0);
  };
  const int runs = 1000;
  double sum = 0, sq = 0;
  for (int s = 0; s < runs; ++s) {
    std::mt19937_64 rng(s);
    const double v =
        inner_sgd(op, Vector::Constant(1, 2.0), Vector::Zero(1), 0.1, 100, 1, 2, rng).v(0);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / runs;
  const double se = std::sqrt((sq / runs - mean * mean) / (runs - 1));
  // Each step's curvature is independent of the iterate, so E v follows the
  // deterministic recursion with mean curvature 2 and tends to D_y / 2 = 1.
  EXPECT_LT(std::abs(mean - 1.0), 3 * se);
}

TEST(DrawBatch, FullAndSampled) {
  std::mt19937_64 rng(5);
  EXPECT_EQ(draw_batch(4, kFullBatch, rng).indices, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(draw_batch(4, 9, rng).indices, (std::vector<std::size_t>{0, 1, 2, 3}));
  const auto b = draw_batch(100, 10, rng);
  EXPECT_EQ(b.size(), 10u);
  for (auto i : b.indices) EXPECT_LT(i, 100u);
}

TEST(CheckFinite, ThresholdAndNan) {
  Matrix m = Matrix::Ones(2, 2);
  EXPECT_NO_THROW(check_finite(m, "m"));
  m(1, 1) = 2e30;
  EXPECT_THROW(check_finite(m, "m"), DivergenceError);
  m(1, 1) = std::nan("");
  EXPECT_THROW(check_finite(m, "m", 3), DivergenceError);
}
