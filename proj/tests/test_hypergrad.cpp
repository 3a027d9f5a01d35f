#include <random>

#include <gtest/gtest.h>

#include "nbo/hypergrad.hpp"
#include "nbo/problem.hpp"
#include "support.hpp"

using namespace nbo;

TEST(ApproxHypergradient, ScalarQuadraticAtExactPoint) {
  const auto p = fixtures::scalar_quadratic();
  const Vector x = Vector::Constant(1, 2.0);
  const auto h = approx_hypergradient(p, x, Vector::Constant(1, 1.0), Vector::Zero(1));
  EXPECT_DOUBLE_EQ(h.direction(0), 2.0);
  EXPECT_DOUBLE_EQ(h.grad1_f_part(0), 2.0);
  EXPECT_DOUBLE_EQ(h.jvp_part(0), 0.0);
}

TEST(ApproxHypergradient, EqualsExactAtExactPoint) {
  const auto p = make_quadratic_bilevel(4, 6, 1, 4, 1);
  std::mt19937_64 rng(2);
  const Vector x = fixtures::random_vector(4, rng);
  const Vector y = *p.exact_lower_solution(x);
  const auto h = approx_hypergradient(p, x, y, p.exact_adjoint(x));
  EXPECT_LT((h.direction - p.phi_gradient(x)).norm(), 1e-12);
}

TEST(StochasticHypergradient, FullBatchesAreDeterministic) {
  const auto p = make_synthetic_logistic(50, 20, 3, 1.0, 0);
  std::mt19937_64 rng(3);
  const Vector x = fixtures::random_in_box(3, rng), y = fixtures::random_vector(3, rng),
               u = fixtures::random_vector(3, rng);
  const auto a = approx_hypergradient(p, x, y, u);
  const auto b = stochastic_hypergradient(p, x, y, u, BatchSpec::full(20), BatchSpec::full(50));
  EXPECT_TRUE(a.direction.cwiseEqual(b.direction).all());
}

TEST(ExactHypergradient, ScalarQuadratic) {
  const auto p = fixtures::scalar_quadratic();
  EXPECT_NEAR(exact_hypergradient(p, Vector::Constant(1, 2.0))(0), 2.0, 1e-14);
  EXPECT_NEAR(fd_hypergradient(p, Vector::Constant(1, 2.0), 1e-5)(0), 2.0, 1e-7);
}

TEST(ExactHypergradient, LogisticMatchesFiniteDifferences) {
  const auto p = make_synthetic_logistic(500, 200, 10, 1.0, 1);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 3; ++i) {
    const Vector x = fixtures::random_in_box(10, rng);
    const Vector exact = exact_hypergradient(p, x);
    EXPECT_LT((exact - fd_hypergradient(p, x)).norm() / exact.norm(), 1e-5);
  }
}

TEST(ExactHypergradient, HyperCleaningMatchesFiniteDifferences) {
  const auto p = make_hypercleaning(30, 20, 5, 3, 3, 0.5, 0.05, 2);
  std::mt19937_64 rng(5);
  const Vector x = fixtures::random_in_box(p.dim_x(), rng);
  const Vector exact = exact_hypergradient(p, x);
  EXPECT_LT((exact - fd_hypergradient(p, x)).norm() / exact.norm(), 1e-5);
}

TEST(LowerSolve, NewtonReachesTolerance) {
  const auto p = make_synthetic_logistic(300, 100, 5, 1.0, 2);
  const Vector x = Vector::Constant(5, -0.5);
  const Vector y = solve_lower_level(p, x);
  EXPECT_LT(p.grad2_g(x, y).norm(), 1e-12);
  const Vector warm = solve_lower_level(p, x, y);
  EXPECT_LT((warm - y).norm(), 1e-12);
}

TEST(LowerSolve, ClosedFormWhenAvailable) {
  const auto p = make_quadratic_bilevel(3, 4, 1, 2, 0);
  const Vector x = Vector::Ones(3);
  EXPECT_TRUE(solve_lower_level(p, x).cwiseEqual(*p.exact_lower_solution(x)).all());
}

TEST(HessianSystem, SolvesToTolerance) {
  const auto p = make_synthetic_logistic(300, 100, 8, 1.0, 3);
  std::mt19937_64 rng(6);
  const Vector x = fixtures::random_in_box(8, rng), y = fixtures::random_vector(8, rng);
  const Vector rhs = fixtures::random_vector(8, rng);
  const Vector u = solve_hessian_system(p, x, y, rhs, 1e-12);
  EXPECT_LE((p.hvp22_g(x, y, u) - rhs).norm(), 1e-11 * rhs.norm());
}

TEST(ExactPoint, Consistent) {
  const auto p = make_quadratic_bilevel(3, 4, 1, 3, 5);
  const Vector x = Vector::Constant(3, 0.3);
  const auto e = exact_point(p, x);
  EXPECT_NEAR(e.phi, p.phi(x), 1e-12);
  EXPECT_LT((e.gradient - p.phi_gradient(x)).norm(), 1e-12);
  EXPECT_LT((e.u_star - p.exact_adjoint(x)).norm(), 1e-12);
  EXPECT_NEAR(phi_value(p, x), p.phi(x), 1e-12);
}
