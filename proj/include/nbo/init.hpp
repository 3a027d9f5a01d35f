#pragma once

#include <optional>
#include <random>

#include "nbo/constants.hpp"
#include "nbo/problem.hpp"
#include "nbo/types.hpp"

namespace nbo {

struct InitReport {
  Vector y0;
  Vector u0;
  int N0 = 1;
  int Q0 = 1;
  bool N0_clamped = false;  ///< formula gave <= 0 (already inside the ball)
  bool Q0_clamped = false;
  std::optional<double> achieved_y_dist;  ///< |y0 - y*(x0)|, closed-form problems only
  std::optional<double> achieved_u_dist;  ///< |u0 - u*(x0)|
  double target_y_radius = 0.0;  ///< distance for the deterministic box, mean square for the stochastic one
  double target_u_radius = 0.0;
  long grad_count = 0;
  long hvp_count = 0;
};

/// Deterministic start: N0 gradient steps on g in y, then Q0 steps of the
/// adjoint linear system at (x0, y0), both with step beta0. Throws
/// PostconditionError if a closed-form check shows either ball is missed.
InitReport box1_init(const BilevelProblem& p, const SmoothnessConstants& c, const Vector& x0,
                     const Vector& y00, const Vector& u00, double beta0);

/// Stochastic start: the same loops with a fresh lower batch per step for
/// grad G and the Hessian, and an upper batch for grad F. Sizes of kFullBatch
/// use the full population.
InitReport box2_init(const BilevelProblem& p, const SmoothnessConstants& c, const Vector& x0,
                     const Vector& y00, const Vector& u00, double beta0, double r,
                     const InitBatchPlan& batches, std::mt19937_64& rng);

/// The two loops with given counts; box1/box2 only differ in the counts and
/// in whether batches are drawn. `batches == nullopt` uses deterministic oracles.
InitReport run_init_loops(const BilevelProblem& p, const Vector& x0, const Vector& y00,
                          const Vector& u00, double beta0, int N0, int Q0,
                          const std::optional<InitBatchPlan>& batches, std::mt19937_64* rng);

}  // namespace nbo
