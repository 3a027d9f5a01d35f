#pragma once

#include <cstddef>
#include <functional>
#include <random>

#include "nbo/problem.hpp"
#include "nbo/types.hpp"

namespace nbo {

/// Batch size meaning "every sample, in order" rather than a random draw.
inline constexpr std::size_t kFullBatch = 0;

/// Any component above this magnitude counts as divergence.
inline constexpr double kDivergenceThreshold = 1e30;

/// Throws DivergenceError mentioning `what` if `m` has a non-finite or huge entry.
void check_finite(const Matrix& m, const char* what, long step = -1);

/// Applies the Hessian to every column of its argument.
using BlockOperator = std::function<Matrix(const Matrix&)>;
/// Same, for the samples in a batch.
using BatchedBlockOperator = std::function<Matrix(const Matrix&, const BatchSpec&)>;
using LinearOperator = std::function<Vector(const Vector&)>;

struct InnerResult {
  Vector v;  ///< approximate H^-1 d_y
  Vector w;  ///< approximate H^-1 d_u
  int inner_iterations = 0;
  long hvp_count = 0;
};

/// T+1 steps of [v, w] <- [v, w] - gamma H [v, w] + gamma [d_y, d_u] from zero.
InnerResult inner_gd(const BlockOperator& hvp, const Vector& d_y, const Vector& d_u, double gamma,
                     int T);

struct CgResult {
  Vector solution;
  int iterations = 0;  ///< equals the number of operator applications
};

/// Conjugate gradient from zero for at most min(T+1, n) iterations, stopping
/// early once |residual| <= residual_tol |rhs|.
CgResult inner_cg(const LinearOperator& hvp, const Vector& rhs, int T, double residual_tol = 0.0);

/// inner_gd with a fresh Hessian batch of `batch_size` samples per step,
/// shared by v and w. `batch_size == kFullBatch` uses the whole population.
InnerResult inner_sgd(const BatchedBlockOperator& hvp, const Vector& D_y, const Vector& D_u,
                      double gamma, int T, std::size_t batch_size, std::size_t population,
                      std::mt19937_64& rng);

/// Every sample in order when `size` is kFullBatch or reaches the population,
/// otherwise `size` uniform draws with replacement.
BatchSpec draw_batch(std::size_t population, std::size_t size, std::mt19937_64& rng);

}  // namespace nbo
