#pragma once

#include <cstddef>
#include <optional>

namespace nbo {

/// Smoothness and conditioning constants of a bilevel problem.
///
/// The six base constants are inputs; everything else is derived on demand.
/// `L_g2 == 0` is legal (quadratic lower level) and makes every step-size or
/// radius bound with `L_g2` in the denominator infinite.
struct SmoothnessConstants {
  double mu = 1.0;    ///< strong convexity of g(x, .)
  double L_g1 = 1.0;  ///< Lipschitz constant of grad g
  double L_g2 = 0.0;  ///< Lipschitz constant of the second derivatives of g
  double L_f1 = 1.0;  ///< Lipschitz constant of grad f
  double L_f0 = 1.0;  ///< bound on |grad_y f(x, y*(x))|
  double C_f0 = 1.0;  ///< bound on |grad_x f(x, y)|

  /// Throws DomainError unless mu, L_g1, L_f1 > 0 and the rest are >= 0.
  void validate() const;

  double L() const;
  double kappa() const;
  double r_u() const;
  double L_1() const;
  double L_2() const;
  double L_u() const;
  double L_Phi() const;
};

/// Lipschitz constant of the hypergradient.
double hypergradient_lipschitz(const SmoothnessConstants& c);

struct DeterministicPlan {
  double alpha;
  int T_min;
};

/// Largest constant outer step and smallest inner iteration count for which
/// the deterministic rate guarantee holds. Requires 0 < gamma <= 1/L_g1.
DeterministicPlan theoretical_deterministic_plan(const SmoothnessConstants& c, double gamma);

/// Batch sizes of the stochastic method, one per sampling role.
struct BatchPlan {
  std::size_t inner_hessian;  ///< |B1^{t,k}|, fresh each inner step
  std::size_t hessian;        ///< |B1^k|, Hessian in D_u
  std::size_t lower_grad;     ///< |B2^k|, D_y
  std::size_t upper_grad;     ///< |B3^k|, grad F in D_u and D_x
  std::size_t cross;          ///< |B4^k|, Jacobian in D_x
};

struct StochasticPlan {
  double alpha;
  int T_min;
  BatchPlan batches;
  BatchPlan unclamped;  ///< raw orders before clamping, rounded up
};

struct StochasticPlanOptions {
  double multiplier = 1.0;  ///< leading constant applied to every order
  std::optional<std::size_t> lower_population;
  std::optional<std::size_t> upper_population;
};

/// Step size, inner length and batch sizes for the stochastic method. The
/// batch orders are instantiated with unit constants times `multiplier`.
StochasticPlan theoretical_stochastic_plan(const SmoothnessConstants& c, double gamma, int K,
                                           double r, const StochasticPlanOptions& opts = {});

/// Variance bounds of the per-sample oracles.
struct VarianceConstants {
  double sigma_f1 = 0.0;
  double sigma_g1 = 0.0;
  double sigma_g2 = 0.0;
};

struct InitBatchPlan {
  std::size_t lower;  ///< |B_0|, used for grad G and Hessian samples
  std::size_t upper;  ///< |B'_0|, used for grad F samples
};

/// Batch sizes for the stochastic initialization. `grad_norm` is the norm of
/// grad_y g at the starting point of the lower-level loop.
InitBatchPlan initialization_batch_plan(const SmoothnessConstants& c, const VarianceConstants& v,
                                        double beta0, double r, double grad_norm,
                                        std::optional<std::size_t> lower_population = {},
                                        std::optional<std::size_t> upper_population = {});

}  // namespace nbo
