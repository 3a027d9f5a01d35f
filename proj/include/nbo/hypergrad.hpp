#pragma once

#include <optional>

#include "nbo/problem.hpp"
#include "nbo/types.hpp"

namespace nbo {

/// direction = grad1_f_part - jvp_part.
struct Hypergradient {
  Vector direction;
  Vector grad1_f_part;
  Vector jvp_part;
};

/// grad_x f(x, y) - (d/dx grad_y g(x, y)) u with one call to each oracle.
Hypergradient approx_hypergradient(const BilevelProblem& p, const Vector& x, const Vector& y,
                                   const Vector& u);

/// Same estimator with grad_x F on `upper` samples and the cross term on `cross` samples.
Hypergradient stochastic_hypergradient(const BilevelProblem& p, const Vector& x, const Vector& y,
                                       const Vector& u, const BatchSpec& upper,
                                       const BatchSpec& cross);

struct LowerSolveOptions {
  double grad_tol = 1e-12;  ///< target |grad_y g|
  int max_newton = 100;
};

/// y*(x): the closed form when the problem has one, otherwise damped
/// Newton-CG on g started from `start` (zero by default).
/// Throws DiagnosticUnavailable if the gradient tolerance is not reached.
Vector solve_lower_level(const BilevelProblem& p, const Vector& x,
                         const std::optional<Vector>& start = std::nullopt,
                         const LowerSolveOptions& opts = {});

/// Solves hvp22_g(x, y, u) = rhs by restarted CG to relative residual `tol`.
Vector solve_hessian_system(const BilevelProblem& p, const Vector& x, const Vector& y,
                            const Vector& rhs, double tol = 1e-12);

/// u*(x, y) = [hess_yy g(x, y)]^-1 grad_y f(x, y).
Vector adjoint_at(const BilevelProblem& p, const Vector& x, const Vector& y);

/// Phi(x) = f(x, y*(x)).
double phi_value(const BilevelProblem& p, const Vector& x,
                 const std::optional<Vector>& start = std::nullopt);

/// Lower solution, adjoint, Phi and grad Phi at one upper point.
struct ExactPoint {
  Vector y_star;
  Vector u_star;
  double phi = 0.0;
  Vector gradient;
};

ExactPoint exact_point(const BilevelProblem& p, const Vector& x,
                       const std::optional<Vector>& start = std::nullopt);

/// Diagnostic-only true hypergradient.
Vector exact_hypergradient(const BilevelProblem& p, const Vector& x);

/// Central differences of Phi per coordinate. `h <= 0` picks 1e-5 (1 + |x|_inf).
Vector fd_hypergradient(const BilevelProblem& p, const Vector& x, double h = 0.0);

}  // namespace nbo
