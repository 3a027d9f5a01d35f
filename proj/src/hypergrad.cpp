#include "nbo/hypergrad.hpp"

#include <cmath>

#include <fmt/format.h>

#include "nbo/subsolver.hpp"

namespace nbo {

Hypergradient approx_hypergradient(const BilevelProblem& p, const Vector& x, const Vector& y,
                                   const Vector& u) {
  Hypergradient h;
  h.grad1_f_part = p.grad1_f(x, y);
  h.jvp_part = p.jvp12_g(x, y, u);
  h.direction = h.grad1_f_part - h.jvp_part;
  return h;
}

Hypergradient stochastic_hypergradient(const BilevelProblem& p, const Vector& x, const Vector& y,
                                       const Vector& u, const BatchSpec& upper,
                                       const BatchSpec& cross) {
  if (upper.indices.empty() || cross.indices.empty()) throw ConfigError("empty batch");
  Hypergradient h;
  h.grad1_f_part = p.grad1_f_b(x, y, upper);
  h.jvp_part = p.jvp12_g_b(x, y, u, cross);
  h.direction = h.grad1_f_part - h.jvp_part;
  return h;
}

Vector solve_hessian_system(const BilevelProblem& p, const Vector& x, const Vector& y,
                            const Vector& rhs, double tol) {
  const LinearOperator H = [&](const Vector& v) { return p.hvp22_g(x, y, v); };
  const double target = tol * rhs.norm();
  Vector sol = Vector::Zero(rhs.size());
  Vector residual = rhs;
  const int budget = static_cast<int>(rhs.size()) + 10;
  // CG loses orthogonality in floating point, so restart on the true residual.
  for (int restart = 0; restart < 30; ++restart) {
    if (residual.norm() <= target) return sol;
    sol += inner_cg(H, residual, budget, 0.0).solution;
    residual = rhs - H(sol);
  }
  if (residual.norm() <= std::max(target, 1e-14)) return sol;
  throw DiagnosticUnavailable(
      fmt::format("Hessian system residual stalled at {:.3e}", residual.norm()));
}

Vector solve_lower_level(const BilevelProblem& p, const Vector& x, const std::optional<Vector>& start,
                         const LowerSolveOptions& opts) {
  if (auto closed = p.exact_lower_solution(x)) return *closed;
  Vector y = start ? *start : Vector::Zero(p.dim_y());
  Vector grad = p.grad2_g(x, y);
  double value = p.g_value(x, y);
  for (int it = 0; it < opts.max_newton; ++it) {
    const double gnorm = grad.norm();
    if (gnorm <= opts.grad_tol) return y;
    const Vector step = solve_hessian_system(p, x, y, grad, 1e-10);
    // Armijo on g, or a halved gradient norm once g stops resolving decrease.
    double t = 1.0;
    for (int halving = 0;; ++halving) {
      if (halving > 60) {
        throw DiagnosticUnavailable(
            fmt::format("lower-level Newton stalled with |grad| = {:.3e}", gnorm));
      }
      const Vector trial = y - t * step;
      const double trial_value = p.g_value(x, trial);
      const Vector trial_grad = p.grad2_g(x, trial);
      if (trial_value <= value - 1e-4 * t * grad.dot(step) || trial_grad.norm() <= 0.5 * gnorm) {
        y = trial;
        value = trial_value;
        grad = trial_grad;
        break;
      }
      t *= 0.5;
    }
  }
  if (grad.norm() <= opts.grad_tol) return y;
  throw DiagnosticUnavailable(
      fmt::format("lower-level solve reached |grad| = {:.3e} > {:.1e}", grad.norm(), opts.grad_tol));
}

Vector adjoint_at(const BilevelProblem& p, const Vector& x, const Vector& y) {
  return solve_hessian_system(p, x, y, p.grad2_f(x, y));
}

double phi_value(const BilevelProblem& p, const Vector& x, const std::optional<Vector>& start) {
  return p.f_value(x, solve_lower_level(p, x, start));
}

ExactPoint exact_point(const BilevelProblem& p, const Vector& x,
                       const std::optional<Vector>& start) {
  ExactPoint e;
  e.y_star = solve_lower_level(p, x, start);
  e.u_star = adjoint_at(p, x, e.y_star);
  e.phi = p.f_value(x, e.y_star);
  e.gradient = p.grad1_f(x, e.y_star) - p.jvp12_g(x, e.y_star, e.u_star);
  return e;
}

Vector exact_hypergradient(const BilevelProblem& p, const Vector& x) {
  return exact_point(p, x).gradient;
}

Vector fd_hypergradient(const BilevelProblem& p, const Vector& x, double h) {
  if (h <= 0.0) h = 1e-5 * (1.0 + x.cwiseAbs().maxCoeff());
  const Vector center = solve_lower_level(p, x);
  Vector out(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Vector plus = x, minus = x;
    plus(i) += h;
    minus(i) -= h;
    out(i) = (phi_value(p, plus, center) - phi_value(p, minus, center)) / (2.0 * h);
  }
  return out;
}

}  // namespace nbo
