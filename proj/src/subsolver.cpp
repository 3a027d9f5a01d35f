#include "nbo/subsolver.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace nbo {

void check_finite(const Matrix& m, const char* what, long step) {
  for (Index j = 0; j < m.cols(); ++j) {
    for (Index i = 0; i < m.rows(); ++i) {
      const double a = m(i, j);
      if (!std::isfinite(a) || std::abs(a) > kDivergenceThreshold) {
        throw DivergenceError(step >= 0 ? fmt::format("{} diverged at step {}", what, step)
                                        : fmt::format("{} diverged", what));
      }
    }
  }
}

BatchSpec draw_batch(std::size_t population, std::size_t size, std::mt19937_64& rng) {
  if (size == kFullBatch || size >= population) return BatchSpec::full(population);
  return BatchSpec::sample(population, size, rng);
}

namespace {

void check_inner_args(const Vector& d_y, const Vector& d_u, double gamma, int T) {
  if (!(gamma > 0.0)) throw ConfigError("inner step size must be positive");
  if (T < 0) throw ConfigError("inner iteration count must be non-negative");
  if (d_y.size() != d_u.size()) throw ConfigError("d_y and d_u must have the same length");
}

// One step of the fused recursion; the same expression keeps the stochastic
// and deterministic paths bitwise equal.
void affine_step(Matrix& VW, const Matrix& HVW, const Matrix& D, double gamma) {
  for (Index c = 0; c < VW.cols(); ++c)
    for (Index i = 0; i < VW.rows(); ++i)
      VW(i, c) = VW(i, c) - gamma * HVW(i, c) + gamma * D(i, c);
}

template <typename Apply>
InnerResult fused_loop(const Vector& d_y, const Vector& d_u, double gamma, int T, Apply&& apply) {
  check_inner_args(d_y, d_u, gamma, T);
  const Index n = d_y.size();
  Matrix D(n, 2);
  D.col(0) = d_y;
  D.col(1) = d_u;
  Matrix VW = Matrix::Zero(n, 2);
  InnerResult out;
  for (int t = -1; t < T; ++t) {
    Matrix HVW = apply(VW);
    if (HVW.rows() != n || HVW.cols() != 2) throw ConfigError("Hessian operator changed shape");
    affine_step(VW, HVW, D, gamma);
    out.hvp_count += 2;
    ++out.inner_iterations;
    check_finite(VW, "inner solver", t + 1);
  }
  out.v = VW.col(0);
  out.w = VW.col(1);
  return out;
}

}  // namespace

InnerResult inner_gd(const BlockOperator& hvp, const Vector& d_y, const Vector& d_u, double gamma,
                     int T) {
  return fused_loop(d_y, d_u, gamma, T, [&](const Matrix& VW) { return hvp(VW); });
}

InnerResult inner_sgd(const BatchedBlockOperator& hvp, const Vector& D_y, const Vector& D_u,
                      double gamma, int T, std::size_t batch_size, std::size_t population,
                      std::mt19937_64& rng) {
  if (population == 0) throw ConfigError("stochastic inner solver needs a population");
  return fused_loop(D_y, D_u, gamma, T, [&](const Matrix& VW) {
    return hvp(VW, draw_batch(population, batch_size, rng));
  });
}

CgResult inner_cg(const LinearOperator& hvp, const Vector& rhs, int T, double residual_tol) {
  if (T < 0) throw ConfigError("CG iteration budget must be non-negative");
  if (!(residual_tol >= 0.0)) throw ConfigError("CG residual tolerance must be non-negative");
  const Index n = rhs.size();
  CgResult out{Vector::Zero(n), 0};
  const double rhs_norm = rhs.norm();
  if (rhs_norm == 0.0) return out;

  const int budget = static_cast<int>(std::min<Index>(static_cast<Index>(T) + 1, n));
  Vector r = rhs;
  Vector p = r;
  double rr = r.squaredNorm();
  for (int it = 0; it < budget; ++it) {
    if (rr == 0.0 || std::sqrt(rr) <= residual_tol * rhs_norm) break;
    const Vector Hp = hvp(p);
    ++out.iterations;
    const double curvature = p.dot(Hp);
    if (!(curvature > 0.0)) {
      throw DefinitenessError(
          fmt::format("CG found non-positive curvature {} at iteration {}", curvature, it));
    }
    const double step = rr / curvature;
    out.solution += step * p;
    r -= step * Hp;
    const double rr_next = r.squaredNorm();
    p = r + (rr_next / rr) * p;
    rr = rr_next;
    check_finite(out.solution, "conjugate gradient", it);
  }
  return out;
}

}  // namespace nbo
