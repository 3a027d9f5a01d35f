#include "nbo/init.hpp"

#include <cmath>
#include <limits>
#include <tuple>

#include <fmt/format.h>

#include "nbo/hypergrad.hpp"
#include "nbo/subsolver.hpp"

namespace nbo {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double ratio(double num, double den) { return den == 0.0 ? kInf : num / den; }

// Smallest count n with rate^n * start <= target, i.e. log(target/start)/log(rate).
// Returns {count, clamped}; counts below 1 become 1.
std::pair<int, bool> loop_count(double log_ratio, double log_rate) {
  if (!(log_rate < 0.0)) throw DomainError("initialization step gives no contraction");
  const double n = std::isinf(log_rate) ? 0.0 : log_ratio / log_rate;
  if (!(n > 0.0)) return {1, true};
  if (n > 1e9) throw DomainError("initialization loop count is unreasonably large");
  return {static_cast<int>(std::ceil(n)), false};
}

void check_shapes(const BilevelProblem& p, const Vector& x0, const Vector& y00, const Vector& u00) {
  if (x0.size() != p.dim_x() || y00.size() != p.dim_y() || u00.size() != p.dim_y()) {
    throw ConfigError("initial point has the wrong dimensions");
  }
}

std::optional<BatchSpec> maybe_draw(const std::optional<std::size_t>& size, std::size_t population,
                                    std::mt19937_64* rng) {
  if (!size) return std::nullopt;
  return draw_batch(population, *size, *rng);
}

Vector y_loop(const BilevelProblem& p, const Vector& x0, Vector y, double beta0, int N0,
              const std::optional<std::size_t>& size, std::mt19937_64* rng, InitReport& rep) {
  const std::size_t pop = p.lower_population().value_or(0);
  for (int n = 0; n < N0; ++n) {
    const auto b = maybe_draw(size, pop, rng);
    y -= beta0 * (b ? p.grad2_g_b(x0, y, *b) : p.grad2_g(x0, y));
    ++rep.grad_count;
    check_finite(y, "initialization y loop", n);
  }
  return y;
}

Vector u_loop(const BilevelProblem& p, const Vector& x0, const Vector& y0, Vector u, double beta0,
              int Q0, const std::optional<InitBatchPlan>& batches, std::mt19937_64* rng,
              InitReport& rep) {
  const std::size_t low = p.lower_population().value_or(0);
  const std::size_t up = p.upper_population().value_or(low);
  for (int q = 0; q < Q0; ++q) {
    const auto bh = maybe_draw(batches ? std::optional(batches->lower) : std::nullopt, low, rng);
    const auto bf = maybe_draw(batches ? std::optional(batches->upper) : std::nullopt, up, rng);
    const Vector Hu = bh ? p.hvp22_g_b(x0, y0, u, *bh) : p.hvp22_g(x0, y0, u);
    const Vector gf = bf ? p.grad2_f_b(x0, y0, *bf) : p.grad2_f(x0, y0);
    u -= beta0 * (Hu - gf);
    ++rep.hvp_count;
    ++rep.grad_count;
    check_finite(u, "initialization u loop", q);
  }
  return u;
}

void fill_achieved(const BilevelProblem& p, const Vector& x0, InitReport& rep) {
  const auto y_star = p.exact_lower_solution(x0);
  if (!y_star) return;
  rep.achieved_y_dist = (rep.y0 - *y_star).norm();
  rep.achieved_u_dist = (rep.u0 - adjoint_at(p, x0, *y_star)).norm();
}

void check_beta(const SmoothnessConstants& c, double beta0) {
  if (!(beta0 > 0.0) || beta0 > 1.0 / c.L_f1 * (1.0 + 1e-12) ||
      beta0 > 1.0 / c.L_g1 * (1.0 + 1e-12)) {
    throw DomainError(fmt::format("beta0 = {} must lie in (0, min(1/L_f1, 1/L_g1)]", beta0));
  }
}

}  // namespace

InitReport run_init_loops(const BilevelProblem& p, const Vector& x0, const Vector& y00,
                          const Vector& u00, double beta0, int N0, int Q0,
                          const std::optional<InitBatchPlan>& batches, std::mt19937_64* rng) {
  check_shapes(p, x0, y00, u00);
  if (batches && (!rng || !p.is_finite_sum())) {
    throw ConfigError("sampled initialization needs a finite-sum problem and an RNG");
  }
  InitReport rep;
  rep.N0 = N0;
  rep.Q0 = Q0;
  rep.y0 = y_loop(p, x0, y00, beta0, N0, batches ? std::optional(batches->lower) : std::nullopt,
                  rng, rep);
  rep.u0 = u_loop(p, x0, rep.y0, u00, beta0, Q0, batches, rng, rep);
  return rep;
}

InitReport box1_init(const BilevelProblem& p, const SmoothnessConstants& c, const Vector& x0,
                     const Vector& y00, const Vector& u00, double beta0) {
  c.validate();
  check_beta(c, beta0);
  check_shapes(p, x0, y00, u00);
  const double mu = c.mu, L1 = c.L_1(), Lg2 = c.L_g2;
  const double log_rate = std::log(1.0 - beta0 * mu);

  InitReport rep;
  rep.target_y_radius = std::min(ratio(mu, 2.0 * Lg2), 1.0 / (2.0 * std::sqrt(L1)));
  rep.target_u_radius = std::min(ratio(5.0 * L1, 2.0 * Lg2), std::sqrt(L1) / mu);

  const double g00 = p.grad2_g(x0, y00).norm();
  ++rep.grad_count;
  const double y_goal = std::min(ratio(mu, 2.0 * std::sqrt(L1)), ratio(mu * mu, 2.0 * Lg2));
  std::tie(rep.N0, rep.N0_clamped) =
      loop_count(g00 == 0.0 ? kInf : 2.0 * std::log(y_goal / g00), log_rate);
  rep.y0 = y_loop(p, x0, y00, beta0, rep.N0, std::nullopt, nullptr, rep);

  const double g0 = p.grad2_g(x0, rep.y0).norm();
  ++rep.grad_count;
  const double u_goal = std::min(ratio(5.0 * L1, 4.0 * Lg2), std::sqrt(L1) / (2.0 * mu));
  const double u_start = u00.norm() + (L1 / (mu * mu)) * g0 + c.r_u();
  std::tie(rep.Q0, rep.Q0_clamped) =
      loop_count(u_start == 0.0 ? kInf : std::log(u_goal / u_start), log_rate);
  rep.u0 = u_loop(p, x0, rep.y0, u00, beta0, rep.Q0, std::nullopt, nullptr, rep);

  fill_achieved(p, x0, rep);
  const double slack = 1.0 + 1e-9;
  if (rep.achieved_y_dist && *rep.achieved_y_dist > rep.target_y_radius * slack) {
    throw PostconditionError(fmt::format("initial y misses its ball: {} > {}",
                                         *rep.achieved_y_dist, rep.target_y_radius));
  }
  if (rep.achieved_u_dist && *rep.achieved_u_dist > rep.target_u_radius * slack) {
    throw PostconditionError(fmt::format("initial u misses its ball: {} > {}",
                                         *rep.achieved_u_dist, rep.target_u_radius));
  }
  return rep;
}

InitReport box2_init(const BilevelProblem& p, const SmoothnessConstants& c, const Vector& x0,
                     const Vector& y00, const Vector& u00, double beta0, double r,
                     const InitBatchPlan& batches, std::mt19937_64& rng) {
  c.validate();
  check_beta(c, beta0);
  check_shapes(p, x0, y00, u00);
  if (!(r >= 1.0)) throw DomainError("moment constant r must be >= 1");
  if (!p.is_finite_sum()) throw ConfigError("stochastic initialization needs a finite-sum problem");
  const double mu = c.mu, L1 = c.L_1(), Lg2 = c.L_g2;

  InitReport rep;
  rep.target_y_radius = std::min(ratio(mu * mu, 20.0 * r * Lg2 * Lg2), 1.0 / (4.0 * L1));
  rep.target_u_radius = std::min(ratio(4.0 * L1 * L1, 5.0 * r * Lg2 * Lg2), L1 / (mu * mu));

  const double g00 = p.grad2_g(x0, y00).norm();
  ++rep.grad_count;
  const double y_goal = std::min(mu * mu / (8.0 * L1), ratio(std::pow(mu, 4), 40.0 * r * Lg2 * Lg2));
  std::tie(rep.N0, rep.N0_clamped) = loop_count(
      g00 == 0.0 ? kInf : std::log(y_goal / (g00 * g00)), std::log(1.0 - beta0 * mu));
  rep.y0 = y_loop(p, x0, y00, beta0, rep.N0, batches.lower, &rng, rep);

  const double g0 = p.grad2_g(x0, rep.y0).norm();
  ++rep.grad_count;
  const double u_goal =
      std::min(ratio(2.0 * L1 * L1, 5.0 * r * Lg2 * Lg2), L1 / (2.0 * mu * mu));
  const double u_start = u00.norm() + (L1 / (mu * mu)) * g0 + c.r_u();
  std::tie(rep.Q0, rep.Q0_clamped) =
      loop_count(u_start == 0.0 ? kInf : std::log(u_goal / (4.0 * u_start * u_start)),
                 std::log(1.0 - 0.5 * beta0 * mu));
  rep.u0 = u_loop(p, x0, rep.y0, u00, beta0, rep.Q0, batches, &rng, rep);

  fill_achieved(p, x0, rep);
  return rep;
}

}  // namespace nbo
