#include "nbo/constants.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>

#include <fmt/format.h>

#include "nbo/types.hpp"

namespace nbo {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// num / den, with a vanishing denominator meaning the bound is inactive.
double bound(double num, double den) { return den == 0.0 ? kInf : num / den; }

double min_of(std::initializer_list<double> xs) { return *std::min_element(xs.begin(), xs.end()); }

// ceil that ignores rounding noise right above an integer.
int ceil_count(double x) {
  if (!(x > 0.0)) return 0;
  const double c = std::ceil(x - 1e-9 * std::max(1.0, x));
  if (c > static_cast<double>(std::numeric_limits<int>::max())) {
    throw DomainError("inner iteration count overflows");
  }
  return static_cast<int>(c);
}

std::size_t to_count(double x) {
  const double c = std::ceil(x - 1e-9 * std::max(1.0, x));
  if (!(c >= 1.0)) return 1;
  if (c >= 1e18) return static_cast<std::size_t>(1e18);
  return static_cast<std::size_t>(c);
}

std::size_t clamp_count(std::size_t n, std::optional<std::size_t> population) {
  n = std::max<std::size_t>(n, 1);
  return population ? std::min(n, std::max<std::size_t>(*population, 1)) : n;
}

void check_gamma(const SmoothnessConstants& c, double gamma) {
  if (!(gamma > 0.0) || gamma > (1.0 / c.L_g1) * (1.0 + 1e-12)) {
    throw DomainError(fmt::format("inner step {} outside (0, 1/L_g1 = {}]", gamma, 1.0 / c.L_g1));
  }
}

}  // namespace

void SmoothnessConstants::validate() const {
  auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
  auto non_negative = [](double v) { return v >= 0.0 && std::isfinite(v); };
  if (!positive(mu)) throw DomainError(fmt::format("mu must be positive, got {}", mu));
  if (!positive(L_g1)) throw DomainError(fmt::format("L_g1 must be positive, got {}", L_g1));
  if (!positive(L_f1)) throw DomainError(fmt::format("L_f1 must be positive, got {}", L_f1));
  if (!non_negative(L_g2) || !non_negative(L_f0) || !non_negative(C_f0)) {
    throw DomainError("L_g2, L_f0 and C_f0 must be finite and non-negative");
  }
}

double SmoothnessConstants::L() const { return std::max(L_g1, L_f1); }
double SmoothnessConstants::kappa() const { return L() / mu; }
double SmoothnessConstants::r_u() const { return L_f0 / mu; }
double SmoothnessConstants::L_1() const { return L_f1 + L_g2 * r_u(); }
double SmoothnessConstants::L_2() const { return C_f0 + L_g1 * r_u(); }
double SmoothnessConstants::L_u() const { return L_1() * (1.0 + L_g1 / mu); }
double SmoothnessConstants::L_Phi() const { return hypergradient_lipschitz(*this); }

double hypergradient_lipschitz(const SmoothnessConstants& c) {
  c.validate();
  const double mu = c.mu;
  return c.L_f1 + (2.0 * c.L_f1 * c.L_g1 + c.L_g2 * c.L_f0 * c.L_f0) / mu +
         (2.0 * c.L_g1 * c.L_f0 * c.L_g2 + c.L_g1 * c.L_g1 * c.L_f1) / (mu * mu) +
         c.L_g2 * c.L_g1 * c.L_g1 * c.L_f0 / (mu * mu * mu);
}

DeterministicPlan theoretical_deterministic_plan(const SmoothnessConstants& c, double gamma) {
  c.validate();
  check_gamma(c, gamma);
  const double mu = c.mu, Lg1 = c.L_g1, Lg2 = c.L_g2;
  const double L1 = c.L_1(), L2 = c.L_2(), Lu = c.L_u();
  const double alpha = min_of({
      bound(mu * mu, 8.0 * Lg1 * L2 * Lg2),
      bound(5.0 * mu * L1, 8.0 * Lu * L2 * Lg2),
      bound(mu, 4.0 * Lg1 * Lu),
      bound(1.0, 4.0 * c.L_Phi()),
      bound(L1, 4.0 * Lu * Lu),
      bound(mu * mu, 64.0 * L1 * Lg1 * Lg1),
  });
  const double rate = 1.0 - mu * gamma;
  const int T_min = rate <= 0.0 ? 0 : ceil_count(std::log(0.25) / std::log(rate));
  return {alpha, T_min};
}

StochasticPlan theoretical_stochastic_plan(const SmoothnessConstants& c, double gamma, int K,
                                           double r, const StochasticPlanOptions& opts) {
  c.validate();
  check_gamma(c, gamma);
  if (K < 1) throw DomainError("K must be at least 1");
  if (!(r >= 1.0) || !std::isfinite(r)) throw DomainError("moment constant r must be >= 1");
  if (!(opts.multiplier > 0.0)) throw DomainError("batch multiplier must be positive");

  const double mu = c.mu, Lg1 = c.L_g1, Lg2 = c.L_g2;
  const double L1 = c.L_1(), L2 = c.L_2(), Lu = c.L_u();
  const double alpha = min_of({
      bound(mu, 6.0 * std::sqrt(2.0) * Lu * Lg1),
      bound(mu * mu, 8.0 * std::sqrt(30.0 * r) * L1 * Lg1 * Lg1),
      bound(mu * mu, 80.0 * r * Lg1 * L2 * Lg2),
      bound(L1 * mu, 6.0 * std::sqrt(10.0 * r) * Lg2 * Lu * L2),
      bound(1.0, 4.0 * c.L_Phi()),
      bound(mu * mu, 160.0 * r * L1 * Lg1 * Lg1),
      bound(L1, 3.0 * Lu * Lu),
  });

  const double half_rate = 1.0 - 0.5 * mu * gamma;
  const double target = std::max(std::log(std::sqrt(40.0 * r)), std::log(96.0));
  const int T_min = half_rate <= 0.0 ? 0 : ceil_count(target / -std::log(half_rate));

  const double k = c.kappa(), Kd = K, m = opts.multiplier;
  BatchPlan raw{
      to_count(m * k * k),
      to_count(m * (k * Kd + k * k)),
      to_count(m * (k * k * k * Kd + k * k * k * k)),
      to_count(m * Kd / k),
      to_count(m * Kd / k),
  };
  BatchPlan clamped{
      clamp_count(raw.inner_hessian, opts.lower_population),
      clamp_count(raw.hessian, opts.lower_population),
      clamp_count(raw.lower_grad, opts.lower_population),
      clamp_count(raw.upper_grad, opts.upper_population),
      clamp_count(raw.cross, opts.lower_population),
  };
  return {alpha, T_min, clamped, raw};
}

InitBatchPlan initialization_batch_plan(const SmoothnessConstants& c, const VarianceConstants& v,
                                        double beta0, double r, double grad_norm,
                                        std::optional<std::size_t> lower_population,
                                        std::optional<std::size_t> upper_population) {
  c.validate();
  if (!(beta0 > 0.0)) throw DomainError("beta0 must be positive");
  if (!(r >= 1.0)) throw DomainError("moment constant r must be >= 1");
  if (!(grad_norm >= 0.0)) throw DomainError("gradient norm must be non-negative");
  if (v.sigma_f1 < 0 || v.sigma_g1 < 0 || v.sigma_g2 < 0) {
    throw DomainError("variance constants must be non-negative");
  }
  const double mu = c.mu, Lg2 = c.L_g2, L1 = c.L_1();
  const double y_ball = std::min(bound(mu * mu, 40.0 * r * Lg2 * Lg2), 1.0 / (8.0 * L1));
  const double u_ball = std::min(bound(L1 * L1, 5.0 * r * Lg2 * Lg2), L1 / (4.0 * mu * mu));
  const double u_offset = (L1 / (mu * mu)) * grad_norm + c.r_u();

  const double lower = std::max({
      8.0 * beta0 * v.sigma_g2 * v.sigma_g2 / mu,
      v.sigma_g1 * v.sigma_g1 * beta0 / (mu * y_ball),
      32.0 * beta0 * v.sigma_g1 * v.sigma_g1 * u_offset * u_offset / (mu * u_ball),
  });
  const double upper = 16.0 * beta0 * v.sigma_f1 * v.sigma_f1 / (mu * u_ball);
  return {clamp_count(to_count(lower), lower_population),
          clamp_count(to_count(upper), upper_population)};
}

}  // namespace nbo
