#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nbo/constants.hpp"
#include "nbo/problem.hpp"
#include "nbo/subsolver.hpp"
#include "nbo/types.hpp"

namespace nbo {

enum class Variant { nbo_gd, nbo_cg, nsbo_sgd, single_loop, amigo_gd };
enum class UpdateOrder { parallel, alternating };
enum class StepSchedule { constant, inverse_sqrt };

std::string_view to_string(Variant v);
std::string_view to_string(UpdateOrder o);
std::string_view to_string(StepSchedule s);
/// Throws ConfigError on unknown names.
Variant parse_variant(std::string_view name);
UpdateOrder parse_update_order(std::string_view name);
StepSchedule parse_step_schedule(std::string_view name);

/// Per-role batch sizes; kFullBatch selects the whole population in order.
struct BatchSizes {
  std::size_t inner_hessian = kFullBatch;  ///< fresh per inner step
  std::size_t hessian = kFullBatch;        ///< Hessian term of D_u
  std::size_t lower_grad = kFullBatch;     ///< D_y
  std::size_t upper_grad = kFullBatch;     ///< grad F in D_u and D_x
  std::size_t cross = kFullBatch;          ///< Jacobian term of D_x

  static BatchSizes uniform(std::size_t size) { return {size, size, size, size, size}; }
  bool operator==(const BatchSizes&) const = default;
};

struct SolverConfig {
  std::string name;  ///< label in traces and summaries; defaults to the variant
  Variant variant = Variant::nbo_gd;
  int K = 100;
  std::optional<int> T = 1;          ///< nullopt: theoretical minimum
  int Q = 10;                        ///< AmIGO inner steps
  std::optional<double> alpha;       ///< nullopt: theoretical step
  std::optional<double> gamma;       ///< nullopt: 1 / L_g1
  UpdateOrder order = UpdateOrder::parallel;
  StepSchedule schedule = StepSchedule::constant;
  bool stochastic = false;           ///< sampled oracles; implied by nsbo_sgd
  std::optional<BatchSizes> batches; ///< nullopt: theoretical orders
  double batch_multiplier = 1.0;
  double r = 1.0;                    ///< moment constant of the stochastic theory
  double cg_tol = 0.0;
  std::uint64_t seed = 0;
  int trace_every = 10;
  bool diagnostics = false;          ///< exact Phi, |grad Phi|, |y - y*|, |u - u*|
  double diagnostic_min_seconds = 0.0;
  bool record_iterates = false;

  bool uses_sampling() const { return stochastic || variant == Variant::nsbo_sgd; }
  std::string label() const { return name.empty() ? std::string(to_string(variant)) : name; }
  /// Throws ConfigError on out-of-range fields.
  void validate() const;
};

struct SolverState {
  Vector x;
  Vector y;
  Vector u;
  int k = 0;
  long hvp_count = 0;
  long grad_count = 0;
  long jvp_count = 0;
};

struct InitialPoint {
  Vector x;
  Vector y;
  Vector u;
};

struct TraceRecord {
  int k = 0;
  double wall_seconds = 0.0;
  double f_value = 0.0;                 ///< f(x^k, y^k)
  std::optional<double> phi_value;      ///< f(x^k, y*(x^k))
  double hypergrad_norm = 0.0;          ///< |d_x| at (x^k, y^k, u^k), full data
  std::optional<double> exact_grad_norm;
  std::optional<double> dist_y;
  std::optional<double> dist_u;
  std::optional<double> val_error;
  std::optional<double> test_error;
  long hvp_count = 0;
  long grad_count = 0;
  long jvp_count = 0;
  std::optional<Vector> x;              ///< only with record_iterates

  /// Equality of everything except the wall clock.
  bool same_values(const TraceRecord& o, bool compare_counters = true) const;
};

/// Parameters actually used after resolving the theoretical defaults.
struct ResolvedParameters {
  double alpha = 0.0;
  double gamma = 0.0;
  int T = 0;
  BatchSizes batches;
};

struct RunTrace {
  SolverConfig config;
  SmoothnessConstants constants;
  ResolvedParameters resolved;
  std::vector<TraceRecord> records;
  SolverState final_state;
  std::optional<std::string> failure;  ///< set when the run aborted
};

/// Called after every outer iteration with the states before and after it.
using IterationObserver = std::function<void(const SolverState& before, const SolverState& after)>;

/// Fills every theoretical default from the constants and the problem.
ResolvedParameters resolve_parameters(const BilevelProblem& p, const SmoothnessConstants& c,
                                      const SolverConfig& cfg);

RunTrace run_nbo_gd(const BilevelProblem& p, const SmoothnessConstants& c, const SolverConfig& cfg,
                    const InitialPoint& init, const IterationObserver& observer = {});
RunTrace run_nbo_cg(const BilevelProblem& p, const SmoothnessConstants& c, const SolverConfig& cfg,
                    const InitialPoint& init, const IterationObserver& observer = {});
RunTrace run_nsbo_sgd(const BilevelProblem& p, const SmoothnessConstants& c,
                      const SolverConfig& cfg, const InitialPoint& init,
                      const IterationObserver& observer = {});
RunTrace run_single_loop(const BilevelProblem& p, const SmoothnessConstants& c,
                         const SolverConfig& cfg, const InitialPoint& init,
                         const IterationObserver& observer = {});
RunTrace run_amigo_gd(const BilevelProblem& p, const SmoothnessConstants& c,
                      const SolverConfig& cfg, const InitialPoint& init,
                      const IterationObserver& observer = {});

/// Dispatches on cfg.variant.
RunTrace run_solver(const BilevelProblem& p, const SmoothnessConstants& c, const SolverConfig& cfg,
                    const InitialPoint& init, const IterationObserver& observer = {});

/// Misclassification rate of the lower-level model y on `split`: sign rule
/// (score >= 0 means +1) for binary problems, first argmax otherwise.
double test_error(const BilevelProblem& p, const Vector& y, const DatasetSplit& split);

}  // namespace nbo
