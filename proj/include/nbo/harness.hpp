#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nbo/config.hpp"
#include "nbo/solver.hpp"

namespace nbo {

struct SummaryRow {
  std::string solver;
  std::uint64_t seed = 0;
  std::optional<double> final_phi;
  std::optional<double> final_gap;
  std::optional<double> final_test_error;
  double final_f = 0.0;
  double wall_seconds = 0.0;
  int iterations = 0;
  long hvp_count = 0;
  long grad_count = 0;
  long jvp_count = 0;
  std::optional<std::string> failure;
};

/// Median final objective of one solver at one grid point.
struct GridPoint {
  std::string solver;
  double inner_step = 0.0;
  double outer_ratio = 0.0;
  double median_objective = 0.0;  ///< +inf when every run failed
};

struct GridChoice {
  double inner_step = 0.0;
  double outer_ratio = 0.0;
};

struct ExperimentResult {
  SmoothnessConstants constants;
  std::optional<double> phi_star;
  std::vector<RunTrace> traces;   ///< solver-major, seeds in config order
  std::vector<SummaryRow> summary;
  std::vector<GridPoint> grid;
  std::vector<std::pair<std::string, GridChoice>> grid_choice;
};

/// Builds x0 = init.x0 everywhere and y, u from the configured start.
InitialPoint make_initial_point(const BilevelProblem& p, const SmoothnessConstants& c,
                                const InitSpec& init, std::uint64_t seed);

/// Runs every (solver, seed) pair, after a grid search when configured.
/// Runs that abort are kept with their failure reason.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Writes per-run traces, summary.csv, grid.csv and meta.yaml into `dir`.
void write_experiment_outputs(const ExperimentConfig& cfg, const ExperimentResult& result,
                              const std::filesystem::path& dir);

/// (phi_k - phi*) / (phi_0 - phi*) per checkpoint. Throws DiagnosticUnavailable
/// when a record has no phi value and DomainError when phi_0 <= phi*.
std::vector<double> suboptimality_gap(const RunTrace& trace, double phi_star);

/// Median of a non-empty list (mean of the two middle values for even sizes).
double median(std::vector<double> values);

/// Per-solver argmin of the median objective, or with `shared` the single
/// point minimizing the worst solver median. Ties go to the earliest point.
std::vector<std::pair<std::string, GridChoice>> select_grid(const std::vector<GridPoint>& points,
                                                            bool shared);

/// Oracle consistency check against central finite differences.
struct GradcheckItem {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_error <= tolerance; }
};

std::vector<GradcheckItem> run_gradcheck(const BilevelProblem& p, const UpperBox& box,
                                         int points = 20, std::uint64_t seed = 0);

}  // namespace nbo
