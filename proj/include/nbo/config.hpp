#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nbo/constants.hpp"
#include "nbo/problem.hpp"
#include "nbo/solver.hpp"

namespace nbo {

/// Which built-in problem to build and its parameters. Fields irrelevant to
/// the chosen kind are ignored.
struct ProblemSpec {
  std::string kind = "quadratic";  ///< quadratic | logistic | hypercleaning | libsvm
  std::uint64_t seed = 0;
  // quadratic
  int m = 10;
  int n = 10;
  double spectrum_min = 1.0;
  double spectrum_max = 4.0;
  // logistic and hypercleaning
  int n_train = 2000;
  int n_val = 500;
  int n_test = 0;
  int p = 10;
  double r_prime = 1.0;
  int n_classes = 3;
  double p_corrupt = 0.5;
  double c_r = 1e-3;
  // libsvm (binary logistic on user data)
  std::filesystem::path train_path;
  std::filesystem::path validation_path;
  std::filesystem::path test_path;
  std::optional<Index> dim;
  /// Box for the upper variable used when bounding smoothness constants.
  UpperBox box;
};

enum class InitKind { zero, box1, box2 };

struct InitSpec {
  InitKind kind = InitKind::zero;
  double x0 = 0.0;                    ///< every coordinate of the upper start
  std::optional<double> beta0;        ///< default min(1/L_f1, 1/L_g1)
  VarianceConstants variances;        ///< for the theoretical stochastic batch
  std::optional<std::size_t> batch;   ///< overrides the theoretical stochastic batch
};

struct GridSpec {
  std::vector<double> inner_steps;    ///< gamma values
  std::vector<double> outer_ratios;   ///< alpha = gamma / ratio
  bool shared = false;                ///< one (gamma, ratio) for all solvers
  std::optional<int> K;               ///< iterations per grid run; default solver K
  std::vector<std::uint64_t> seeds;   ///< default: the experiment seeds

  /// Six log-spaced inner steps in [2^-5, 1] and ratios 10^{-2..0} in half decades.
  static GridSpec defaults();
};

enum class ReferencePolicy { automatic, closed_form, value, long_run };

struct ReferenceSpec {
  ReferencePolicy policy = ReferencePolicy::automatic;
  std::optional<double> value;
  std::string solver;  ///< long-run solver label; default the first solver
  int K = 5000;
};

struct ExperimentConfig {
  ProblemSpec problem;
  std::vector<SolverConfig> solvers;
  std::vector<std::uint64_t> seeds{0};
  std::optional<GridSpec> grid;
  ReferenceSpec reference;
  InitSpec init;
  std::filesystem::path output_dir = "out";
  int threads = 0;  ///< 0: hardware concurrency

  /// Throws ConfigError when solvers or seeds are empty or a field is out of range.
  void validate() const;
};

/// Parses the YAML grammar documented in the README. Throws ConfigError.
ExperimentConfig parse_experiment_config(std::string_view yaml_text,
                                         const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

std::unique_ptr<BilevelProblem> build_problem(const ProblemSpec& spec);

}  // namespace nbo
