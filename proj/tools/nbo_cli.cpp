#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "nbo/config.hpp"
#include "nbo/constants.hpp"
#include "nbo/harness.hpp"
#include "nbo/types.hpp"

namespace {

constexpr int kConfigExit = 1;
constexpr int kRuntimeExit = 2;

int cmd_run(const std::string& path, const std::string& out_dir,
            const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& only,
            bool grid) {
  nbo::ExperimentConfig cfg = nbo::load_experiment_config(path);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (!seeds.empty()) cfg.seeds = seeds;
  if (grid && !cfg.grid) cfg.grid = nbo::GridSpec::defaults();
  if (!only.empty()) {
    std::vector<nbo::SolverConfig> kept;
    for (const auto& s : cfg.solvers) {
      for (const auto& name : only) {
        if (s.label() == name) kept.push_back(s);
      }
    }
    if (kept.size() != only.size()) {
      throw nbo::ConfigError("--solver names a solver that is not in the config");
    }
    cfg.solvers = kept;
  }

  const auto result = nbo::run_experiment(cfg);
  nbo::write_experiment_outputs(cfg, result, cfg.output_dir);

  bool diverged = false;
  for (const auto& row : result.summary) {
    std::string status = row.failure ? "FAILED: " + *row.failure : "ok";
    std::string metric;
    if (row.final_gap) {
      metric = fmt::format("gap {:.4e}", *row.final_gap);
    } else if (row.final_test_error) {
      metric = fmt::format("test error {:.4f}", *row.final_test_error);
    } else if (row.final_phi) {
      metric = fmt::format("phi {:.6e}", *row.final_phi);
    }
    fmt::print("{:<20} seed {:<4} k {:<6} {:<24} {:.2f}s  {}\n", row.solver, row.seed,
               row.iterations, metric, row.wall_seconds, status);
    diverged = diverged || row.failure.has_value();
  }
  fmt::print("outputs written to {}\n", cfg.output_dir.string());
  return diverged ? kRuntimeExit : 0;
}

int cmd_gradcheck(const std::string& path, int points) {
  const auto cfg = nbo::load_experiment_config(path);
  const auto problem = nbo::build_problem(cfg.problem);
  bool ok = true;
  for (const auto& item : nbo::run_gradcheck(*problem, cfg.problem.box, points)) {
    fmt::print("{:<18} max error {:.3e}  tolerance {:.0e}  {}\n", item.name, item.max_error,
               item.tolerance, item.passed() ? "ok" : "FAIL");
    ok = ok && item.passed();
  }
  return ok ? 0 : kRuntimeExit;
}

int cmd_constants(const std::string& path) {
  const auto cfg = nbo::load_experiment_config(path);
  const auto problem = nbo::build_problem(cfg.problem);
  const auto c = problem->smoothness(cfg.problem.box);
  fmt::print("mu      {}\nL_g1    {}\nL_g2    {}\nL_f1    {}\nL_f0    {}\nC_f0    {}\n", c.mu,
             c.L_g1, c.L_g2, c.L_f1, c.L_f0, c.C_f0);
  fmt::print("kappa   {}\nL       {}\nL_u     {}\nL_Phi   {}\n", c.kappa(), c.L(), c.L_u(),
             c.L_Phi());
  const double gamma = 1.0 / c.L_g1;
  const auto det = nbo::theoretical_deterministic_plan(c, gamma);
  fmt::print("deterministic (gamma = 1/L_g1): alpha {}  T_min {}\n", det.alpha, det.T_min);
  for (const auto& s : cfg.solvers) {
    if (!s.uses_sampling()) continue;
    nbo::StochasticPlanOptions opts;
    opts.multiplier = s.batch_multiplier;
    opts.lower_population = problem->lower_population();
    opts.upper_population = problem->upper_population();
    const auto plan = nbo::theoretical_stochastic_plan(c, gamma,
                                                       std::max(s.K, 1), s.r, opts);
    const auto& b = plan.batches;
    fmt::print(
        "stochastic {} (K = {}, gamma = 1/L_g1): alpha {}  T_min {}  batches inner {} hessian {} lower_grad {} "
        "upper_grad {} cross {}\n",
        s.label(), s.K, plan.alpha, plan.T_min, b.inner_hessian, b.hessian, b.lower_grad,
        b.upper_grad, b.cross);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bilevel optimization solvers with Newton-type hypergradients"};
  app.require_subcommand(1);

  std::string path, out_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> only;
  bool grid = false;
  int points = 20;

  auto* run = app.add_subcommand("run", "run every configured solver and seed");
  run->add_option("config", path, "experiment YAML file")->required();
  run->add_option("--out", out_dir, "output directory (overrides output_dir)");
  run->add_option("--seeds", seeds, "comma-separated seeds")->delimiter(',');
  run->add_option("--solver", only, "restrict to these solver names");
  run->add_flag("--grid", grid, "grid-search step sizes first (default grid if none configured)");

  auto* gc = app.add_subcommand("gradcheck", "check oracles against finite differences");
  gc->add_option("config", path, "experiment YAML file")->required();
  gc->add_option("--points", points, "number of random points");

  auto* cs = app.add_subcommand("constants", "print smoothness constants and theoretical plans");
  cs->add_option("config", path, "experiment YAML file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (*run) return cmd_run(path, out_dir, seeds, only, grid);
    if (*gc) return cmd_gradcheck(path, points);
    return cmd_constants(path);
  } catch (const nbo::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const nbo::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const nbo::DomainError& e) {
    std::cerr << "domain error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeExit;
  }
}
