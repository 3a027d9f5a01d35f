#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "nbo/config.hpp"

using namespace nbo;

namespace {

constexpr const char* kFull = R"(
problem:
  kind: logistic
  n_train: 40
  n_val: 20
  p: 3
  seed: 7
  box: [-2, 2]
defaults:
  K: 30
  gamma: 0.5
  trace_every: 5
solvers:
  - {name: a, variant: nbo_gd, T: theoretical, alpha: theoretical}
  - name: b
    variant: nsbo_sgd
    gamma: 1/L_g1
    batches: {inner_hessian: 4, hessian: full, lower_grad: 8, upper_grad: 2, cross: 3}
  - {name: c, variant: amigo_gd, Q: 3, order: alternating, batches: 16, stochastic: true}
seeds: [3, 1, 2]
grid: {inner_step_sizes: [0.25, 0.5], outer_ratios: [1], shared: true, K: 9, seeds: [0]}
reference: {policy: long_run, solver: a, K: 77}
init: {kind: box2, x0: 0.5, beta0: 0.1, sigma_g1: 2, batch: 12}
output_dir: results
threads: 2
)";

}  // namespace

TEST(Config, ParsesEverySection) {
  const auto cfg = parse_experiment_config(kFull);
  EXPECT_EQ(cfg.problem.kind, "logistic");
  EXPECT_EQ(cfg.problem.n_train, 40);
  EXPECT_EQ(cfg.problem.seed, 7u);
  EXPECT_DOUBLE_EQ(cfg.problem.box.lower, -2.0);
  ASSERT_EQ(cfg.solvers.size(), 3u);

  const auto& a = cfg.solvers[0];
  EXPECT_EQ(a.label(), "a");
  EXPECT_EQ(a.K, 30);
  EXPECT_FALSE(a.T.has_value());
  EXPECT_FALSE(a.alpha.has_value());
  EXPECT_DOUBLE_EQ(*a.gamma, 0.5);
  EXPECT_EQ(a.trace_every, 5);

  const auto& b = cfg.solvers[1];
  EXPECT_EQ(b.variant, Variant::nsbo_sgd);
  EXPECT_FALSE(b.gamma.has_value());
  ASSERT_TRUE(b.batches);
  EXPECT_EQ(b.batches->inner_hessian, 4u);
  EXPECT_EQ(b.batches->hessian, kFullBatch);
  EXPECT_EQ(b.batches->cross, 3u);

  const auto& c = cfg.solvers[2];
  EXPECT_EQ(c.Q, 3);
  EXPECT_EQ(c.order, UpdateOrder::alternating);
  EXPECT_EQ(*c.batches, BatchSizes::uniform(16));
  EXPECT_TRUE(c.uses_sampling());

  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{3, 1, 2}));
  ASSERT_TRUE(cfg.grid);
  EXPECT_EQ(cfg.grid->inner_steps, (std::vector<double>{0.25, 0.5}));
  EXPECT_TRUE(cfg.grid->shared);
  EXPECT_EQ(*cfg.grid->K, 9);
  EXPECT_EQ(cfg.reference.policy, ReferencePolicy::long_run);
  EXPECT_EQ(cfg.reference.solver, "a");
  EXPECT_EQ(cfg.reference.K, 77);
  EXPECT_EQ(cfg.init.kind, InitKind::box2);
  EXPECT_DOUBLE_EQ(cfg.init.x0, 0.5);
  EXPECT_DOUBLE_EQ(*cfg.init.beta0, 0.1);
  EXPECT_DOUBLE_EQ(cfg.init.variances.sigma_g1, 2.0);
  EXPECT_EQ(*cfg.init.batch, 12u);
  EXPECT_EQ(cfg.output_dir, "results");
  EXPECT_EQ(cfg.threads, 2);
}

TEST(Config, GridDefaults) {
  const auto cfg = parse_experiment_config("solvers: [{variant: nbo_gd}]\ngrid: true\n");
  ASSERT_TRUE(cfg.grid);
  EXPECT_EQ(cfg.grid->inner_steps.size(), 6u);
  EXPECT_DOUBLE_EQ(cfg.grid->inner_steps.front(), 1.0 / 32);
  EXPECT_DOUBLE_EQ(cfg.grid->inner_steps.back(), 1.0);
  EXPECT_EQ(cfg.grid->outer_ratios.size(), 5u);
  EXPECT_FALSE(parse_experiment_config("solvers: [{variant: nbo_gd}]\ngrid: false\n").grid);
}

TEST(Config, ReferenceValueImpliesPolicy) {
  const auto cfg = parse_experiment_config("solvers: [{variant: nbo_gd}]\nreference: {value: 0.5}\n");
  EXPECT_EQ(cfg.reference.policy, ReferencePolicy::value);
  EXPECT_DOUBLE_EQ(*cfg.reference.value, 0.5);
}

TEST(Config, Errors) {
  const auto bad = [](const char* text) { EXPECT_THROW(parse_experiment_config(text), ConfigError) << text; };
  bad("solvers: [{variant: nbo_gd}]\nbogus: 1\n");
  bad("solvers: [{variant: nbo_gd, steps: 3}]\n");
  bad("solvers: [{variant: nbo_gd}]\nseeds: []\n");
  bad("solvers: []\n");
  bad("seeds: [1]\n");
  bad("solvers: [{K: 3}]\n");
  bad("solvers: [{variant: nbo_cg, stochastic: true}]\n");
  bad("solvers: [{variant: nbo_gd, K: -1}]\n");
  bad("solvers: [{variant: nbo_gd, alpha: fast}]\n");
  bad("solvers: [{variant: nbo_gd}, {variant: nbo_gd}]\n");
  bad("solvers: [{variant: nbo_gd}]\ninit: {kind: box3}\n");
  bad("solvers: [{variant: nbo_gd}]\nreference: {policy: value}\n");
  bad("solvers: [{variant: nbo_gd}]\nproblem: {box: [1, -1]}\n");
  bad("solvers: [{variant: nbo_gd}\n");
  bad("- 1\n- 2\n");
  EXPECT_THROW(load_experiment_config("/nonexistent/config.yaml"), ConfigError);
}

TEST(BuildProblem, EachKind) {
  ProblemSpec s;
  s.m = 2;
  s.n = 3;
  auto q = build_problem(s);
  EXPECT_EQ(q->kind(), "quadratic");
  EXPECT_EQ(q->dim_x(), 2);

  s.kind = "logistic";
  s.n_train = 20;
  s.n_val = 10;
  s.p = 4;
  EXPECT_EQ(build_problem(s)->dim_y(), 4);

  s.kind = "hypercleaning";
  s.n_test = 5;
  s.n_classes = 3;
  auto h = build_problem(s);
  EXPECT_EQ(h->dim_x(), 20);
  EXPECT_EQ(h->dim_y(), 12);

  s.kind = "svm";
  EXPECT_THROW(build_problem(s), ConfigError);
}

TEST(BuildProblem, LibsvmPathsRelativeToConfig) {
  const auto dir = std::filesystem::temp_directory_path() / "nbo_cfg_libsvm";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "train.svm") << "+1 1:1 2:0.5\n-1 1:-1\n+1 2:2\n-1 1:-0.5 2:-1\n";
  std::ofstream(dir / "val.svm") << "3 1:1\n0 2:-1\n";
  std::ofstream(dir / "exp.yaml")
      << "problem: {kind: libsvm, train: train.svm, validation: val.svm}\n"
         "solvers: [{variant: nbo_gd}]\n";
  const auto cfg = load_experiment_config(dir / "exp.yaml");
  EXPECT_EQ(cfg.problem.train_path, dir / "train.svm");
  const auto p = build_problem(cfg.problem);
  EXPECT_EQ(p->kind(), "logistic");
  EXPECT_EQ(p->dim_x(), 2);
  // Validation labels 3 and 0 are binarized by sign.
  const auto& val = *p->split(SplitRole::validation);
  EXPECT_DOUBLE_EQ(val.labels(0), 1.0);
  EXPECT_DOUBLE_EQ(val.labels(1), -1.0);

  ProblemSpec missing;
  missing.kind = "libsvm";
  EXPECT_THROW(build_problem(missing), ConfigError);
}
