#include "nbo/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

namespace nbo {
namespace {

void allow_keys(const YAML::Node& node, std::string_view where,
                std::initializer_list<std::string_view> keys) {
  if (!node.IsMap()) throw ConfigError(fmt::format("'{}' must be a mapping", where));
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigError(fmt::format("unknown key '{}' in '{}'", key, where));
    }
  }
}

template <typename T>
T scalar(const YAML::Node& node, std::string_view where) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(fmt::format("'{}' has an invalid value", where));
  }
}

template <typename T>
void read(const YAML::Node& parent, const char* key, T& out) {
  if (const auto n = parent[key]) out = scalar<T>(n, key);
}

template <typename T>
void read_opt(const YAML::Node& parent, const char* key, std::optional<T>& out) {
  if (const auto n = parent[key]) out = scalar<T>(n, key);
}

template <typename T>
std::vector<T> list(const YAML::Node& node, std::string_view where) {
  if (!node.IsSequence()) throw ConfigError(fmt::format("'{}' must be a list", where));
  std::vector<T> out;
  for (const auto& item : node) out.push_back(scalar<T>(item, where));
  return out;
}

bool is_word(const YAML::Node& n, std::initializer_list<std::string_view> words) {
  if (!n.IsScalar()) return false;
  const auto s = n.Scalar();
  return std::find(words.begin(), words.end(), s) != words.end();
}

ProblemSpec parse_problem(const YAML::Node& node, const std::filesystem::path& base) {
  allow_keys(node, "problem",
             {"kind", "seed", "m", "n", "spectrum", "n_train", "n_val", "n_test", "p", "r_prime",
              "n_classes", "p_corrupt", "c_r", "train", "validation", "test", "dim", "box"});
  ProblemSpec s;
  read(node, "kind", s.kind);
  read(node, "seed", s.seed);
  read(node, "m", s.m);
  read(node, "n", s.n);
  if (const auto sp = node["spectrum"]) {
    const auto v = list<double>(sp, "spectrum");
    if (v.size() != 2) throw ConfigError("'spectrum' must be [min, max]");
    s.spectrum_min = v[0];
    s.spectrum_max = v[1];
  }
  read(node, "n_train", s.n_train);
  read(node, "n_val", s.n_val);
  read(node, "n_test", s.n_test);
  read(node, "p", s.p);
  read(node, "r_prime", s.r_prime);
  read(node, "n_classes", s.n_classes);
  read(node, "p_corrupt", s.p_corrupt);
  read(node, "c_r", s.c_r);
  auto path = [&](const char* key, std::filesystem::path& out) {
    if (const auto n = node[key]) {
      out = scalar<std::string>(n, key);
      if (out.is_relative() && !base.empty()) out = base / out;
    }
  };
  path("train", s.train_path);
  path("validation", s.validation_path);
  path("test", s.test_path);
  if (const auto d = node["dim"]) s.dim = scalar<Index>(d, "dim");
  if (const auto b = node["box"]) {
    const auto v = list<double>(b, "box");
    if (v.size() != 2 || !(v[0] <= v[1])) throw ConfigError("'box' must be [lower, upper]");
    s.box = {v[0], v[1]};
  }
  return s;
}

BatchSizes parse_batches(const YAML::Node& n) {
  if (n.IsScalar()) {
    if (n.Scalar() == "full") return BatchSizes{};
    const auto size = scalar<long long>(n, "batches");
    if (size < 1) throw ConfigError("batch sizes must be >= 1 (or 'full')");
    return BatchSizes::uniform(static_cast<std::size_t>(size));
  }
  allow_keys(n, "batches", {"inner_hessian", "hessian", "lower_grad", "upper_grad", "cross"});
  BatchSizes b;
  auto one = [&](const char* key, std::size_t& out) {
    if (const auto v = n[key]) {
      if (v.IsScalar() && v.Scalar() == "full") {
        out = kFullBatch;
        return;
      }
      const auto size = scalar<long long>(v, key);
      if (size < 1) throw ConfigError(fmt::format("batch '{}' must be >= 1 or 'full'", key));
      out = static_cast<std::size_t>(size);
    }
  };
  one("inner_hessian", b.inner_hessian);
  one("hessian", b.hessian);
  one("lower_grad", b.lower_grad);
  one("upper_grad", b.upper_grad);
  one("cross", b.cross);
  return b;
}

// Keys of `over` replace those of `base`.
YAML::Node merged(const YAML::Node& base, const YAML::Node& over) {
  YAML::Node out(YAML::NodeType::Map);
  if (base) {
    for (const auto& kv : base) out[kv.first.as<std::string>()] = kv.second;
  }
  for (const auto& kv : over) out[kv.first.as<std::string>()] = kv.second;
  return out;
}

SolverConfig parse_solver(const YAML::Node& node) {
  allow_keys(node, "solvers",
             {"name", "variant", "K", "T", "Q", "alpha", "gamma", "order", "schedule",
              "stochastic", "batches", "batch_multiplier", "r", "cg_tol", "seed", "trace_every",
              "diagnostics", "diagnostic_min_seconds", "record_iterates"});
  SolverConfig c;
  if (!node["variant"]) throw ConfigError("every solver needs a 'variant'");
  c.variant = parse_variant(scalar<std::string>(node["variant"], "variant"));
  read(node, "name", c.name);
  read(node, "K", c.K);
  if (const auto t = node["T"]) {
    c.T = is_word(t, {"theoretical"}) ? std::nullopt : std::optional(scalar<int>(t, "T"));
  }
  read(node, "Q", c.Q);
  if (const auto a = node["alpha"]) {
    c.alpha = is_word(a, {"theoretical"}) ? std::nullopt : std::optional(scalar<double>(a, "alpha"));
  }
  if (const auto g = node["gamma"]) {
    c.gamma = is_word(g, {"1/L_g1", "theoretical"}) ? std::nullopt
                                                     : std::optional(scalar<double>(g, "gamma"));
  }
  if (const auto o = node["order"]) c.order = parse_update_order(scalar<std::string>(o, "order"));
  if (const auto s = node["schedule"]) {
    c.schedule = parse_step_schedule(scalar<std::string>(s, "schedule"));
  }
  read(node, "stochastic", c.stochastic);
  if (const auto b = node["batches"]) {
    c.batches = is_word(b, {"theoretical"}) ? std::nullopt : std::optional(parse_batches(b));
  }
  read(node, "batch_multiplier", c.batch_multiplier);
  read(node, "r", c.r);
  read(node, "cg_tol", c.cg_tol);
  read(node, "seed", c.seed);
  read(node, "trace_every", c.trace_every);
  read(node, "diagnostics", c.diagnostics);
  read(node, "diagnostic_min_seconds", c.diagnostic_min_seconds);
  read(node, "record_iterates", c.record_iterates);
  c.validate();
  return c;
}

InitSpec parse_init(const YAML::Node& node) {
  allow_keys(node, "init", {"kind", "x0", "beta0", "sigma_f1", "sigma_g1", "sigma_g2", "batch"});
  InitSpec s;
  if (const auto k = node["kind"]) {
    const auto kind = scalar<std::string>(k, "kind");
    if (kind == "zero") s.kind = InitKind::zero;
    else if (kind == "box1") s.kind = InitKind::box1;
    else if (kind == "box2") s.kind = InitKind::box2;
    else throw ConfigError(fmt::format("unknown init kind '{}'", kind));
  }
  read(node, "x0", s.x0);
  read_opt(node, "beta0", s.beta0);
  read(node, "sigma_f1", s.variances.sigma_f1);
  read(node, "sigma_g1", s.variances.sigma_g1);
  read(node, "sigma_g2", s.variances.sigma_g2);
  read_opt(node, "batch", s.batch);
  return s;
}

GridSpec parse_grid(const YAML::Node& node) {
  GridSpec g = GridSpec::defaults();
  if (!node || node.IsNull()) return g;
  if (node.IsScalar()) {
    if (scalar<bool>(node, "grid")) return g;
    throw ConfigError("use 'grid: true' or a grid mapping");
  }
  allow_keys(node, "grid", {"inner_step_sizes", "outer_ratios", "shared", "K", "seeds"});
  if (const auto n = node["inner_step_sizes"]) g.inner_steps = list<double>(n, "inner_step_sizes");
  if (const auto n = node["outer_ratios"]) g.outer_ratios = list<double>(n, "outer_ratios");
  read(node, "shared", g.shared);
  read_opt(node, "K", g.K);
  if (const auto n = node["seeds"]) g.seeds = list<std::uint64_t>(n, "seeds");
  return g;
}

ReferenceSpec parse_reference(const YAML::Node& node) {
  allow_keys(node, "reference", {"policy", "value", "solver", "K"});
  ReferenceSpec r;
  if (const auto p = node["policy"]) {
    const auto policy = scalar<std::string>(p, "policy");
    if (policy == "auto") r.policy = ReferencePolicy::automatic;
    else if (policy == "closed_form") r.policy = ReferencePolicy::closed_form;
    else if (policy == "value") r.policy = ReferencePolicy::value;
    else if (policy == "long_run") r.policy = ReferencePolicy::long_run;
    else throw ConfigError(fmt::format("unknown reference policy '{}'", policy));
  }
  read_opt(node, "value", r.value);
  if (r.value && !node["policy"]) r.policy = ReferencePolicy::value;
  read(node, "solver", r.solver);
  read(node, "K", r.K);
  return r;
}

}  // namespace

GridSpec GridSpec::defaults() {
  GridSpec g;
  for (int i = 0; i < 6; ++i) g.inner_steps.push_back(std::pow(2.0, -5.0 + i));
  for (double e : {-2.0, -1.5, -1.0, -0.5, 0.0}) g.outer_ratios.push_back(std::pow(10.0, e));
  return g;
}

void ExperimentConfig::validate() const {
  if (solvers.empty()) throw ConfigError("at least one solver is required");
  if (seeds.empty()) throw ConfigError("the seed list must not be empty");
  if (threads < 0) throw ConfigError("threads must be >= 0");
  std::set<std::string> labels;
  for (const auto& s : solvers) {
    s.validate();
    if (!labels.insert(s.label()).second) {
      throw ConfigError(fmt::format("duplicate solver name '{}'", s.label()));
    }
  }
  if (grid) {
    if (grid->inner_steps.empty() || grid->outer_ratios.empty()) {
      throw ConfigError("grid lists must be non-empty");
    }
    for (double v : grid->inner_steps)
      if (!(v > 0.0)) throw ConfigError("grid inner steps must be positive");
    for (double v : grid->outer_ratios)
      if (!(v > 0.0)) throw ConfigError("grid outer ratios must be positive");
    if (grid->K && *grid->K < 1) throw ConfigError("grid K must be >= 1");
  }
  if (reference.policy == ReferencePolicy::value && !reference.value) {
    throw ConfigError("reference policy 'value' needs a value");
  }
  if (reference.K < 1) throw ConfigError("reference K must be >= 1");
}

ExperimentConfig parse_experiment_config(std::string_view yaml_text,
                                         const std::filesystem::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml_text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(fmt::format("YAML syntax error: {}", e.what()));
  }
  if (!root.IsMap()) throw ConfigError("config must be a mapping");
  allow_keys(root, "config",
             {"problem", "defaults", "solvers", "seeds", "grid", "reference", "init", "output_dir",
              "threads"});

  ExperimentConfig cfg;
  if (const auto p = root["problem"]) cfg.problem = parse_problem(p, base_dir);
  const YAML::Node defaults = root["defaults"];
  if (defaults && !defaults.IsMap()) throw ConfigError("'defaults' must be a mapping");
  if (const auto s = root["solvers"]) {
    if (!s.IsSequence()) throw ConfigError("'solvers' must be a list");
    for (const auto& node : s) {
      if (!node.IsMap()) throw ConfigError("each solver must be a mapping");
      cfg.solvers.push_back(parse_solver(merged(defaults, node)));
    }
  }
  if (const auto s = root["seeds"]) cfg.seeds = list<std::uint64_t>(s, "seeds");
  if (const auto g = root["grid"]) {
    if (!(g.IsScalar() && !scalar<bool>(g, "grid"))) cfg.grid = parse_grid(g);
  }
  if (const auto r = root["reference"]) cfg.reference = parse_reference(r);
  if (const auto i = root["init"]) cfg.init = parse_init(i);
  if (const auto o = root["output_dir"]) {
    cfg.output_dir = scalar<std::string>(o, "output_dir");
  }
  read(root, "threads", cfg.threads);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str(), path.parent_path());
}

namespace {

DatasetSplit binary_split(DatasetSplit s) {
  for (Index e = 0; e < s.labels.size(); ++e) s.labels(e) = s.labels(e) > 0 ? 1.0 : -1.0;
  return s;
}

}  // namespace

std::unique_ptr<BilevelProblem> build_problem(const ProblemSpec& s) {
  if (s.kind == "quadratic") {
    return std::make_unique<QuadraticBilevel>(
        make_quadratic_bilevel(s.m, s.n, s.spectrum_min, s.spectrum_max, s.seed));
  }
  if (s.kind == "logistic") {
    return std::make_unique<LogisticHyperparameter>(
        make_synthetic_logistic(s.n_train, s.n_val, s.p, s.r_prime, s.seed));
  }
  if (s.kind == "hypercleaning") {
    return std::make_unique<HyperCleaning>(make_hypercleaning(
        s.n_train, s.n_val, s.n_test, s.p, s.n_classes, s.p_corrupt, s.c_r, s.seed));
  }
  if (s.kind == "libsvm") {
    if (s.train_path.empty() || s.validation_path.empty()) {
      throw ConfigError("libsvm problems need 'train' and 'validation' paths");
    }
    auto train = load_libsvm(s.train_path, s.dim, SplitRole::train);
    const Index dim = s.dim.value_or(train.features.cols());
    auto val = load_libsvm(s.validation_path, dim, SplitRole::validation);
    std::optional<DatasetSplit> test;
    if (!s.test_path.empty()) test = binary_split(load_libsvm(s.test_path, dim, SplitRole::test));
    return std::make_unique<LogisticHyperparameter>(binary_split(std::move(train)),
                                                    binary_split(std::move(val)), std::move(test));
  }
  throw ConfigError(fmt::format("unknown problem kind '{}'", s.kind));
}

}  // namespace nbo
