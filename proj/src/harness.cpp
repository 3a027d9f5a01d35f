#include "nbo/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <yaml-cpp/yaml.h>

#include "nbo/hypergrad.hpp"
#include "nbo/init.hpp"
#include "nbo/trace_csv.hpp"

namespace nbo {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

template <typename F>
void parallel_for(std::size_t n, int threads, F&& body) {
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                    : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

struct Job {
  SolverConfig cfg;
  std::uint64_t seed;
};

RunTrace run_job(const BilevelProblem& p, const SmoothnessConstants& c, const InitSpec& init,
                 const Job& job) {
  SolverConfig cfg = job.cfg;
  cfg.seed = job.seed;
  try {
    return run_solver(p, c, cfg, make_initial_point(p, c, init, job.seed));
  } catch (const std::exception& e) {
    RunTrace t;
    t.config = cfg;
    t.constants = c;
    t.failure = e.what();
    return t;
  }
}

std::optional<double> final_phi(const BilevelProblem& p, const RunTrace& t) {
  if (t.records.empty() || t.final_state.x.size() == 0) return std::nullopt;
  if (t.records.back().phi_value && t.records.back().k == t.final_state.k) {
    return t.records.back().phi_value;
  }
  try {
    const double v = phi_value(p, t.final_state.x, t.final_state.y);
    return std::isfinite(v) ? std::optional(v) : std::nullopt;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

const SolverConfig& find_solver(const ExperimentConfig& cfg, const std::string& label) {
  if (label.empty()) return cfg.solvers.front();
  for (const auto& s : cfg.solvers)
    if (s.label() == label) return s;
  throw ConfigError(fmt::format("reference solver '{}' is not in the solver list", label));
}

}  // namespace

double median(std::vector<double> values) {
  if (values.empty()) throw ConfigError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<double> suboptimality_gap(const RunTrace& trace, double phi_star) {
  if (!std::isfinite(phi_star)) throw DomainError("phi* must be finite");
  if (trace.records.empty() || !trace.records.front().phi_value) {
    throw DiagnosticUnavailable("trace has no phi value at its first checkpoint");
  }
  const double denom = *trace.records.front().phi_value - phi_star;
  if (!(denom > 0.0)) throw DomainError("degenerate metric: the start is already optimal");
  std::vector<double> out;
  for (const auto& r : trace.records) {
    if (!r.phi_value) throw DiagnosticUnavailable(fmt::format("no phi value at k = {}", r.k));
    out.push_back((*r.phi_value - phi_star) / denom);
  }
  return out;
}

std::vector<std::pair<std::string, GridChoice>> select_grid(const std::vector<GridPoint>& points,
                                                            bool shared) {
  std::vector<std::string> solvers;
  std::vector<std::pair<double, double>> coords;
  for (const auto& g : points) {
    if (std::find(solvers.begin(), solvers.end(), g.solver) == solvers.end()) {
      solvers.push_back(g.solver);
    }
    const std::pair<double, double> c{g.inner_step, g.outer_ratio};
    if (std::find(coords.begin(), coords.end(), c) == coords.end()) coords.push_back(c);
  }
  auto objective = [&](const std::string& s, const std::pair<double, double>& c) {
    for (const auto& g : points) {
      if (g.solver == s && g.inner_step == c.first && g.outer_ratio == c.second) {
        return std::isnan(g.median_objective) ? kInf : g.median_objective;
      }
    }
    return kInf;
  };

  std::vector<std::pair<std::string, GridChoice>> out;
  if (shared) {
    std::size_t best = 0;
    double best_value = kInf;
    for (std::size_t i = 0; i < coords.size(); ++i) {
      double worst = -kInf;
      for (const auto& s : solvers) worst = std::max(worst, objective(s, coords[i]));
      if (worst < best_value) {
        best_value = worst;
        best = i;
      }
    }
    for (const auto& s : solvers) out.push_back({s, {coords[best].first, coords[best].second}});
    return out;
  }
  for (const auto& s : solvers) {
    std::size_t best = 0;
    double best_value = kInf;
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const double v = objective(s, coords[i]);
      if (v < best_value) {
        best_value = v;
        best = i;
      }
    }
    out.push_back({s, {coords[best].first, coords[best].second}});
  }
  return out;
}

InitialPoint make_initial_point(const BilevelProblem& p, const SmoothnessConstants& c,
                                const InitSpec& init, std::uint64_t seed) {
  InitialPoint pt{Vector::Constant(p.dim_x(), init.x0), Vector::Zero(p.dim_y()),
                  Vector::Zero(p.dim_y())};
  if (init.kind == InitKind::zero) return pt;
  const double beta0 = init.beta0.value_or(std::min(1.0 / c.L_f1, 1.0 / c.L_g1));
  InitReport rep;
  if (init.kind == InitKind::box1) {
    rep = box1_init(p, c, pt.x, pt.y, pt.u, beta0);
  } else {
    InitBatchPlan plan;
    if (init.batch) {
      plan = {*init.batch, *init.batch};
    } else {
      plan = initialization_batch_plan(c, init.variances, beta0, 1.0, p.grad2_g(pt.x, pt.y).norm(),
                                       p.lower_population(), p.upper_population());
    }
    std::mt19937_64 rng(seed);
    rep = box2_init(p, c, pt.x, pt.y, pt.u, beta0, 1.0, plan, rng);
  }
  pt.y = rep.y0;
  pt.u = rep.u0;
  return pt;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto problem = build_problem(cfg.problem);
  const BilevelProblem& p = *problem;
  ExperimentResult result;
  result.constants = p.smoothness(cfg.problem.box);
  const SmoothnessConstants& c = result.constants;

  std::vector<SolverConfig> solvers = cfg.solvers;
  if (cfg.grid) {
    const GridSpec& g = *cfg.grid;
    const auto& seeds = g.seeds.empty() ? cfg.seeds : g.seeds;
    std::vector<Job> jobs;
    std::vector<GridPoint> points;
    for (const auto& s : solvers) {
      for (double step : g.inner_steps) {
        for (double ratio : g.outer_ratios) {
          points.push_back({s.label(), step, ratio, kInf});
          SolverConfig trial = s;
          trial.gamma = step;
          trial.alpha = step / ratio;
          trial.K = g.K.value_or(s.K);
          trial.diagnostics = false;
          trial.trace_every = std::max(trial.K, 1);
          for (auto seed : seeds) jobs.push_back({trial, seed});
        }
      }
    }
    std::vector<double> objective(jobs.size(), kInf);
    parallel_for(jobs.size(), cfg.threads, [&](std::size_t i) {
      const RunTrace t = run_job(p, c, cfg.init, jobs[i]);
      if (!t.failure) objective[i] = final_phi(p, t).value_or(kInf);
    });
    for (std::size_t i = 0; i < points.size(); ++i) {
      std::vector<double> vals(objective.begin() + i * seeds.size(),
                               objective.begin() + (i + 1) * seeds.size());
      points[i].median_objective = median(vals);
    }
    result.grid = points;
    result.grid_choice = select_grid(points, g.shared);
    for (auto& s : solvers) {
      for (const auto& [label, choice] : result.grid_choice) {
        if (label != s.label()) continue;
        s.gamma = choice.inner_step;
        s.alpha = choice.inner_step / choice.outer_ratio;
        spdlog::info("grid choice for {}: gamma = {}, alpha = {}", label, *s.gamma, *s.alpha);
      }
    }
  }

  // Parameter problems are configuration errors, not run failures.
  for (const auto& s : solvers) resolve_parameters(p, c, s);

  std::vector<Job> jobs;
  for (const auto& s : solvers)
    for (auto seed : cfg.seeds) jobs.push_back({s, seed});
  result.traces.resize(jobs.size());
  parallel_for(jobs.size(), cfg.threads,
               [&](std::size_t i) { result.traces[i] = run_job(p, c, cfg.init, jobs[i]); });

  std::vector<std::optional<double>> finals(jobs.size());
  parallel_for(jobs.size(), cfg.threads,
               [&](std::size_t i) { finals[i] = final_phi(p, result.traces[i]); });

  // Reference value.
  const auto* quad = dynamic_cast<const QuadraticBilevel*>(&p);
  bool any_diag = false;
  for (const auto& s : solvers) any_diag = any_diag || s.diagnostics;
  ReferencePolicy policy = cfg.reference.policy;
  if (policy == ReferencePolicy::automatic) {
    policy = quad ? ReferencePolicy::closed_form
                  : (any_diag ? ReferencePolicy::long_run : ReferencePolicy::automatic);
  }
  if (policy == ReferencePolicy::closed_form) {
    if (!quad) throw ConfigError("closed-form reference needs the quadratic problem");
    result.phi_star = quad->phi_star();
  } else if (policy == ReferencePolicy::value) {
    result.phi_star = cfg.reference.value;
  } else if (policy == ReferencePolicy::long_run) {
    const SolverConfig& base = find_solver(cfg, cfg.reference.solver);
    SolverConfig ref = base;
    for (const auto& s : solvers)
      if (s.label() == base.label()) ref = s;
    ref.K = cfg.reference.K;
    ref.diagnostics = false;
    ref.trace_every = ref.K;
    double best = kInf;
    const RunTrace t = run_job(p, c, cfg.init, {ref, cfg.seeds.front()});
    if (!t.failure) best = final_phi(p, t).value_or(kInf);
    for (const auto& tr : result.traces)
      for (const auto& r : tr.records)
        if (r.phi_value) best = std::min(best, *r.phi_value);
    for (const auto& f : finals)
      if (f) best = std::min(best, *f);
    if (std::isfinite(best)) result.phi_star = best;
  }

  std::optional<double> phi0;
  if (result.phi_star) {
    try {
      phi0 = phi_value(p, Vector::Constant(p.dim_x(), cfg.init.x0));
    } catch (const std::exception&) {
    }
  }
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const RunTrace& t = result.traces[i];
    SummaryRow row;
    row.solver = jobs[i].cfg.label();
    row.seed = jobs[i].seed;
    row.failure = t.failure;
    row.final_phi = finals[i];
    if (row.final_phi && result.phi_star && phi0 && *phi0 > *result.phi_star) {
      row.final_gap = (*row.final_phi - *result.phi_star) / (*phi0 - *result.phi_star);
    }
    if (!t.records.empty()) {
      const auto& last = t.records.back();
      row.final_f = last.f_value;
      row.final_test_error = last.test_error;
      row.wall_seconds = last.wall_seconds;
      row.iterations = last.k;
      row.hvp_count = last.hvp_count;
      row.grad_count = last.grad_count;
      row.jvp_count = last.jvp_count;
    }
    result.summary.push_back(std::move(row));
  }
  return result;
}

void write_experiment_outputs(const ExperimentConfig& cfg, const ExperimentResult& result,
                              const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));

  for (const auto& t : result.traces) {
    write_trace_csv(t, dir / fmt::format("{}__seed{}.csv", t.config.label(), t.config.seed));
  }
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw ConfigError(fmt::format("cannot write '{}'", (dir / name).string()));
    return out;
  };
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };

  {
    auto out = open("summary.csv");
    out << "solver,seed,final_f,final_phi,final_gap,final_test_error,wall_seconds,iterations,"
           "hvp_count,grad_count,jvp_count,failure\n";
    for (const auto& r : result.summary) {
      std::string failure = r.failure.value_or("");
      std::replace(failure.begin(), failure.end(), ',', ';');
      std::replace(failure.begin(), failure.end(), '\n', ' ');
      out << r.solver << ',' << r.seed << ',' << format_double(r.final_f) << ','
          << opt(r.final_phi) << ',' << opt(r.final_gap) << ',' << opt(r.final_test_error) << ','
          << format_double(r.wall_seconds) << ',' << r.iterations << ',' << r.hvp_count << ','
          << r.grad_count << ',' << r.jvp_count << ',' << failure << '\n';
    }
  }
  if (!result.grid.empty()) {
    auto out = open("grid.csv");
    out << "solver,inner_step,outer_ratio,median_objective\n";
    for (const auto& g : result.grid) {
      out << g.solver << ',' << format_double(g.inner_step) << ',' << format_double(g.outer_ratio)
          << ',' << format_double(g.median_objective) << '\n';
    }
  }

  YAML::Emitter y;
  y << YAML::BeginMap;
  y << YAML::Key << "problem" << YAML::Value << cfg.problem.kind;
  const auto& c = result.constants;
  y << YAML::Key << "constants" << YAML::Value << YAML::BeginMap;
  for (auto [k, v] : {std::pair{"mu", c.mu}, {"L_g1", c.L_g1}, {"L_g2", c.L_g2},
                      {"L_f1", c.L_f1}, {"L_f0", c.L_f0}, {"C_f0", c.C_f0}}) {
    y << YAML::Key << k << YAML::Value << format_double(v);
  }
  y << YAML::EndMap;
  if (result.phi_star) y << YAML::Key << "phi_star" << YAML::Value << format_double(*result.phi_star);
  y << YAML::Key << "solvers" << YAML::Value << YAML::BeginSeq;
  std::vector<std::string> seen;
  for (const auto& t : result.traces) {
    if (std::find(seen.begin(), seen.end(), t.config.label()) != seen.end()) continue;
    seen.push_back(t.config.label());
    const auto& r = t.resolved;
    y << YAML::BeginMap;
    y << YAML::Key << "name" << YAML::Value << t.config.label();
    y << YAML::Key << "variant" << YAML::Value << std::string(to_string(t.config.variant));
    y << YAML::Key << "K" << YAML::Value << t.config.K;
    y << YAML::Key << "alpha" << YAML::Value << format_double(r.alpha);
    y << YAML::Key << "gamma" << YAML::Value << format_double(r.gamma);
    y << YAML::Key << "T" << YAML::Value << r.T;
    y << YAML::Key << "order" << YAML::Value << std::string(to_string(t.config.order));
    y << YAML::Key << "schedule" << YAML::Value << std::string(to_string(t.config.schedule));
    if (t.config.uses_sampling()) {
      y << YAML::Key << "batches" << YAML::Value << YAML::Flow << YAML::BeginSeq
        << r.batches.inner_hessian << r.batches.hessian << r.batches.lower_grad
        << r.batches.upper_grad << r.batches.cross << YAML::EndSeq;
    }
    y << YAML::EndMap;
  }
  y << YAML::EndSeq << YAML::EndMap;
  auto meta = open("meta.yaml");
  meta << y.c_str() << '\n';
}

std::vector<GradcheckItem> run_gradcheck(const BilevelProblem& p, const UpperBox& box, int points,
                                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> in_box(box.lower, box.upper);
  auto random_vec = [&](Index n, double scale) {
    Vector v(n);
    for (auto& a : v) a = scale * normal(rng);
    return v;
  };
  auto coords = [&](Index n) {
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min<std::size_t>(idx.size(), 20));
    return idx;
  };
  auto rel = [](const Vector& a, const Vector& b) {
    return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-8});
  };

  std::vector<GradcheckItem> items{{"grad1_f", 0, 1e-5},   {"grad2_f", 0, 1e-5},
                                   {"grad2_g", 0, 1e-6},   {"hvp22_g", 0, 1e-4},
                                   {"jvp12_g", 0, 1e-4},   {"hvp symmetry", 0, 1e-10},
                                   {"hvp linearity", 0, 1e-10}, {"strong convexity", 0, 1e-12}};
  if (p.is_finite_sum()) items.push_back({"full batch", 0, 0.0});
  auto note = [&](std::size_t i, double err) {
    items[i].max_error = std::max(items[i].max_error, std::isnan(err) ? kInf : err);
  };

  for (int pt = 0; pt < points; ++pt) {
    Vector x(p.dim_x());
    for (auto& a : x) a = in_box(rng);
    const Vector y = random_vec(p.dim_y(), 0.5);
    const Vector u = random_vec(p.dim_y(), 1.0);
    const double hx = 1e-6 * (1.0 + x.norm());
    const double hy = 1e-6 * (1.0 + y.norm());

    auto fd_x = [&](auto&& fn, const std::vector<Index>& idx) {
      Vector out(static_cast<Index>(idx.size()));
      for (std::size_t k = 0; k < idx.size(); ++k) {
        Vector a = x, b = x;
        a(idx[k]) += hx;
        b(idx[k]) -= hx;
        out(static_cast<Index>(k)) = (fn(a) - fn(b)) / (2.0 * hx);
      }
      return out;
    };
    auto pick = [](const Vector& v, const std::vector<Index>& idx) {
      Vector out(static_cast<Index>(idx.size()));
      for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<Index>(k)) = v(idx[k]);
      return out;
    };
    auto fd_y = [&](auto&& fn) {
      Vector out(p.dim_y());
      for (Index i = 0; i < p.dim_y(); ++i) {
        Vector a = y, b = y;
        a(i) += hy;
        b(i) -= hy;
        out(i) = (fn(a) - fn(b)) / (2.0 * hy);
      }
      return out;
    };

    const auto xi = coords(p.dim_x());
    note(0, rel(pick(p.grad1_f(x, y), xi), fd_x([&](const Vector& a) { return p.f_value(a, y); }, xi)));
    note(1, rel(p.grad2_f(x, y), fd_y([&](const Vector& b) { return p.f_value(x, b); })));
    note(2, rel(p.grad2_g(x, y), fd_y([&](const Vector& b) { return p.g_value(x, b); })));

    const Vector v = random_vec(p.dim_y(), 1.0);
    const Vector Hv = p.hvp22_g(x, y, v);
    const Vector fd_hv = (p.grad2_g(x, y + hy * v) - p.grad2_g(x, y - hy * v)) / (2.0 * hy);
    note(3, rel(Hv, fd_hv));

    Vector fd_j(static_cast<Index>(xi.size()));
    for (std::size_t k = 0; k < xi.size(); ++k) {
      Vector a = x, b = x;
      a(xi[k]) += hx;
      b(xi[k]) -= hx;
      fd_j(static_cast<Index>(k)) = (p.grad2_g(a, y) - p.grad2_g(b, y)).dot(u) / (2.0 * hx);
    }
    note(4, rel(pick(p.jvp12_g(x, y, u), xi), fd_j));

    const Vector w = random_vec(p.dim_y(), 1.0);
    const Vector Hw = p.hvp22_g(x, y, w);
    note(5, std::abs(Hv.dot(w) - v.dot(Hw)) / std::max(Hv.norm() * w.norm(), 1e-300));
    const Vector combo = p.hvp22_g(x, y, 2.0 * v - 3.0 * w);
    note(6, rel(combo, 2.0 * Hv - 3.0 * Hw));
    const double mu = p.strong_convexity(x);
    note(7, std::max(0.0, mu * v.squaredNorm() - v.dot(Hv)) / (mu * v.squaredNorm()));

    if (p.is_finite_sum()) {
      const BatchSpec lower = BatchSpec::full(*p.lower_population());
      const BatchSpec upper = BatchSpec::full(*p.upper_population());
      const bool same = p.grad2_g_b(x, y, lower) == p.grad2_g(x, y) &&
                        p.grad2_f_b(x, y, upper) == p.grad2_f(x, y) &&
                        p.grad1_f_b(x, y, upper) == p.grad1_f(x, y) &&
                        p.hvp22_g_b(x, y, v, lower) == Hv &&
                        p.jvp12_g_b(x, y, u, lower) == p.jvp12_g(x, y, u);
      note(8, same ? 0.0 : 1.0);
    }
  }
  return items;
}

}  // namespace nbo
