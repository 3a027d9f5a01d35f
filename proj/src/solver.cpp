#include "nbo/solver.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "nbo/hypergrad.hpp"

namespace nbo {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::nbo_gd: return "nbo_gd";
    case Variant::nbo_cg: return "nbo_cg";
    case Variant::nsbo_sgd: return "nsbo_sgd";
    case Variant::single_loop: return "single_loop";
    case Variant::amigo_gd: return "amigo_gd";
  }
  return "unknown";
}

std::string_view to_string(UpdateOrder o) {
  return o == UpdateOrder::parallel ? "parallel" : "alternating";
}

std::string_view to_string(StepSchedule s) {
  return s == StepSchedule::constant ? "constant" : "inverse_sqrt";
}

Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::nbo_gd, Variant::nbo_cg, Variant::nsbo_sgd, Variant::single_loop,
                 Variant::amigo_gd}) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError(fmt::format("unknown solver variant '{}'", name));
}

UpdateOrder parse_update_order(std::string_view name) {
  if (name == "parallel") return UpdateOrder::parallel;
  if (name == "alternating") return UpdateOrder::alternating;
  throw ConfigError(fmt::format("unknown update order '{}'", name));
}

StepSchedule parse_step_schedule(std::string_view name) {
  if (name == "constant") return StepSchedule::constant;
  if (name == "inverse_sqrt") return StepSchedule::inverse_sqrt;
  throw ConfigError(fmt::format("unknown step schedule '{}'", name));
}

void SolverConfig::validate() const {
  if (K < 0) throw ConfigError("K must be non-negative");
  if (T && *T < 0) throw ConfigError("T must be non-negative");
  if (Q < 1) throw ConfigError("Q must be at least 1");
  if (alpha && !(*alpha >= 0.0 && std::isfinite(*alpha))) {
    throw ConfigError("alpha must be finite and non-negative");
  }
  if (gamma && !(*gamma > 0.0 && std::isfinite(*gamma))) {
    throw ConfigError("gamma must be finite and positive");
  }
  if (trace_every < 1) throw ConfigError("trace_every must be at least 1");
  if (!(batch_multiplier > 0.0)) throw ConfigError("batch_multiplier must be positive");
  if (!(r >= 1.0)) throw ConfigError("r must be at least 1");
  if (!(cg_tol >= 0.0)) throw ConfigError("cg_tol must be non-negative");
  if (!(diagnostic_min_seconds >= 0.0)) throw ConfigError("diagnostic_min_seconds must be >= 0");
  if (variant == Variant::nbo_cg && stochastic) {
    throw ConfigError("nbo_cg has no stochastic mode");
  }
}

bool TraceRecord::same_values(const TraceRecord& o, bool compare_counters) const {
  auto same_vec = [](const std::optional<Vector>& a, const std::optional<Vector>& b) {
    if (a.has_value() != b.has_value()) return false;
    return !a || (a->size() == b->size() && (*a).cwiseEqual(*b).all());
  };
  bool same = k == o.k && f_value == o.f_value && phi_value == o.phi_value &&
              hypergrad_norm == o.hypergrad_norm && exact_grad_norm == o.exact_grad_norm &&
              dist_y == o.dist_y && dist_u == o.dist_u && val_error == o.val_error &&
              test_error == o.test_error && same_vec(x, o.x);
  if (compare_counters) {
    same = same && hvp_count == o.hvp_count && grad_count == o.grad_count &&
           jvp_count == o.jvp_count;
  }
  return same;
}

ResolvedParameters resolve_parameters(const BilevelProblem& p, const SmoothnessConstants& c,
                                      const SolverConfig& cfg) {
  cfg.validate();
  ResolvedParameters out;
  const bool theoretical = !cfg.alpha || !cfg.T || (cfg.uses_sampling() && !cfg.batches);
  if (theoretical || !cfg.gamma) c.validate();
  out.gamma = cfg.gamma.value_or(1.0 / c.L_g1);

  std::optional<DeterministicPlan> det;
  std::optional<StochasticPlan> sto;
  if (theoretical) {
    if (cfg.uses_sampling()) {
      StochasticPlanOptions opts{cfg.batch_multiplier, p.lower_population(), p.upper_population()};
      sto = theoretical_stochastic_plan(c, out.gamma, std::max(cfg.K, 1), cfg.r, opts);
    } else {
      det = theoretical_deterministic_plan(c, out.gamma);
    }
  }
  out.alpha = cfg.alpha ? *cfg.alpha : (sto ? sto->alpha : det->alpha);
  out.T = cfg.T ? *cfg.T : (sto ? sto->T_min : det->T_min);
  if (cfg.uses_sampling()) {
    const BatchPlan& b = sto ? sto->batches : BatchPlan{};
    out.batches = cfg.batches ? *cfg.batches
                              : BatchSizes{b.inner_hessian, b.hessian, b.lower_grad,
                                           b.upper_grad, b.cross};
  }
  return out;
}

double test_error(const BilevelProblem& p, const Vector& y, const DatasetSplit& split) {
  const auto shape = p.classifier();
  if (!shape) throw ConfigError(fmt::format("problem '{}' is not a classifier", p.kind()));
  if (split.rows() == 0) throw ConfigError("test_error needs a non-empty split");
  if (split.features.cols() != shape->n_features) throw ConfigError("feature width mismatch");
  const Index feats = shape->n_features;
  long wrong = 0;
  for (Index e = 0; e < split.rows(); ++e) {
    if (shape->n_classes == 1) {
      double score = 0.0;
      for (Index j = 0; j < feats; ++j) score += y(j) * split.features(e, j);
      const double predicted = score >= 0.0 ? 1.0 : -1.0;
      wrong += predicted != split.labels(e);
    } else {
      int best = 0;
      double best_score = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < shape->n_classes; ++k) {
        double score = 0.0;
        for (Index j = 0; j < feats; ++j) score += y(k * feats + j) * split.features(e, j);
        if (score > best_score) {
          best_score = score;
          best = k;
        }
      }
      wrong += static_cast<double>(best) != split.labels(e);
    }
  }
  return static_cast<double>(wrong) / static_cast<double>(split.rows());
}

namespace {

using Clock = std::chrono::steady_clock;

// One solver run: counted oracles, batch drawing, checkpoints.
class Run {
 public:
  Run(const BilevelProblem& p, const SmoothnessConstants& c, const SolverConfig& cfg,
      const InitialPoint& init, const IterationObserver& observer)
      : p_(p), cfg_(cfg), observer_(observer), rng_(cfg.seed) {
    if (init.x.size() != p.dim_x() || init.y.size() != p.dim_y() || init.u.size() != p.dim_y()) {
      throw ConfigError(fmt::format("initial point has sizes ({}, {}, {}), expected ({}, {}, {})",
                                    init.x.size(), init.y.size(), init.u.size(), p.dim_x(),
                                    p.dim_y(), p.dim_y()));
    }
    if (cfg.uses_sampling() && !p.is_finite_sum()) {
      throw ConfigError(fmt::format("problem '{}' has no finite-sum structure for sampling",
                                    p.kind()));
    }
    trace_.config = cfg;
    trace_.constants = c;
    trace_.resolved = resolve_parameters(p, c, cfg);
    s_.x = init.x;
    s_.y = init.y;
    s_.u = init.u;
    if (cfg.uses_sampling()) {
      lower_pop_ = *p.lower_population();
      upper_pop_ = p.upper_population().value_or(lower_pop_);
    }
  }

  template <typename Step>
  RunTrace execute(Step&& step) {
    record();
    try {
      for (int k = 0; k < cfg_.K; ++k) {
        double alpha = trace_.resolved.alpha;
        if (cfg_.schedule == StepSchedule::inverse_sqrt) alpha /= std::sqrt(k + 1.0);
        std::optional<SolverState> before;
        if (observer_) before = s_;
        const auto start = Clock::now();
        step(*this, alpha);
        check_finite(s_.x, "x", k);
        check_finite(s_.y, "y", k);
        check_finite(s_.u, "u", k);
        ++s_.k;
        elapsed_ += std::chrono::duration<double>(Clock::now() - start).count();
        if (observer_) observer_(*before, s_);
        if (s_.k % cfg_.trace_every == 0 || s_.k == cfg_.K) record();
      }
    } catch (const DivergenceError& e) {
      trace_.failure = e.what();
    } catch (const DefinitenessError& e) {
      trace_.failure = e.what();
    }
    trace_.final_state = s_;
    return std::move(trace_);
  }

  const BilevelProblem& problem() const { return p_; }
  const SolverConfig& config() const { return cfg_; }
  const ResolvedParameters& resolved() const { return trace_.resolved; }
  SolverState& state() { return s_; }
  std::mt19937_64& rng() { return rng_; }
  std::size_t lower_population() const { return lower_pop_; }

  using MaybeBatch = std::optional<BatchSpec>;
  MaybeBatch lower_batch(std::size_t size) {
    if (!cfg_.uses_sampling()) return std::nullopt;
    return draw_batch(lower_pop_, size, rng_);
  }
  MaybeBatch upper_batch(std::size_t size) {
    if (!cfg_.uses_sampling()) return std::nullopt;
    return draw_batch(upper_pop_, size, rng_);
  }

  Vector grad1_f(const Vector& x, const Vector& y, const MaybeBatch& b) {
    ++s_.grad_count;
    return b ? p_.grad1_f_b(x, y, *b) : p_.grad1_f(x, y);
  }
  Vector grad2_f(const Vector& x, const Vector& y, const MaybeBatch& b) {
    ++s_.grad_count;
    return b ? p_.grad2_f_b(x, y, *b) : p_.grad2_f(x, y);
  }
  Vector grad2_g(const Vector& x, const Vector& y, const MaybeBatch& b) {
    ++s_.grad_count;
    return b ? p_.grad2_g_b(x, y, *b) : p_.grad2_g(x, y);
  }
  Vector hvp(const Vector& x, const Vector& y, const Vector& v, const MaybeBatch& b) {
    ++s_.hvp_count;
    return b ? p_.hvp22_g_b(x, y, v, *b) : p_.hvp22_g(x, y, v);
  }
  Matrix hvp_block(const Vector& x, const Vector& y, const Matrix& V, const MaybeBatch& b) {
    s_.hvp_count += V.cols();
    return b ? p_.hvp22_g_block_b(x, y, V, *b) : p_.hvp22_g_block(x, y, V);
  }
  Vector jvp(const Vector& x, const Vector& y, const Vector& u, const MaybeBatch& b) {
    ++s_.jvp_count;
    return b ? p_.jvp12_g_b(x, y, u, *b) : p_.jvp12_g(x, y, u);
  }

 private:
  void record() {
    const Vector& x = s_.x;
    const Vector& y = s_.y;
    TraceRecord rec;
    rec.k = s_.k;
    rec.wall_seconds = elapsed_;
    rec.f_value = p_.f_value(x, y);
    rec.hypergrad_norm = (p_.grad1_f(x, y) - p_.jvp12_g(x, y, s_.u)).norm();
    const bool last = s_.k == cfg_.K;
    if (cfg_.diagnostics &&
        (s_.k == 0 || last || elapsed_ - last_diagnostic_ >= cfg_.diagnostic_min_seconds)) {
      try {
        const ExactPoint e = exact_point(p_, x, y);
        rec.phi_value = e.phi;
        rec.exact_grad_norm = e.gradient.norm();
        rec.dist_y = (y - e.y_star).norm();
        rec.dist_u = (s_.u - e.u_star).norm();
        last_diagnostic_ = elapsed_;
      } catch (const DiagnosticUnavailable&) {
        // Leave the diagnostic columns empty for this checkpoint.
      } catch (const DefinitenessError&) {
      }
    }
    if (p_.classifier()) {
      if (const auto* v = p_.split(SplitRole::validation); v && v->rows() > 0) {
        rec.val_error = test_error(p_, y, *v);
      }
      if (const auto* t = p_.split(SplitRole::test); t && t->rows() > 0) {
        rec.test_error = test_error(p_, y, *t);
      }
    }
    rec.hvp_count = s_.hvp_count;
    rec.grad_count = s_.grad_count;
    rec.jvp_count = s_.jvp_count;
    if (cfg_.record_iterates) rec.x = x;
    trace_.records.push_back(std::move(rec));
  }

  const BilevelProblem& p_;
  const SolverConfig& cfg_;
  const IterationObserver& observer_;
  std::mt19937_64 rng_;
  SolverState s_;
  RunTrace trace_;
  std::size_t lower_pop_ = 0;
  std::size_t upper_pop_ = 0;
  double elapsed_ = 0.0;
  double last_diagnostic_ = 0.0;
};

// NBO-GD, NBO-CG and NSBO-SGD share this iteration; the single loop is the
// T = 0 instance without the inner solver.
enum class Inner { gd, cg, none };

void newton_step(Run& run, double alpha, Inner inner) {
  SolverState& s = run.state();
  const ResolvedParameters& rp = run.resolved();
  const BatchSizes& bs = rp.batches;
  const bool alternating = run.config().order == UpdateOrder::alternating;

  const auto B1 = run.lower_batch(bs.hessian);
  const auto B2 = run.lower_batch(bs.lower_grad);
  const auto B3 = run.upper_batch(bs.upper_grad);
  const auto B4 = run.lower_batch(bs.cross);

  const Vector d_y = run.grad2_g(s.x, s.y, B2);
  const Vector gf2 = run.grad2_f(s.x, s.y, B3);
  const Vector d_u = run.hvp(s.x, s.y, s.u, B1) - gf2;

  Vector v, w;
  switch (inner) {
    case Inner::none:
      v = rp.gamma * d_y;
      w = rp.gamma * d_u;
      break;
    case Inner::cg: {
      const LinearOperator H = [&](const Vector& z) { return run.hvp(s.x, s.y, z, std::nullopt); };
      v = inner_cg(H, d_y, rp.T, run.config().cg_tol).solution;
      w = inner_cg(H, d_u, rp.T, run.config().cg_tol).solution;
      break;
    }
    case Inner::gd: {
      InnerResult r;
      if (run.config().uses_sampling()) {
        const BatchedBlockOperator H = [&](const Matrix& M, const BatchSpec& b) {
          return run.hvp_block(s.x, s.y, M, b);
        };
        r = inner_sgd(H, d_y, d_u, rp.gamma, rp.T, bs.inner_hessian, run.lower_population(),
                      run.rng());
      } else {
        const BlockOperator H = [&](const Matrix& M) {
          return run.hvp_block(s.x, s.y, M, std::nullopt);
        };
        r = inner_gd(H, d_y, d_u, rp.gamma, rp.T);
      }
      v = std::move(r.v);
      w = std::move(r.w);
      break;
    }
  }

  Vector d_x;
  if (!alternating) d_x = run.grad1_f(s.x, s.y, B3) - run.jvp(s.x, s.y, s.u, B4);
  s.y -= v;
  s.u -= w;
  if (alternating) d_x = run.grad1_f(s.x, s.y, B3) - run.jvp(s.x, s.y, s.u, B4);
  s.x -= alpha * d_x;
}

void amigo_step(Run& run, double alpha) {
  SolverState& s = run.state();
  const ResolvedParameters& rp = run.resolved();
  const BatchSizes& bs = rp.batches;
  const int Q = run.config().Q;

  for (int q = 0; q < Q; ++q) {
    const auto B = run.lower_batch(bs.lower_grad);
    s.y -= rp.gamma * run.grad2_g(s.x, s.y, B);
    check_finite(s.y, "lower-level iterate", q);
  }
  const auto B3 = run.upper_batch(bs.upper_grad);
  const Vector gf2 = run.grad2_f(s.x, s.y, B3);
  for (int q = 0; q < Q; ++q) {
    const auto B = run.lower_batch(bs.hessian);
    s.u -= rp.gamma * (run.hvp(s.x, s.y, s.u, B) - gf2);
    check_finite(s.u, "adjoint iterate", q);
  }
  const auto B4 = run.lower_batch(bs.cross);
  const Vector d_x = run.grad1_f(s.x, s.y, B3) - run.jvp(s.x, s.y, s.u, B4);
  s.x -= alpha * d_x;
}

void require_variant(const SolverConfig& cfg, Variant v) {
  if (cfg.variant != v) {
    throw ConfigError(fmt::format("runner for '{}' called with variant '{}'", to_string(v),
                                  to_string(cfg.variant)));
  }
}

}  // namespace

RunTrace run_nbo_gd(const BilevelProblem& p, const SmoothnessConstants& c, const SolverConfig& cfg,
                    const InitialPoint& init, const IterationObserver& observer) {
  require_variant(cfg, Variant::nbo_gd);
  Run run(p, c, cfg, init, observer);
  return run.execute([](Run& r, double a) { newton_step(r, a, Inner::gd); });
}

RunTrace run_nbo_cg(const BilevelProblem& p, const SmoothnessConstants& c, const SolverConfig& cfg,
                    const InitialPoint& init, const IterationObserver& observer) {
  require_variant(cfg, Variant::nbo_cg);
  Run run(p, c, cfg, init, observer);
  return run.execute([](Run& r, double a) { newton_step(r, a, Inner::cg); });
}

RunTrace run_nsbo_sgd(const BilevelProblem& p, const SmoothnessConstants& c,
                      const SolverConfig& cfg, const InitialPoint& init,
                      const IterationObserver& observer) {
  require_variant(cfg, Variant::nsbo_sgd);
  Run run(p, c, cfg, init, observer);
  return run.execute([](Run& r, double a) { newton_step(r, a, Inner::gd); });
}

RunTrace run_single_loop(const BilevelProblem& p, const SmoothnessConstants& c,
                         const SolverConfig& cfg, const InitialPoint& init,
                         const IterationObserver& observer) {
  require_variant(cfg, Variant::single_loop);
  SolverConfig pinned = cfg;
  pinned.T = 0;
  Run run(p, c, pinned, init, observer);
  return run.execute([](Run& r, double a) { newton_step(r, a, Inner::none); });
}

RunTrace run_amigo_gd(const BilevelProblem& p, const SmoothnessConstants& c,
                      const SolverConfig& cfg, const InitialPoint& init,
                      const IterationObserver& observer) {
  require_variant(cfg, Variant::amigo_gd);
  Run run(p, c, cfg, init, observer);
  return run.execute(amigo_step);
}

RunTrace run_solver(const BilevelProblem& p, const SmoothnessConstants& c, const SolverConfig& cfg,
                    const InitialPoint& init, const IterationObserver& observer) {
  switch (cfg.variant) {
    case Variant::nbo_gd: return run_nbo_gd(p, c, cfg, init, observer);
    case Variant::nbo_cg: return run_nbo_cg(p, c, cfg, init, observer);
    case Variant::nsbo_sgd: return run_nsbo_sgd(p, c, cfg, init, observer);
    case Variant::single_loop: return run_single_loop(p, c, cfg, init, observer);
    case Variant::amigo_gd: return run_amigo_gd(p, c, cfg, init, observer);
  }
  throw ConfigError("unknown variant");
}

}  // namespace nbo
