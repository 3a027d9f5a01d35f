#pragma once

#include <chrono>
#include <random>

#include "nbo/problem.hpp"
#include "nbo/solver.hpp"

namespace nbo::fixtures {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline Vector random_vector(Index n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vector v(n);
  for (auto& a : v) a = normal(rng);
  return v;
}

inline Vector random_in_box(Index n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> uni(lo, hi);
  Vector v(n);
  for (auto& a : v) a = uni(rng);
  return v;
}

/// g = 1/2 A y^2 - B x y, f = 1/2 (y - y_t)^2 + c/2 x^2 in one dimension.
inline QuadraticBilevel scalar_quadratic(double A = 2.0, double B = 1.0, double y_t = 1.0,
                                         double c = 1.0) {
  return QuadraticBilevel(Matrix::Constant(1, 1, A), Matrix::Constant(1, 1, B),
                          Vector::Constant(1, y_t), c);
}

inline InitialPoint zero_start(const BilevelProblem& p) {
  return {Vector::Zero(p.dim_x()), Vector::Zero(p.dim_y()), Vector::Zero(p.dim_y())};
}

inline bool same_traces(const RunTrace& a, const RunTrace& b, bool compare_counters = true) {
  if (a.records.size() != b.records.size()) return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    if (!a.records[i].same_values(b.records[i], compare_counters)) return false;
  }
  return a.final_state.x.cwiseEqual(b.final_state.x).all() &&
         a.final_state.y.cwiseEqual(b.final_state.y).all() &&
         a.final_state.u.cwiseEqual(b.final_state.u).all();
}

}  // namespace nbo::fixtures
