#include "nbo/problem.hpp"

#include <numeric>
#include <string>

#include <fmt/format.h>

namespace nbo {

BatchSpec BatchSpec::full(std::size_t population) {
  BatchSpec b;
  b.indices.resize(population);
  std::iota(b.indices.begin(), b.indices.end(), std::size_t{0});
  return b;
}

BatchSpec BatchSpec::sample(std::size_t population, std::size_t size, std::mt19937_64& rng) {
  if (population == 0 || size == 0) {
    throw ConfigError("batch sampling needs a non-empty population and size >= 1");
  }
  std::uniform_int_distribution<std::size_t> pick(0, population - 1);
  BatchSpec b;
  b.indices.resize(size);
  for (auto& i : b.indices) i = pick(rng);
  return b;
}

void DatasetSplit::validate() const {
  if (features.rows() != labels.size()) {
    throw ConfigError(fmt::format("dataset has {} feature rows but {} labels", features.rows(),
                                  labels.size()));
  }
  if (!features.allFinite() || !labels.allFinite()) {
    throw ConfigError("dataset contains NaN or Inf entries");
  }
}

Vector BilevelProblem::hvp22_g(const Vector& x, const Vector& y, const Vector& v) const {
  if (v.size() != dim_y()) throw ConfigError("Hessian-vector product: direction has the wrong size");
  return hvp22_g_block(x, y, v);
}

Vector BilevelProblem::hvp22_g_b(const Vector& x, const Vector& y, const Vector& v,
                                 const BatchSpec& b) const {
  if (v.size() != dim_y()) throw ConfigError("Hessian-vector product: direction has the wrong size");
  return hvp22_g_block_b(x, y, v, b);
}

namespace {
[[noreturn]] void not_finite_sum(std::string_view kind) {
  throw ConfigError(fmt::format("problem '{}' has no finite-sum structure", kind));
}
}  // namespace

Vector BilevelProblem::grad1_f_b(const Vector&, const Vector&, const BatchSpec&) const {
  not_finite_sum(kind());
}
Vector BilevelProblem::grad2_f_b(const Vector&, const Vector&, const BatchSpec&) const {
  not_finite_sum(kind());
}
Vector BilevelProblem::grad2_g_b(const Vector&, const Vector&, const BatchSpec&) const {
  not_finite_sum(kind());
}
Matrix BilevelProblem::hvp22_g_block_b(const Vector&, const Vector&, const Matrix&,
                                       const BatchSpec&) const {
  not_finite_sum(kind());
}
Vector BilevelProblem::jvp12_g_b(const Vector&, const Vector&, const Vector&,
                                 const BatchSpec&) const {
  not_finite_sum(kind());
}

void BilevelProblem::check_dims(const Vector& x, const Vector& y) const {
  if (x.size() != dim_x() || y.size() != dim_y()) {
    throw ConfigError(fmt::format("dimension mismatch: got x[{}], y[{}], expected x[{}], y[{}]",
                                  x.size(), y.size(), dim_x(), dim_y()));
  }
}

void BilevelProblem::check_batch(const BatchSpec& b,
                                 std::optional<std::size_t> population) const {
  if (b.indices.empty()) throw ConfigError("empty batch");
  if (!population) not_finite_sum(kind());
  for (auto i : b.indices) {
    if (i >= *population) {
      throw ConfigError(fmt::format("batch index {} outside population of {}", i, *population));
    }
  }
}

}  // namespace nbo
