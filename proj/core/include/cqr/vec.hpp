#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "cqr/error.hpp"

namespace cqr {

using Vec = std::vector<double>;

inline void require_same_dim(std::span<const double> a, std::span<const double> b,
                             const char* what = "") {
  if (a.size() != b.size()) throw DimensionError(a.size(), b.size(), what);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a, b, "dot");
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require_same_dim(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vec scaled(std::span<const double> x, double alpha) {
  Vec out(x.begin(), x.end());
  for (double& v : out) v *= alpha;
  return out;
}

inline bool all_finite(std::span<const double> x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

// Numerically stable log(1 + exp(x)).
inline double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + (x > 0 ? x : 0.0); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(sigmoid(x)) and log(1 - sigmoid(x)) without cancellation.
inline double log_sigmoid(double x) { return -softplus(-x); }
inline double log_one_minus_sigmoid(double x) { return -softplus(x); }

}  // namespace cqr
