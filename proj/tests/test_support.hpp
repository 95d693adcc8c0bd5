#pragma once

// Test-only oracles: central finite differences and small random generators.
// Nothing here calls into the autograd backward pass.

#include "tsllm/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace tsllm::testing {

inline Matrix random_matrix(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

/// d loss / d value[i] by central differences; restores the entry afterwards.
inline double central_difference(Matrix& value, Index flat_index, const std::function<double()>& loss,
                                 double h = 1e-6) {
  double* p = value.data() + flat_index;
  const double saved = *p;
  *p = saved + h;
  const double up = loss();
  *p = saved - h;
  const double down = loss();
  *p = saved;
  return (up - down) / (2.0 * h);
}

inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace tsllm::testing
