#pragma once

#include "tsllm/autograd.hpp"
#include "tsllm/core.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace tsllm {

using Rng = std::mt19937_64;

/// A named handle onto a parameter leaf. Copies share storage.
struct NamedParameter {
  std::string name;
  ag::Var var;
};

using ParameterList = std::vector<NamedParameter>;

inline ag::Var make_parameter(Matrix value, bool trainable = true) { return ag::Var(std::move(value), trainable); }

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual linear-layer initialization.
inline Matrix init_uniform(Index rows, Index cols, Index fan_in, Rng& rng) {
  const Scalar bound = 1.0 / std::sqrt(static_cast<Scalar>(fan_in));
  std::uniform_real_distribution<Scalar> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

inline Matrix init_normal(Index rows, Index cols, Scalar stddev, Rng& rng) {
  std::normal_distribution<Scalar> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

/// Deep copy of parameter values (no graph, no grads).
inline Matrix clone_value(const ag::Var& v) { return v.value(); }

inline std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += static_cast<std::size_t>(p.var.value().size());
  return n;
}

}  // namespace tsllm
