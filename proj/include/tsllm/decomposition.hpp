#pragma once

// Classical additive seasonal-trend decomposition and patch tokenization.

#include "tsllm/core.hpp"

#include <span>
#include <vector>

namespace tsllm {

struct Decomposition {
  Vector trend;
  Vector seasonal;
  Vector residual;
  Index period = 0;
};

struct PatchSet {
  Matrix patches;  // count x patch_len, row i = component[i*stride, i*stride + patch_len)
  Index patch_len = 0;
  Index stride = 0;
  Index count = 0;
};

/// Centered moving average of width `period` (2 x period average when even);
/// the first and last half-window are filled with the nearest defined value.
/// Returns the trend and the index range [lo, hi] where the average is defined.
inline Vector moving_average_trend(std::span<const Scalar> x, Index period, Index* lo_out = nullptr,
                                   Index* hi_out = nullptr) {
  const auto n = static_cast<Index>(x.size());
  const Index half = period / 2;
  const Index lo = half;
  const Index hi = n - 1 - half;
  Vector trend(n);
  for (Index i = lo; i <= hi; ++i) {
    Scalar acc = 0;
    if (period % 2 == 1) {
      for (Index j = i - half; j <= i + half; ++j) acc += x[j];
      trend(i) = acc / static_cast<Scalar>(period);
    } else {
      acc = 0.5 * (x[i - half] + x[i + half]);
      for (Index j = i - half + 1; j <= i + half - 1; ++j) acc += x[j];
      trend(i) = acc / static_cast<Scalar>(period);
    }
  }
  for (Index i = 0; i < lo; ++i) trend(i) = trend(lo);
  for (Index i = hi + 1; i < n; ++i) trend(i) = trend(hi);
  if (lo_out) *lo_out = lo;
  if (hi_out) *hi_out = hi;
  return trend;
}

/// Splits `series` into trend + seasonal + residual. The seasonal part is the
/// mean-centered per-phase average of the detrended series over the points
/// where the moving average is defined, tiled to full length. The residual
/// closes the sum, so additivity holds by construction.
inline Decomposition decompose(std::span<const Scalar> series, Index period) {
  const auto n = static_cast<Index>(series.size());
  if (period < 1) throw ConfigError("decompose: period must be positive");
  if (n < 2 * period) {
    throw InsufficientDataError("decompose: series of " + std::to_string(n) + " steps covers fewer than two cycles",
                                static_cast<std::size_t>(2 * period));
  }
  Decomposition d;
  d.period = period;
  Index lo = 0, hi = 0;
  d.trend = moving_average_trend(series, period, &lo, &hi);

  Vector phase_sum = Vector::Zero(period);
  Vector phase_cnt = Vector::Zero(period);
  for (Index i = lo; i <= hi; ++i) {
    phase_sum(i % period) += series[i] - d.trend(i);
    phase_cnt(i % period) += 1;
  }
  Vector phase_mean = phase_sum.cwiseQuotient(phase_cnt);
  phase_mean.array() -= phase_mean.mean();

  d.seasonal.resize(n);
  for (Index i = 0; i < n; ++i) d.seasonal(i) = phase_mean(i % period);
  Eigen::Map<const Vector> x(series.data(), n);
  d.residual = x - d.trend - d.seasonal;
  return d;
}

inline Decomposition decompose(const Vector& series, Index period) {
  return decompose(std::span<const Scalar>(series.data(), static_cast<std::size_t>(series.size())), period);
}

inline Vector recompose(const Decomposition& d) {
  if (d.trend.size() != d.seasonal.size() || d.trend.size() != d.residual.size()) {
    throw ShapeError("recompose: component lengths differ");
  }
  return d.trend + d.seasonal + d.residual;
}

inline Index patch_count(Index n, Index patch_len, Index stride) {
  if (patch_len < 1 || stride < 1) throw ConfigError("patch length and stride must be positive");
  if (patch_len > n) {
    throw ShapeError("patch length " + std::to_string(patch_len) + " exceeds sequence length " + std::to_string(n));
  }
  return (n - patch_len) / stride + 1;
}

/// Overlapping patches; samples after the last full patch are dropped.
inline PatchSet make_patches(std::span<const Scalar> component, Index patch_len, Index stride) {
  const auto n = static_cast<Index>(component.size());
  PatchSet p;
  p.patch_len = patch_len;
  p.stride = stride;
  p.count = patch_count(n, patch_len, stride);
  p.patches.resize(p.count, patch_len);
  for (Index i = 0; i < p.count; ++i) {
    for (Index j = 0; j < patch_len; ++j) p.patches(i, j) = component[i * stride + j];
  }
  return p;
}

inline PatchSet make_patches(const Vector& component, Index patch_len, Index stride) {
  return make_patches(std::span<const Scalar>(component.data(), static_cast<std::size_t>(component.size())),
                      patch_len, stride);
}

/// Trend and seasonal extraction are linear in the input, so for a fixed
/// (length, period) they are matrices. The model applies these inside the
/// autograd graph; column j is the decomposition of the j-th unit vector.
struct DecompositionOperator {
  Index length = 0;
  Index period = 0;
  Matrix trend;     // length x length
  Matrix seasonal;  // length x length

  DecompositionOperator() = default;
  DecompositionOperator(Index n, Index p) : length(n), period(p), trend(n, n), seasonal(n, n) {
    Vector e = Vector::Zero(n);
    for (Index j = 0; j < n; ++j) {
      e(j) = 1.0;
      const Decomposition d = decompose(e, p);
      trend.col(j) = d.trend;
      seasonal.col(j) = d.seasonal;
      e(j) = 0.0;
    }
  }
};

}  // namespace tsllm
