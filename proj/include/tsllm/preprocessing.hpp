#pragma once

// Reversible instance normalization: per-window, per-channel standardization
// with a learnable affine map, and its exact inverse for model outputs.

#include "tsllm/autograd.hpp"
#include "tsllm/core.hpp"

#include <cmath>

namespace tsllm {

struct NormParams {
  RowVector gamma = RowVector::Ones(kChannels);
  RowVector beta = RowVector::Zero(kChannels);
  Scalar epsilon = 1e-5;

  void validate(Index channels) const {
    if (!(epsilon > 0)) throw ConfigError("normalization epsilon must be positive");
    if (gamma.size() != channels || beta.size() != channels) {
      throw ShapeError("normalization parameters need one entry per channel");
    }
  }
};

/// Temporal mean and population variance of the window that produced a normalization.
struct NormStats {
  RowVector mu;
  RowVector var;
};

struct Normalized {
  Matrix values;
  NormStats stats;
};

inline NormStats window_stats(const Matrix& window) {
  if (!window.allFinite()) throw NumericError("normalize_instance: window contains non-finite values");
  NormStats s;
  s.mu = window.colwise().mean();
  s.var = (window.rowwise() - s.mu).array().square().colwise().mean();
  return s;
}

/// Stats-only standardization (x - mu) / sqrt(var + eps); the scale on which losses and metrics are reported.
inline Matrix standardize(const Matrix& x, const NormStats& stats, Scalar epsilon) {
  RowVector inv = (stats.var.array() + epsilon).rsqrt();
  return (x.rowwise() - stats.mu).array().rowwise() * inv.array();
}

/// out = gamma * (x - mu) / sqrt(var + eps) + beta, per channel.
inline Normalized normalize_instance(const Matrix& window, const NormParams& params) {
  // epsilon = 0 is accepted here so the bare formula can be exercised; the model always uses eps > 0.
  if (params.gamma.size() != window.cols() || params.beta.size() != window.cols()) {
    throw ShapeError("normalize_instance: parameter width does not match channel count");
  }
  Normalized out;
  out.stats = window_stats(window);
  RowVector denom = (out.stats.var.array() + params.epsilon).sqrt();
  Matrix z = (window.rowwise() - out.stats.mu);
  for (Index c = 0; c < window.cols(); ++c) {
    // A constant channel with eps = 0 has 0/0; its centered values are exactly zero.
    if (denom(c) > 0) z.col(c) /= denom(c);
  }
  out.values = (z.array().rowwise() * params.gamma.array()).rowwise() + params.beta.array();
  return out;
}

/// x = (y - beta) / gamma * sqrt(var + eps) + mu.
inline Matrix denormalize(const Matrix& pred, const NormStats& stats, const NormParams& params) {
  if (pred.cols() != stats.mu.size() || pred.cols() != params.gamma.size()) {
    throw ShapeError("denormalize: channel count mismatch");
  }
  for (Index c = 0; c < params.gamma.size(); ++c) {
    if (params.gamma(c) == 0.0) {
      throw NonInvertibleScaleError("denormalize: gamma is zero for channel " + std::to_string(c));
    }
  }
  RowVector scale = (stats.var.array() + params.epsilon).sqrt() / params.gamma.array();
  return ((pred.rowwise() - params.beta).array().rowwise() * scale.array()).rowwise() + stats.mu.array();
}

// Differentiable forms used during training. gamma and beta are (1 x C) parameter Vars.

/// Normalizes a raw window with trainable affine parameters.
inline ag::Var revin_forward(const Matrix& window, const ag::Var& gamma, const ag::Var& beta, Scalar epsilon,
                             NormStats* stats_out = nullptr) {
  NormStats stats = window_stats(window);
  Matrix z = standardize(window, stats, epsilon);
  if (stats_out) *stats_out = stats;
  return ag::add_row(ag::mul_row(ag::constant(std::move(z)), gamma), beta);
}

/// Maps one channel of a normalized-space forecast back to the stats-only
/// standardized scale: (y - beta_c) / gamma_c. Composing this with the window
/// stats gives exactly `denormalize`.
inline ag::Var revin_inverse_affine(const ag::Var& y, const ag::Var& gamma, const ag::Var& beta, Index channel) {
  if (gamma.value()(0, channel) == 0.0) {
    throw NonInvertibleScaleError("gamma is zero for channel " + std::to_string(channel));
  }
  return ag::div_scalar(ag::sub_scalar(y, ag::element(beta, 0, channel)), ag::element(gamma, 0, channel));
}

}  // namespace tsllm
