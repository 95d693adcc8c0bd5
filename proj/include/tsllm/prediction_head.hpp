#pragma once

// Output side: drop prefix positions, map the flattened body hidden states to
// per-component horizon forecasts, recompose, and undo the normalization.

#include "tsllm/autograd.hpp"
#include "tsllm/backbone.hpp"
#include "tsllm/core.hpp"
#include "tsllm/nn.hpp"
#include "tsllm/preprocessing.hpp"

#include "json.hpp"

#include <array>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace tsllm {

struct ComponentForecast {
  Vector trend;
  Vector seasonal;
  Vector residual;
};

/// Y = W_r flatten(H_body) + b_r, shared by the three channel tasks.
/// Output layout: [trend (H) | seasonal (H) | residual (H)].
struct ReconstructionHead {
  ag::Var weight;  // 3H x (n_p * d')
  ag::Var bias;    // 1 x 3H
  Index horizon = 0;

  ReconstructionHead() = default;
  ReconstructionHead(Index in_width, Index horizon_len, Rng& rng)
      : weight(make_parameter(init_uniform(3 * horizon_len, in_width, in_width, rng))),
        bias(make_parameter(init_uniform(1, 3 * horizon_len, in_width, rng))),
        horizon(horizon_len) {}
  ReconstructionHead(Matrix w, Matrix b, Index horizon_len)
      : weight(make_parameter(std::move(w))), bias(make_parameter(std::move(b))), horizon(horizon_len) {
    if (weight.rows() != 3 * horizon || bias.cols() != 3 * horizon) throw ShapeError("reconstruction head: output width must be 3 * horizon");
  }

  Index in_width() const { return weight.cols(); }

  /// (n_p x d') body hidden states -> (1 x 3H).
  ag::Var forward(const ag::Var& body_hidden) const {
    const ag::Var flat = ag::flatten(body_hidden);
    if (flat.cols() != in_width()) {
      throw ShapeError("reconstruction head expects " + std::to_string(in_width()) + " flattened values, got " +
                       std::to_string(flat.cols()));
    }
    return ag::add_row(ag::matmul_nt(flat, weight), bias);
  }
};

inline Matrix strip_prefix(const BackboneOutput& out, Index prefix_len, Index body_len) {
  if (prefix_len < 0 || out.length() != prefix_len + body_len) {
    throw ShapeError("strip_prefix: output length " + std::to_string(out.length()) + " != prefix " +
                     std::to_string(prefix_len) + " + body " + std::to_string(body_len));
  }
  return out.hidden.bottomRows(body_len);
}

inline ag::Var strip_prefix(const ag::Var& hidden, Index prefix_len) {
  if (prefix_len < 0 || prefix_len > hidden.rows()) throw ShapeError("strip_prefix: prefix longer than output");
  return ag::slice_rows(hidden, prefix_len, hidden.rows() - prefix_len);
}

inline ComponentForecast split_components(const RowVector& y, Index horizon) {
  if (y.size() != 3 * horizon) throw ShapeError("split_components: expected 3 * horizon values");
  return {y.segment(0, horizon).transpose(), y.segment(horizon, horizon).transpose(),
          y.segment(2 * horizon, horizon).transpose()};
}

inline ComponentForecast reconstruct(const Matrix& body_hidden, const ReconstructionHead& head) {
  ag::NoGradGuard guard;
  const ag::Var y = head.forward(ag::constant(body_hidden));
  return split_components(y.value().row(0), head.horizon);
}

/// Sums components per channel, then inverts the normalization. Columns follow channel order.
inline Matrix finalize(const std::array<ComponentForecast, kChannels>& components, const NormStats& stats,
                       const NormParams& params) {
  const Index H = components[0].trend.size();
  Matrix normalized(H, kChannels);
  for (int c = 0; c < kChannels; ++c) {
    const auto& f = components[static_cast<std::size_t>(c)];
    if (f.trend.size() != H || f.seasonal.size() != H || f.residual.size() != H) {
      throw ShapeError("finalize: component lengths differ");
    }
    normalized.col(c) = f.trend + f.seasonal + f.residual;
  }
  return denormalize(normalized, stats, params);
}

/// Writes a forecast as CSV (timestamp, sp_pred, hp_pred, ap_pred) plus a JSON sidecar
/// at `<csv>.json`. Timestamps are epoch seconds of each forecast step.
inline void export_forecast(const std::filesystem::path& csv, const Matrix& forecast,
                            const std::vector<std::chrono::sys_seconds>& timestamps, const nlohmann::json& sidecar = {}) {
  if (forecast.cols() != kChannels) throw ShapeError("export_forecast: forecast must have 3 columns");
  if (static_cast<Index>(timestamps.size()) != forecast.rows()) throw ShapeError("export_forecast: one timestamp per row required");
  if (csv.has_parent_path()) std::filesystem::create_directories(csv.parent_path());
  std::ofstream out(csv);
  if (!out) throw Error("cannot write " + csv.string());
  out.precision(10);
  out << "timestamp,sp_pred,hp_pred,ap_pred\n";
  for (Index i = 0; i < forecast.rows(); ++i) {
    out << timestamps[static_cast<std::size_t>(i)].time_since_epoch().count();
    for (int c = 0; c < kChannels; ++c) out << ',' << forecast(i, c);
    out << '\n';
  }
  nlohmann::json meta = sidecar.is_object() ? sidecar : nlohmann::json::object();
  meta["rows"] = forecast.rows();
  meta["columns"] = {"timestamp", "sp_pred", "hp_pred", "ap_pred"};
  std::ofstream side(csv.string() + ".json");
  side << meta.dump(2) << '\n';
}

}  // namespace tsllm
