#pragma once

// Forecast metrics, conventional and zero-shot transfer evaluation, EvalReport
// (de)serialization and schema checks, and comparison against external baselines.

#include "tsllm/core.hpp"
#include "tsllm/data_ingest.hpp"
#include "tsllm/model.hpp"
#include "tsllm/preprocessing.hpp"

#include "json.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tsllm {

template <class A, class B>
Scalar mse(const Eigen::MatrixBase<A>& y, const Eigen::MatrixBase<B>& yhat) {
  if (y.rows() != yhat.rows() || y.cols() != yhat.cols()) throw ShapeError("mse: shape mismatch");
  if (y.size() == 0) throw ShapeError("mse: empty input");
  return (y.derived().template cast<Scalar>() - yhat.derived().template cast<Scalar>()).squaredNorm() /
         static_cast<Scalar>(y.size());
}

template <class A, class B>
Scalar mae(const Eigen::MatrixBase<A>& y, const Eigen::MatrixBase<B>& yhat) {
  if (y.rows() != yhat.rows() || y.cols() != yhat.cols()) throw ShapeError("mae: shape mismatch");
  if (y.size() == 0) throw ShapeError("mae: empty input");
  return (y.derived().template cast<Scalar>() - yhat.derived().template cast<Scalar>()).cwiseAbs().sum() /
         static_cast<Scalar>(y.size());
}

enum class MetricScale { Normalized, Physical };

inline std::string to_string(MetricScale s) { return s == MetricScale::Normalized ? "normalized" : "physical"; }

inline MetricScale parse_scale(std::string_view s) {
  if (s == "normalized") return MetricScale::Normalized;
  if (s == "physical") return MetricScale::Physical;
  throw ConfigError("unknown metric scale '" + std::string(s) + "'");
}

/// Anything that maps an input window to a physical-unit (horizon x 3) forecast.
/// External baselines plug in here.
using Predictor = std::function<Matrix(const WindowPair&)>;

/// Wraps a trained forecaster; prototypes are computed once and reused for every window.
inline Predictor forecaster_predictor(const Forecaster& model) {
  ag::NoGradGuard guard;
  auto protos = std::make_shared<std::array<ag::Var, kChannels>>(model.prototypes());
  return [&model, protos](const WindowPair& w) { return model.predict(w.input, *protos); };
}

struct HouseholdMetrics {
  Scalar mse = 0;
  Scalar mae = 0;
  std::size_t windows = 0;
};

struct EvalReport {
  std::map<int, HouseholdMetrics> per_household;
  Scalar sum_mse = 0;
  Scalar sum_mae = 0;
  std::optional<int> primary_household;           // the training household, when reported
  std::optional<HouseholdMetrics> primary;        // its conventional test metrics
  std::map<int, std::string> excluded;            // household -> reason
  MetricScale scale = MetricScale::Normalized;
  nlohmann::json config = nlohmann::json::object();

  void recompute_sums() {
    sum_mse = 0;
    sum_mae = 0;
    for (const auto& [_, m] : per_household) {
      sum_mse += m.mse;
      sum_mae += m.mae;
    }
  }
};

/// Mean window metrics. On the normalized scale both forecast and truth are
/// standardized with the statistics of the window's input block.
inline HouseholdMetrics evaluate_windows(const Predictor& predictor, const std::vector<WindowPair>& windows,
                                         MetricScale scale = MetricScale::Normalized, Scalar epsilon = 1e-5) {
  if (windows.empty()) throw EmptyEvaluationError("evaluation set is empty");
  HouseholdMetrics m;
  for (const auto& w : windows) {
    Matrix pred = predictor(w);
    if (pred.rows() != w.target.rows() || pred.cols() != w.target.cols()) {
      throw ShapeError("predictor returned " + detail::shape_str(pred.rows(), pred.cols()) + ", expected " +
                       detail::shape_str(w.target.rows(), w.target.cols()));
    }
    Matrix truth = w.target;
    if (scale == MetricScale::Normalized) {
      const NormStats stats = window_stats(w.input);
      pred = standardize(pred, stats, epsilon);
      truth = standardize(truth, stats, epsilon);
    }
    m.mse += mse(truth, pred);
    m.mae += mae(truth, pred);
  }
  m.windows = windows.size();
  m.mse /= static_cast<Scalar>(m.windows);
  m.mae /= static_cast<Scalar>(m.windows);
  return m;
}

/// Test-set metrics of the training household.
inline HouseholdMetrics evaluate_conventional(const Predictor& predictor, const std::vector<WindowPair>& test_windows,
                                              MetricScale scale = MetricScale::Normalized, Scalar epsilon = 1e-5) {
  return evaluate_windows(predictor, test_windows, scale, epsilon);
}

/// Inference-only evaluation on households never seen in training. Households
/// without a full window are excluded with a reason instead of failing the run.
inline EvalReport zero_shot_transfer(const Predictor& predictor, const std::map<int, std::vector<WindowPair>>& households,
                                     MetricScale scale = MetricScale::Normalized, Scalar epsilon = 1e-5) {
  EvalReport r;
  r.scale = scale;
  for (const auto& [id, windows] : households) {
    if (windows.empty()) {
      r.excluded[id] = "no complete window in the evaluation segment";
      continue;
    }
    r.per_household[id] = evaluate_windows(predictor, windows, scale, epsilon);
  }
  r.recompute_sums();
  return r;
}

inline nlohmann::json to_json(const HouseholdMetrics& m) {
  return {{"mse", m.mse}, {"mae", m.mae}, {"windows", m.windows}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& [id, m] : r.per_household) {
    auto j = to_json(m);
    j["household_id"] = id;
    per.push_back(j);
  }
  nlohmann::json j = {{"per_household", per},
                      {"sum_mse", r.sum_mse},
                      {"sum_mae", r.sum_mae},
                      {"household_count", r.per_household.size()},
                      {"scale", to_string(r.scale)},
                      {"config", r.config}};
  nlohmann::json excl = nlohmann::json::object();
  for (const auto& [id, why] : r.excluded) excl[std::to_string(id)] = why;
  j["excluded"] = excl;
  if (r.primary && r.primary_household) {
    j["primary"] = to_json(*r.primary);
    j["primary"]["household_id"] = *r.primary_household;
    j["sum_mse_with_primary"] = r.sum_mse + r.primary->mse;
    j["sum_mae_with_primary"] = r.sum_mae + r.primary->mae;
  }
  return j;
}

/// Structural and arithmetic checks on a serialized report. Returns the list of violations.
inline std::vector<std::string> validate_eval_report(const nlohmann::json& j) {
  std::vector<std::string> errors;
  auto need = [&](const char* key, auto pred, const char* type) {
    if (!j.contains(key)) {
      errors.push_back(std::string("missing field '") + key + "'");
      return false;
    }
    if (!pred(j.at(key))) {
      errors.push_back(std::string("field '") + key + "' must be " + type);
      return false;
    }
    return true;
  };
  auto is_num = [](const nlohmann::json& v) { return v.is_number(); };
  if (!j.is_object()) return {"report is not an object"};
  need("per_household", [](const nlohmann::json& v) { return v.is_array(); }, "an array");
  need("sum_mse", is_num, "a number");
  need("sum_mae", is_num, "a number");
  need("household_count", [](const nlohmann::json& v) { return v.is_number_unsigned(); }, "a count");
  need("scale", [](const nlohmann::json& v) { return v.is_string() && (v == "normalized" || v == "physical"); },
       "'normalized' or 'physical'");
  need("config", [](const nlohmann::json& v) { return v.is_object(); }, "an object");
  need("excluded", [](const nlohmann::json& v) { return v.is_object(); }, "an object");
  if (!errors.empty()) return errors;

  Scalar s_mse = 0, s_mae = 0;
  for (const auto& row : j.at("per_household")) {
    const bool ok = row.is_object() && row.contains("household_id") && row["household_id"].is_number_integer() &&
                    row.contains("mse") && row["mse"].is_number() && row.contains("mae") && row["mae"].is_number() &&
                    row.contains("windows") && row["windows"].is_number_unsigned();
    if (!ok) {
      errors.push_back("malformed per-household row: " + row.dump());
      continue;
    }
    if (row["mse"].get<Scalar>() < 0 || row["mae"].get<Scalar>() < 0) errors.push_back("negative metric in " + row.dump());
    if (row["windows"].get<std::size_t>() == 0) errors.push_back("household row with zero windows: " + row.dump());
    s_mse += row["mse"].get<Scalar>();
    s_mae += row["mae"].get<Scalar>();
  }
  if (j["household_count"].get<std::size_t>() != j["per_household"].size()) errors.push_back("household_count disagrees with rows");
  if (std::abs(s_mse - j["sum_mse"].get<Scalar>()) > 1e-9) errors.push_back("sum_mse is not the sum of per-household MSE");
  if (std::abs(s_mae - j["sum_mae"].get<Scalar>()) > 1e-9) errors.push_back("sum_mae is not the sum of per-household MAE");
  return errors;
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  const auto errors = validate_eval_report(j);
  if (!errors.empty()) throw DataError("invalid EvalReport: " + errors.front());
  EvalReport r;
  for (const auto& row : j["per_household"]) {
    r.per_household[row["household_id"].get<int>()] = {row["mse"], row["mae"], row["windows"]};
  }
  r.sum_mse = j["sum_mse"];
  r.sum_mae = j["sum_mae"];
  r.scale = parse_scale(j["scale"].get<std::string>());
  r.config = j["config"];
  for (auto it = j["excluded"].begin(); it != j["excluded"].end(); ++it) r.excluded[std::stoi(it.key())] = it.value();
  if (j.contains("primary")) {
    const auto& p = j["primary"];
    r.primary_household = p["household_id"].get<int>();
    r.primary = HouseholdMetrics{p["mse"], p["mae"], p["windows"]};
  }
  return r;
}

struct BaselineEntry {
  std::string model;
  std::optional<Scalar> sum_mse;
  std::optional<Scalar> sum_mae;
};

struct ComparisonRow {
  std::string model;
  std::string metric;  // "sum_mse" | "sum_mae"
  Scalar baseline = 0;
  Scalar ours = 0;
  Scalar delta = 0;  // (baseline - ours) / baseline; positive = we improve
};

struct Comparison {
  std::vector<ComparisonRow> rows;
  std::vector<std::string> notes;
};

/// Relative improvement over user-supplied baseline numbers. Missing entries are noted, not compared.
inline Comparison compare_external(Scalar ours_mse, Scalar ours_mae, const std::vector<BaselineEntry>& baselines) {
  Comparison out;
  for (const auto& b : baselines) {
    auto add = [&](const char* metric, const std::optional<Scalar>& base, Scalar ours) {
      if (!base) {
        out.notes.push_back(b.model + ": no " + metric + " supplied, row omitted");
        return;
      }
      if (*base == 0) {
        out.notes.push_back(b.model + ": " + metric + " baseline is zero, row omitted");
        return;
      }
      out.rows.push_back({b.model, metric, *base, ours, (*base - ours) / *base});
    };
    add("sum_mse", b.sum_mse, ours_mse);
    add("sum_mae", b.sum_mae, ours_mae);
  }
  return out;
}

inline Comparison compare_external(const EvalReport& report, const std::vector<BaselineEntry>& baselines) {
  return compare_external(report.sum_mse, report.sum_mae, baselines);
}

}  // namespace tsllm
