#pragma once

// Multi-run studies: the alignment-weight sweep and the task-mode x metric ablation.
// Every run starts from a fresh model built by the caller's factory.

#include "tsllm/evaluation.hpp"
#include "tsllm/model.hpp"
#include "tsllm/training.hpp"

#include <functional>
#include <map>
#include <vector>

namespace tsllm {

struct ExperimentData {
  std::vector<WindowPair> train;
  std::vector<WindowPair> val;
  std::vector<WindowPair> test;  // primary household
  int primary_household = 1;
  std::map<int, std::vector<WindowPair>> transfer;
};

using ModelFactory = std::function<Forecaster(const ModelConfig&)>;

struct RunOutcome {
  TrainResult training;
  HouseholdMetrics conventional;
  EvalReport transfer;
};

/// Trains a fresh model and evaluates it conventionally and zero-shot.
inline RunOutcome run_once(const ModelFactory& factory, const ModelConfig& mc, const TrainConfig& tc,
                           const ExperimentData& data, MetricScale scale = MetricScale::Normalized) {
  Forecaster model = factory(mc);
  RunOutcome out;
  out.training = train(model, data.train, data.val, tc);
  const Predictor p = forecaster_predictor(model);
  if (!data.test.empty()) out.conventional = evaluate_conventional(p, data.test, scale, mc.norm_eps);
  out.transfer = zero_shot_transfer(p, data.transfer, scale, mc.norm_eps);
  if (!data.test.empty()) {
    out.transfer.primary_household = data.primary_household;
    out.transfer.primary = out.conventional;
  }
  return out;
}

struct SensitivityRow {
  Scalar lambda = 0;
  Scalar sum_mse = 0;
  Scalar sum_mae = 0;
};

inline std::vector<SensitivityRow> sensitivity_sweep(const ModelFactory& factory, const ModelConfig& mc,
                                                     TrainConfig tc, const ExperimentData& data,
                                                     const std::vector<Scalar>& grid,
                                                     MetricScale scale = MetricScale::Normalized) {
  if (grid.empty()) throw ConfigError("lambda grid is empty");
  std::vector<SensitivityRow> rows;
  for (Scalar lambda : grid) {
    tc.lambda = lambda;
    const RunOutcome r = run_once(factory, mc, tc, data, scale);
    rows.push_back({lambda, r.transfer.sum_mse, r.transfer.sum_mae});
  }
  return rows;
}

struct AblationRow {
  TaskMode task_mode = TaskMode::Mtl;
  SimilarityMetric metric = SimilarityMetric::Cosine;
  Scalar sum_mse = 0;
  Scalar sum_mae = 0;
  Scalar conventional_mse = 0;
  Scalar conventional_mae = 0;
};

/// The 2 x 2 grid over {mtl, single} x {cosine, euclidean}.
inline std::vector<AblationRow> ablation_run(const ModelFactory& factory, ModelConfig mc, const TrainConfig& tc,
                                             const ExperimentData& data,
                                             MetricScale scale = MetricScale::Normalized) {
  std::vector<AblationRow> rows;
  for (TaskMode mode : {TaskMode::Mtl, TaskMode::Single}) {
    for (SimilarityMetric metric : {SimilarityMetric::Cosine, SimilarityMetric::Euclidean}) {
      mc.task_mode = mode;
      mc.metric = metric;
      const RunOutcome r = run_once(factory, mc, tc, data, scale);
      rows.push_back({mode, metric, r.transfer.sum_mse, r.transfer.sum_mae, r.conventional.mse, r.conventional.mae});
    }
  }
  return rows;
}

}  // namespace tsllm
