#pragma once

// Losses, the Adam optimizer over the trainable registry, and the epoch loop
// with validation-based early stopping.

#include "tsllm/autograd.hpp"
#include "tsllm/core.hpp"
#include "tsllm/data_ingest.hpp"
#include "tsllm/model.hpp"
#include "tsllm/preprocessing.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace tsllm {

/// Mean squared error between a forecast and its target.
inline Scalar pred_loss(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ShapeError("pred_loss: shape mismatch");
  return (pred - target).squaredNorm() / static_cast<Scalar>(pred.size());
}

inline ag::Var pred_loss(const ag::Var& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ShapeError("pred_loss: shape mismatch");
  return ag::mean_all(ag::square(ag::sub(pred, ag::constant(target))));
}

/// Alignment loss from the selected prototype scores of each task. Cosine scores
/// give 1 - mean similarity; euclidean scores are negated distances, giving the mean distance.
inline ag::Var align_loss(const std::vector<ag::Var>& selected_scores, SimilarityMetric metric) {
  if (selected_scores.empty()) throw ConfigError("alignment loss needs at least one selected prototype (m_prefix > 0)");
  std::vector<ag::Var> means;
  means.reserve(selected_scores.size());
  for (const auto& s : selected_scores) {
    if (s.value().size() == 0) throw ConfigError("alignment loss over an empty selection");
    means.push_back(ag::mean_all(s));
  }
  ag::Var m = means[0];
  for (std::size_t i = 1; i < means.size(); ++i) m = ag::add(m, means[i]);
  m = ag::mul_scalar(m, ag::scalar(1.0 / static_cast<Scalar>(means.size())));
  if (metric == SimilarityMetric::Cosine) return ag::sub(ag::scalar(1.0), m);
  return ag::scale(m, -1.0);
}

inline Scalar total_loss(Scalar pred, Scalar align, Scalar lambda) {
  const Scalar t = pred + lambda * align;
  if (!std::isfinite(t)) throw NumericError("total loss is not finite");
  return t;
}

inline ag::Var total_loss(const ag::Var& pred, const ag::Var& align, Scalar lambda) {
  const ag::Var t = ag::add(pred, ag::scale(align, lambda));
  if (!std::isfinite(t.item())) throw NumericError("total loss is not finite");
  return t;
}

struct TrainConfig {
  Scalar lambda = 0.1;
  Scalar lr = 1e-4;
  int max_epochs = 20;
  int batch_size = 16;
  int patience = 3;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const {
    if (!(lambda >= 0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite non-negative number");
    if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("learning rate must be a finite non-negative number");
    if (max_epochs < 0) throw ConfigError("max_epochs must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (patience < 1) throw ConfigError("patience must be at least 1");
  }
};

/// Differentiable loss over a batch, sharing one prototype table per task.
struct BatchLoss {
  ag::Var total;
  Scalar pred = 0;
  Scalar align = 0;
};

inline BatchLoss batch_loss(const Forecaster& model, const std::vector<const WindowPair*>& batch, Scalar lambda,
                            const std::array<ag::Var, kChannels>& protos) {
  if (batch.empty()) throw DataError("empty batch");
  std::vector<ag::Var> terms;
  BatchLoss out;
  for (const WindowPair* w : batch) {
    const ForwardResult r = model.forward(w->input, protos);
    const Matrix target = standardize(w->target, r.stats, model.config().norm_eps);
    const ag::Var lp = pred_loss(r.pred_std, target);
    out.pred += lp.item();
    if (model.config().m_prefix == 0) {
      terms.push_back(lp);
      continue;
    }
    // With lambda = 0 the alignment term is reported but kept out of the graph.
    const ag::Var la = align_loss(r.selected_scores, model.config().metric);
    out.align += la.item();
    terms.push_back(lambda != 0 ? total_loss(lp, la, lambda) : lp);
  }
  ag::Var sum = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) sum = ag::add(sum, terms[i]);
  const Scalar n = static_cast<Scalar>(batch.size());
  out.total = ag::scale(sum, 1.0 / n);
  out.pred /= n;
  out.align /= n;
  if (!std::isfinite(out.total.item())) throw NumericError("batch loss is not finite");
  return out;
}

inline BatchLoss batch_loss(const Forecaster& model, const std::vector<WindowPair>& windows, Scalar lambda) {
  std::vector<const WindowPair*> ptrs;
  for (const auto& w : windows) ptrs.push_back(&w);
  return batch_loss(model, ptrs, lambda, model.prototypes());
}

/// Adam over a fixed parameter list. Parameters that received no gradient are left untouched.
class Adam {
 public:
  explicit Adam(ParameterList params, Scalar lr, Scalar beta1 = 0.9, Scalar beta2 = 0.999, Scalar eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
      v_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
    }
  }

  void step() {
    ++t_;
    const Scalar c1 = 1 - std::pow(b1_, static_cast<Scalar>(t_));
    const Scalar c2 = 1 - std::pow(b2_, static_cast<Scalar>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].var;
      if (!p.has_grad()) continue;
      const Matrix& g = p.grad();
      m_[i] = b1_ * m_[i] + (1 - b1_) * g;
      v_[i] = b2_ * v_[i] + (1 - b2_) * g.cwiseProduct(g);
      p.mutable_value().array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  long steps() const { return t_; }
  Scalar lr() const { return lr_; }

 private:
  ParameterList params_;
  Scalar lr_, b1_, b2_, eps_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

struct CurveRow {
  int epoch = 0;
  Scalar train_loss = 0;
  Scalar val_loss = 0;
  Scalar pred_loss = 0;
  Scalar align_loss = 0;
};

struct TrainResult {
  std::vector<CurveRow> curve;
  int best_epoch = 0;
  Scalar best_val_loss = 0;
  long steps = 0;
  bool early_stopped = false;
};

struct LossSummary {
  Scalar total = 0;
  Scalar pred = 0;
  Scalar align = 0;
};

/// Forward-only mean losses over a window set.
inline LossSummary evaluate_loss(const Forecaster& model, const std::vector<WindowPair>& windows, Scalar lambda,
                                 int chunk = 32) {
  if (windows.empty()) return {};
  ag::NoGradGuard guard;
  const auto protos = model.prototypes();
  LossSummary s;
  for (std::size_t i = 0; i < windows.size(); i += static_cast<std::size_t>(chunk)) {
    std::vector<const WindowPair*> batch;
    for (std::size_t j = i; j < std::min(windows.size(), i + static_cast<std::size_t>(chunk)); ++j) batch.push_back(&windows[j]);
    const BatchLoss b = batch_loss(model, batch, lambda, protos);
    const Scalar n = static_cast<Scalar>(batch.size());
    s.total += b.total.item() * n;
    s.pred += b.pred * n;
    s.align += b.align * n;
  }
  const Scalar n = static_cast<Scalar>(windows.size());
  s.total /= n;
  s.pred /= n;
  s.align /= n;
  return s;
}

/// Owns the optimizer state; one call to step() is one optimizer update.
class Trainer {
 public:
  Trainer(Forecaster& model, TrainConfig cfg) : model_(model), cfg_(cfg), adam_(model.registry(), cfg.lr) {
    cfg_.validate();
    if (model.config().m_prefix == 0 && cfg_.lambda > 0) {
      throw ConfigError("lambda > 0 requires at least one prefix prototype (m_prefix > 0)");
    }
  }

  /// Returns the batch loss before the update. Throws DivergenceError on a non-finite loss.
  BatchLoss step(const std::vector<const WindowPair*>& batch) {
    adam_.zero_grad();
    BatchLoss b;
    try {
      b = batch_loss(model_, batch, cfg_.lambda, model_.prototypes());
    } catch (const NumericError& e) {
      throw DivergenceError(e.what(), static_cast<std::size_t>(adam_.steps()));
    }
    ag::backward(b.total);
    for (const auto& p : model_.registry()) {
      if (p.var.has_grad() && !p.var.grad().allFinite()) throw DivergenceError("non-finite gradient in " + p.name, static_cast<std::size_t>(adam_.steps()));
    }
    adam_.step();
    return b;
  }

  long steps() const { return adam_.steps(); }
  const TrainConfig& config() const { return cfg_; }

 private:
  Forecaster& model_;
  TrainConfig cfg_;
  Adam adam_;
};

/// Deterministic epoch order.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch, bool shuffle) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (!shuffle) return idx;
  Rng rng(seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  return idx;
}

using EpochObserver = std::function<void(const CurveRow&)>;

/// Epoch loop. Row 0 of the curve is the untrained model. The registry is
/// restored to the epoch with the lowest validation loss (training loss when no
/// validation windows are given).
inline TrainResult train(Forecaster& model, const std::vector<WindowPair>& train_windows,
                         const std::vector<WindowPair>& val_windows, const TrainConfig& cfg,
                         const EpochObserver& observer = {}) {
  if (train_windows.empty()) throw InsufficientDataError("training set has no windows", 1);
  Trainer trainer(model, cfg);
  TrainResult result;

  auto record = [&](int epoch) {
    const LossSummary tr = evaluate_loss(model, train_windows, cfg.lambda);
    const LossSummary va = val_windows.empty() ? tr : evaluate_loss(model, val_windows, cfg.lambda);
    CurveRow row{epoch, tr.total, va.total, tr.pred, tr.align};
    result.curve.push_back(row);
    if (observer) observer(row);
    return row;
  };

  CurveRow first = record(0);
  result.best_val_loss = first.val_loss;
  auto best = model.snapshot();
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto order = epoch_order(train_windows.size(), cfg.seed, epoch, cfg.shuffle);
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<const WindowPair*> batch;
      for (std::size_t j = i; j < std::min(order.size(), i + static_cast<std::size_t>(cfg.batch_size)); ++j) {
        batch.push_back(&train_windows[order[j]]);
      }
      trainer.step(batch);
    }
    const CurveRow row = record(epoch);
    if (!std::isfinite(row.train_loss)) throw DivergenceError("training loss is not finite", static_cast<std::size_t>(trainer.steps()));
    if (row.val_loss < result.best_val_loss) {
      result.best_val_loss = row.val_loss;
      result.best_epoch = epoch;
      best = model.snapshot();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  model.restore(best);
  result.steps = trainer.steps();
  return result;
}

/// Runs exactly n optimizer steps, cycling through the windows in order. Returns per-step losses.
inline std::vector<Scalar> train_steps(Forecaster& model, const std::vector<WindowPair>& windows, const TrainConfig& cfg,
                                       int n_steps) {
  if (windows.empty()) throw InsufficientDataError("training set has no windows", 1);
  Trainer trainer(model, cfg);
  std::vector<Scalar> losses;
  std::size_t cursor = 0;
  for (int s = 0; s < n_steps; ++s) {
    std::vector<const WindowPair*> batch;
    for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(&windows[cursor++ % windows.size()]);
    losses.push_back(trainer.step(batch).total.item());
  }
  return losses;
}

}  // namespace tsllm
