#pragma once

// The end-to-end forecaster: normalization -> per-channel decomposition and
// patching -> shared projection -> prototype prefix -> frozen backbone ->
// reconstruction head -> recomposition and inverse normalization.

#include "tsllm/autograd.hpp"
#include "tsllm/backbone.hpp"
#include "tsllm/core.hpp"
#include "tsllm/decomposition.hpp"
#include "tsllm/nn.hpp"
#include "tsllm/prediction_head.hpp"
#include "tsllm/preprocessing.hpp"
#include "tsllm/prompt_embedding.hpp"
#include "tsllm/tensor_file.hpp"

#include "json.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace tsllm {

enum class TaskMode { Mtl, Single };

inline std::string to_string(TaskMode m) { return m == TaskMode::Mtl ? "mtl" : "single"; }

inline TaskMode parse_task_mode(std::string_view s) {
  if (s == "mtl") return TaskMode::Mtl;
  if (s == "single") return TaskMode::Single;
  throw ConfigError("unknown task mode '" + std::string(s) + "'");
}

struct ModelConfig {
  Index input_len = 512;
  Index horizon = 96;
  Index period = 48;
  Index patch_len = 16;
  Index patch_stride = 8;
  Index k_proto = 1000;
  Index m_prefix = 8;
  SimilarityMetric metric = SimilarityMetric::Cosine;
  TaskMode task_mode = TaskMode::Mtl;
  Scalar norm_eps = 1e-5;
  std::uint64_t seed = 0;

  static ModelConfig toy() {
    ModelConfig c;
    c.k_proto = 32;
    return c;
  }

  Index n_patches() const { return patch_count(input_len, patch_len, patch_stride); }
  Index prompt_length() const { return m_prefix + n_patches(); }

  void validate() const {
    if (input_len <= 0 || horizon <= 0) throw ConfigError("input_len and horizon must be positive");
    if (input_len < 2 * period) throw ConfigError("input_len must cover two seasonal periods");
    if (k_proto <= 0) throw ConfigError("k_proto must be positive");
    if (m_prefix < 0 || m_prefix > k_proto) throw ConfigError("m_prefix must lie in [0, k_proto]");
    if (!(norm_eps > 0)) throw ConfigError("norm_eps must be positive");
    (void)n_patches();
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"input_len", c.input_len}, {"horizon", c.horizon},       {"period", c.period},
          {"patch_len", c.patch_len}, {"patch_stride", c.patch_stride}, {"k_proto", c.k_proto},
          {"m_prefix", c.m_prefix},   {"metric", to_string(c.metric)}, {"task_mode", to_string(c.task_mode)},
          {"norm_eps", c.norm_eps},   {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.input_len = j.at("input_len");
  c.horizon = j.at("horizon");
  c.period = j.at("period");
  c.patch_len = j.at("patch_len");
  c.patch_stride = j.at("patch_stride");
  c.k_proto = j.at("k_proto");
  c.m_prefix = j.at("m_prefix");
  c.metric = parse_metric(j.at("metric").get<std::string>());
  c.task_mode = parse_task_mode(j.at("task_mode").get<std::string>());
  c.norm_eps = j.at("norm_eps");
  c.seed = j.at("seed");
  return c;
}

inline nlohmann::json to_json(const BackboneConfig& c) {
  return {{"d_model", c.d_model},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"vocab_size", c.vocab_size},
          {"max_positions", c.max_positions},
          {"layers_used", c.layers_used},
          {"ln_eps", c.ln_eps},
          {"variant", c.variant == BackboneVariant::Toy ? "toy" : "pretrained"},
          {"weights_path", c.weights_path},
          {"seed", c.seed}};
}

inline BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
  BackboneConfig c;
  c.d_model = j.at("d_model");
  c.n_layers = j.at("n_layers");
  c.n_heads = j.at("n_heads");
  c.vocab_size = j.at("vocab_size");
  c.max_positions = j.at("max_positions");
  c.layers_used = j.at("layers_used");
  c.ln_eps = j.at("ln_eps");
  c.variant = j.at("variant").get<std::string>() == "toy" ? BackboneVariant::Toy : BackboneVariant::Pretrained;
  c.weights_path = j.at("weights_path");
  c.seed = j.at("seed");
  return c;
}

/// The trainable groups: five model components plus the normalization affine.
enum class Component { SharedInput, TokenExtraction, PositionEmbedding, LayerNorm, OutputLayer, Normalization };

inline const char* component_name(Component c) {
  switch (c) {
    case Component::SharedInput: return "shared_input_layer";
    case Component::TokenExtraction: return "token_extraction_layers";
    case Component::PositionEmbedding: return "position_embedding";
    case Component::LayerNorm: return "layer_norm";
    case Component::OutputLayer: return "output_layer";
    default: return "normalization";
  }
}

inline Component component_of(const std::string& registry_name) {
  if (registry_name.starts_with("projection.")) return Component::SharedInput;
  if (registry_name.starts_with("extractor.")) return Component::TokenExtraction;
  if (registry_name == "backbone.wpe.weight") return Component::PositionEmbedding;
  if (registry_name.starts_with("backbone.") && registry_name.find("ln_") != std::string::npos) return Component::LayerNorm;
  if (registry_name.starts_with("head.")) return Component::OutputLayer;
  if (registry_name.starts_with("revin.")) return Component::Normalization;
  throw Error("parameter '" + registry_name + "' belongs to no trainable component");
}

/// Differentiable output of one window.
struct ForwardResult {
  ag::Var pred_std;  // horizon x 3, forecast on the window's standardized scale
  std::vector<ag::Var> selected_scores;  // per task, 1 x m_prefix (empty when m_prefix = 0)
  std::array<ComponentForecast, kChannels> components;  // normalized-space components
  std::array<std::vector<Index>, kChannels> selected;
  NormStats stats;
};

class Forecaster {
 public:
  Forecaster(ModelConfig cfg, Backbone backbone) : cfg_(cfg), backbone_(std::move(backbone)) {
    cfg_.validate();
    if (cfg_.prompt_length() > backbone_.config().max_positions) {
      throw ContextLengthError(cfg_.prompt_length(), backbone_.config().max_positions);
    }
    Rng rng(cfg_.seed);
    gamma_ = make_parameter(Matrix::Ones(1, kChannels));
    beta_ = make_parameter(Matrix::Zero(1, kChannels));
    const Index d = backbone_.config().d_model;
    SharedProjection shared(3 * cfg_.patch_len, d, rng);
    if (cfg_.task_mode == TaskMode::Mtl) {
      projections_.push_back(shared);
    } else {
      // Single-task mode: independent copies with identical initial values.
      for (int c = 0; c < kChannels; ++c) projections_.push_back(shared.clone());
    }
    for (int c = 0; c < kChannels; ++c) {
      extractors_[static_cast<std::size_t>(c)] = PrototypeExtractor(cfg_.k_proto, backbone_.config().vocab_size, rng);
    }
    head_ = ReconstructionHead(cfg_.n_patches() * d, cfg_.horizon, rng);
    auto op = std::make_shared<DecompositionOperator>(cfg_.input_len, cfg_.period);
    trend_op_ = ag::constant(op->trend);
    seasonal_op_ = ag::constant(op->seasonal);
  }

  const ModelConfig& config() const { return cfg_; }
  const Backbone& backbone() const { return backbone_; }

  NormParams norm_params() const {
    NormParams p;
    p.gamma = gamma_.value().row(0);
    p.beta = beta_.value().row(0);
    p.epsilon = cfg_.norm_eps;
    return p;
  }

  const SharedProjection& projection(int task) const {
    return projections_[cfg_.task_mode == TaskMode::Mtl ? 0 : static_cast<std::size_t>(task)];
  }
  std::size_t projection_count() const { return projections_.size(); }
  const PrototypeExtractor& extractor(int task) const { return extractors_[static_cast<std::size_t>(task)]; }
  const ReconstructionHead& head() const { return head_; }

  /// Prototype tables of the three tasks. Computed once per optimizer step or evaluation pass.
  std::array<ag::Var, kChannels> prototypes() const {
    std::array<ag::Var, kChannels> out;
    for (int c = 0; c < kChannels; ++c) {
      out[static_cast<std::size_t>(c)] = extractors_[static_cast<std::size_t>(c)].forward(backbone_.token_embeddings());
    }
    return out;
  }

  ForwardResult forward(const Matrix& window, const std::array<ag::Var, kChannels>& protos) const {
    if (window.rows() != cfg_.input_len || window.cols() != kChannels) {
      throw ShapeError("forecaster expects a window of shape " + detail::shape_str(cfg_.input_len, kChannels) +
                       ", got " + detail::shape_str(window.rows(), window.cols()));
    }
    ForwardResult r;
    const ag::Var z = revin_forward(window, gamma_, beta_, cfg_.norm_eps, &r.stats);
    std::vector<ag::Var> preds;
    for (int c = 0; c < kChannels; ++c) {
      const ag::Var col = ag::slice_cols(z, c, 1);
      const ag::Var trend = ag::matmul(trend_op_, col);
      const ag::Var seasonal = ag::matmul(seasonal_op_, col);
      const ag::Var residual = ag::sub(ag::sub(col, trend), seasonal);
      const ag::Var meta = ag::concat_cols({ag::patchify(trend, cfg_.patch_len, cfg_.patch_stride),
                                            ag::patchify(seasonal, cfg_.patch_len, cfg_.patch_stride),
                                            ag::patchify(residual, cfg_.patch_len, cfg_.patch_stride)});
      const ag::Var body = projection(c).forward(meta);

      const SelectedPrefix sel = select_prefix(body, protos[static_cast<std::size_t>(c)], cfg_.m_prefix, cfg_.metric);
      r.selected[static_cast<std::size_t>(c)] = sel.indices;
      const ag::Var prompt = cfg_.m_prefix > 0 ? ag::concat_rows({sel.prefix, body}) : body;
      if (cfg_.m_prefix > 0) r.selected_scores.push_back(sel.selected_scores);

      const ag::Var hidden = backbone_.forward(prompt);
      const ag::Var y = head_.forward(strip_prefix(hidden, cfg_.m_prefix));
      const Index H = cfg_.horizon;
      r.components[static_cast<std::size_t>(c)] = split_components(y.value().row(0), H);
      const ag::Var yn = ag::add(ag::add(ag::slice_cols(y, 0, H), ag::slice_cols(y, H, H)), ag::slice_cols(y, 2 * H, H));
      preds.push_back(revin_inverse_affine(ag::transpose(yn), gamma_, beta_, c));
    }
    r.pred_std = ag::concat_cols(preds);
    return r;
  }

  ForwardResult forward(const Matrix& window) const { return forward(window, prototypes()); }

  /// Physical-unit forecast (horizon x 3).
  Matrix predict(const Matrix& window, const std::array<ag::Var, kChannels>& protos) const {
    ag::NoGradGuard guard;
    const ForwardResult r = forward(window, protos);
    return finalize(r.components, r.stats, norm_params());
  }

  Matrix predict(const Matrix& window) const {
    ag::NoGradGuard guard;
    return predict(window, prototypes());
  }

  /// Trainable registry in a stable order.
  ParameterList registry() const {
    ParameterList out;
    out.push_back({"revin.gamma", gamma_});
    out.push_back({"revin.beta", beta_});
    if (cfg_.task_mode == TaskMode::Mtl) {
      out.push_back({"projection.weight", projections_[0].weight});
      out.push_back({"projection.bias", projections_[0].bias});
    } else {
      for (int c = 0; c < kChannels; ++c) {
        const std::string p = std::string("projection.") + channel_name(c) + ".";
        out.push_back({p + "weight", projections_[static_cast<std::size_t>(c)].weight});
        out.push_back({p + "bias", projections_[static_cast<std::size_t>(c)].bias});
      }
    }
    for (int c = 0; c < kChannels; ++c) {
      out.push_back({std::string("extractor.") + channel_name(c) + ".weight", extractors_[static_cast<std::size_t>(c)].weight});
    }
    for (const auto& p : backbone_.trainable_parameters()) out.push_back({"backbone." + p.name, p.var});
    out.push_back({"head.weight", head_.weight});
    out.push_back({"head.bias", head_.bias});
    return out;
  }

  /// Backbone tensors excluded from training.
  ParameterList frozen_parameters() const {
    ParameterList out;
    for (const auto& p : backbone_.parameters()) {
      if (!backbone_param_trainable(p.name)) out.push_back({"backbone." + p.name, p.var});
    }
    return out;
  }

  /// Deep copy of every trainable value; frozen backbone tensors are shared.
  Forecaster clone() const {
    Forecaster f = *this;
    f.backbone_ = backbone_.clone();
    f.gamma_ = make_parameter(gamma_.value());
    f.beta_ = make_parameter(beta_.value());
    for (auto& p : f.projections_) p = p.clone();
    for (auto& e : f.extractors_) e = PrototypeExtractor(e.weight.value());
    f.head_ = ReconstructionHead(head_.weight.value(), head_.bias.value(), head_.horizon);
    return f;
  }

  std::map<std::string, Matrix> snapshot() const {
    std::map<std::string, Matrix> out;
    for (const auto& p : registry()) out[p.name] = p.var.value();
    return out;
  }

  void restore(const std::map<std::string, Matrix>& values) {
    for (auto& p : registry()) {
      auto it = values.find(p.name);
      if (it == values.end()) throw LoadError("checkpoint lacks parameter '" + p.name + "'");
      if (it->second.rows() != p.var.rows() || it->second.cols() != p.var.cols()) {
        throw ShapeError("checkpoint parameter '" + p.name + "' has shape " +
                         detail::shape_str(it->second.rows(), it->second.cols()) + ", model expects " +
                         detail::shape_str(p.var.rows(), p.var.cols()));
      }
      p.var.mutable_value() = it->second;
    }
  }

  void zero_grad() {
    for (auto& p : registry()) p.var.zero_grad();
  }

 private:
  ModelConfig cfg_;
  Backbone backbone_;
  ag::Var gamma_;
  ag::Var beta_;
  std::vector<SharedProjection> projections_;
  std::array<PrototypeExtractor, kChannels> extractors_;
  ReconstructionHead head_;
  ag::Var trend_op_;
  ag::Var seasonal_op_;
};

/// Builds the backbone a config describes: seeded toy weights or a pre-trained file.
inline Backbone make_backbone(const BackboneConfig& cfg) {
  if (cfg.variant == BackboneVariant::Toy) return Backbone::toy(cfg);
  if (cfg.weights_path.empty()) throw ConfigError("pretrained backbone requires a weights path");
  return Backbone::load_pretrained(cfg.weights_path, cfg);
}

struct CheckpointInfo {
  ModelConfig model;
  BackboneConfig backbone;
  std::map<std::string, std::string> metadata;
};

/// Writes every registry tensor plus configs and caller metadata (seed, run id).
inline void save_checkpoint(const std::filesystem::path& path, const Forecaster& model,
                            std::map<std::string, std::string> metadata = {}) {
  TensorFile f;
  for (const auto& p : model.registry()) f.put(p.name, p.var.value());
  f.metadata = std::move(metadata);
  f.metadata["model_config"] = to_json(model.config()).dump();
  f.metadata["backbone_config"] = to_json(model.backbone().config()).dump();
  f.metadata["kind"] = "checkpoint";
  write_tensor_file(path, f, Dtype::F64);
}

inline CheckpointInfo read_checkpoint_info(const TensorFile& f) {
  CheckpointInfo info;
  try {
    info.model = model_config_from_json(nlohmann::json::parse(f.metadata.at("model_config")));
    info.backbone = backbone_config_from_json(nlohmann::json::parse(f.metadata.at("backbone_config")));
  } catch (const std::exception& e) {
    throw LoadError(std::string("checkpoint metadata is incomplete: ") + e.what());
  }
  info.metadata = f.metadata;
  return info;
}

/// Rebuilds the model described by a checkpoint and restores its trained values.
inline Forecaster load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info_out = nullptr) {
  const TensorFile f = read_tensor_file(path);
  CheckpointInfo info = read_checkpoint_info(f);
  Forecaster model(info.model, make_backbone(info.backbone));
  std::map<std::string, Matrix> values;
  for (const auto& [name, entry] : f.tensors) values[name] = entry.data;
  model.restore(values);
  if (info_out) *info_out = std::move(info);
  return model;
}

}  // namespace tsllm
