#pragma once

// Decoder-only transformer backbone in the GPT-2 layout. Prompt vectors enter
// in place of token-embedding lookups. Only position embeddings and layer-norm
// affines are trainable; attention and feed-forward weights stay frozen.

#include "tsllm/autograd.hpp"
#include "tsllm/core.hpp"
#include "tsllm/nn.hpp"
#include "tsllm/prompt_embedding.hpp"
#include "tsllm/tensor_file.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <regex>
#include <string>
#include <utility>
#include <vector>

namespace tsllm {

enum class BackboneVariant { Toy, Pretrained };

struct BackboneConfig {
  Index d_model = 64;
  Index n_layers = 2;
  Index n_heads = 4;
  Index vocab_size = 256;
  Index max_positions = 128;
  Index layers_used = 0;  // 0 = full stack
  Scalar ln_eps = 1e-5;
  BackboneVariant variant = BackboneVariant::Toy;
  std::string weights_path;
  std::uint64_t seed = 0;

  static BackboneConfig toy() { return {}; }

  static BackboneConfig gpt2_small() {
    BackboneConfig c;
    c.d_model = 768;
    c.n_layers = 12;
    c.n_heads = 12;
    c.vocab_size = 50257;
    c.max_positions = 1024;
    c.variant = BackboneVariant::Pretrained;
    return c;
  }

  Index active_layers() const { return layers_used > 0 ? std::min(layers_used, n_layers) : n_layers; }

  void validate() const {
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || vocab_size <= 0 || max_positions <= 0) {
      throw ConfigError("backbone dimensions must be positive");
    }
    if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  }
};

struct BackboneOutput {
  Matrix hidden;  // L x d'
  Index length() const { return hidden.rows(); }
};

/// Backbone parameters that may train: position embeddings and every layer-norm affine.
inline bool backbone_param_trainable(const std::string& name) {
  return name == "wpe.weight" || name.find("ln_") != std::string::npos;
}

struct FreezePolicy {
  std::vector<std::string> trainable;
  std::vector<std::string> frozen;
};

using ShapeList = std::vector<std::pair<std::string, std::pair<Index, Index>>>;

class Backbone {
 public:
  /// Names and (rows, cols) of every backbone tensor, in canonical order. 1-D tensors are (1, n).
  static ShapeList parameter_shapes(const BackboneConfig& cfg) {
    const Index d = cfg.d_model;
    ShapeList s;
    s.push_back({"wte.weight", {cfg.vocab_size, d}});
    s.push_back({"wpe.weight", {cfg.max_positions, d}});
    for (Index i = 0; i < cfg.n_layers; ++i) {
      const std::string p = "h." + std::to_string(i) + ".";
      s.push_back({p + "ln_1.weight", {1, d}});
      s.push_back({p + "ln_1.bias", {1, d}});
      s.push_back({p + "attn.c_attn.weight", {d, 3 * d}});
      s.push_back({p + "attn.c_attn.bias", {1, 3 * d}});
      s.push_back({p + "attn.c_proj.weight", {d, d}});
      s.push_back({p + "attn.c_proj.bias", {1, d}});
      s.push_back({p + "ln_2.weight", {1, d}});
      s.push_back({p + "ln_2.bias", {1, d}});
      s.push_back({p + "mlp.c_fc.weight", {d, 4 * d}});
      s.push_back({p + "mlp.c_fc.bias", {1, 4 * d}});
      s.push_back({p + "mlp.c_proj.weight", {4 * d, d}});
      s.push_back({p + "mlp.c_proj.bias", {1, d}});
    }
    s.push_back({"ln_f.weight", {1, d}});
    s.push_back({"ln_f.bias", {1, d}});
    return s;
  }

  /// Randomly initialized backbone, N(0, 0.02) weights and unit layer norms.
  static Backbone toy(const BackboneConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    std::map<std::string, Matrix> values;
    for (const auto& [name, shape] : parameter_shapes(cfg)) {
      const auto [r, c] = shape;
      if (name.find("ln_") != std::string::npos) {
        values[name] = name.ends_with(".weight") ? Matrix::Ones(r, c) : Matrix::Zero(r, c);
      } else if (name.ends_with(".bias")) {
        values[name] = Matrix::Zero(r, c);
      } else {
        values[name] = init_normal(r, c, 0.02, rng);
      }
    }
    return Backbone(cfg, std::move(values));
  }

  /// Builds from named tensors; extra tensors are ignored, missing or misshapen ones are errors.
  static Backbone from_tensors(const TensorFile& file, BackboneConfig cfg) {
    std::map<std::string, const TensorEntry*> by_name;
    for (const auto& [name, entry] : file.tensors) {
      std::string n = name;
      if (n.starts_with("transformer.")) n = n.substr(12);
      by_name[n] = &entry;
    }
    auto find = [&](const std::string& n) -> const TensorEntry& {
      auto it = by_name.find(n);
      if (it == by_name.end()) throw LoadError("backbone weights lack tensor '" + n + "'");
      return *it->second;
    };
    // Architecture comes from the file; the config may pin it.
    const auto& wte = find("wte.weight");
    const auto& wpe = find("wpe.weight");
    Index layers = 0;
    const std::regex layer_re(R"(h\.(\d+)\.ln_1\.weight)");
    for (const auto& [n, _] : by_name) {
      std::smatch m;
      if (std::regex_match(n, m, layer_re)) layers = std::max<Index>(layers, std::stoll(m[1]) + 1);
    }
    auto check = [](const char* field, Index want, Index got) {
      if (want > 0 && want != got) {
        throw ShapeError(std::string("backbone ") + field + " mismatch: config " + std::to_string(want) + ", weights " +
                         std::to_string(got));
      }
    };
    check("d_model", cfg.d_model, wte.data.cols());
    check("vocab_size", cfg.vocab_size, wte.data.rows());
    check("max_positions", cfg.max_positions, wpe.data.rows());
    check("n_layers", cfg.n_layers, layers);
    cfg.d_model = wte.data.cols();
    cfg.vocab_size = wte.data.rows();
    cfg.max_positions = wpe.data.rows();
    cfg.n_layers = layers;
    cfg.validate();

    std::map<std::string, Matrix> values;
    for (const auto& [name, shape] : parameter_shapes(cfg)) {
      const auto& e = find(name);
      const auto [r, c] = shape;
      if (e.data.size() != r * c) {
        throw ShapeError("tensor '" + name + "' has " + std::to_string(e.data.size()) + " values, expected " +
                         detail::shape_str(r, c));
      }
      values[name] = Eigen::Map<const Matrix>(e.data.data(), r, c);
    }
    return Backbone(cfg, std::move(values));
  }

  /// Loads weights in the safetensors layout (optionally "transformer."-prefixed names).
  static Backbone load_pretrained(const std::filesystem::path& path, BackboneConfig cfg) {
    const TensorFile file = read_tensor_file(path);
    cfg.variant = BackboneVariant::Pretrained;
    cfg.weights_path = path.string();
    return from_tensors(file, cfg);
  }

  const BackboneConfig& config() const { return cfg_; }

  /// Fresh copies of the trainable tensors; frozen tensors stay shared (they are never written).
  Backbone clone() const {
    Backbone b = *this;
    for (auto& [name, var] : b.params_) {
      if (backbone_param_trainable(name)) var = make_parameter(var.value(), true);
    }
    return b;
  }

  /// Frozen token-embedding table (V x d').
  const ag::Var& token_embeddings() const { return param("wte.weight"); }

  /// Runs the first `active_layers()` blocks and the final layer norm.
  ag::Var forward(const ag::Var& prompt) const {
    const Index L = prompt.rows();
    if (prompt.cols() != cfg_.d_model) {
      throw ShapeError("backbone expects width " + std::to_string(cfg_.d_model) + ", got " + std::to_string(prompt.cols()));
    }
    if (L > cfg_.max_positions) throw ContextLengthError(L, cfg_.max_positions);
    ag::Var h = ag::add(prompt, ag::slice_rows(param("wpe.weight"), 0, L));
    for (Index i = 0; i < cfg_.active_layers(); ++i) h = block(h, i);
    return ag::layer_norm(h, param("ln_f.weight"), param("ln_f.bias"), cfg_.ln_eps);
  }

  BackboneOutput forward(const PromptSequence& prompt) const {
    ag::NoGradGuard guard;
    return {forward(ag::constant(prompt.tokens)).value()};
  }

  /// Every tensor in canonical order.
  ParameterList parameters() const {
    ParameterList out;
    for (const auto& [name, _] : parameter_shapes(cfg_)) out.push_back({name, param(name)});
    return out;
  }

  ParameterList trainable_parameters() const {
    ParameterList out;
    for (const auto& p : parameters()) {
      if (backbone_param_trainable(p.name)) out.push_back(p);
    }
    return out;
  }

  FreezePolicy freeze_policy() const {
    FreezePolicy f;
    for (const auto& p : parameters()) (backbone_param_trainable(p.name) ? f.trainable : f.frozen).push_back(p.name);
    return f;
  }

  TensorFile to_tensor_file() const {
    TensorFile f;
    for (const auto& p : parameters()) f.put(p.name, p.var.value());
    return f;
  }

  const ag::Var& param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("backbone has no parameter '" + name + "'");
    return it->second;
  }

 private:
  Backbone() = default;
  Backbone(BackboneConfig cfg, std::map<std::string, Matrix> values) : cfg_(std::move(cfg)) {
    for (auto& [name, v] : values) params_.emplace(name, make_parameter(std::move(v), backbone_param_trainable(name)));
  }

  ag::Var block(const ag::Var& x, Index layer) const {
    const std::string p = "h." + std::to_string(layer) + ".";
    const Index d = cfg_.d_model;
    const Index heads = cfg_.n_heads;
    const Index dh = d / heads;

    ag::Var a = ag::layer_norm(x, param(p + "ln_1.weight"), param(p + "ln_1.bias"), cfg_.ln_eps);
    ag::Var qkv = ag::add_row(ag::matmul(a, param(p + "attn.c_attn.weight")), param(p + "attn.c_attn.bias"));
    std::vector<ag::Var> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    const Scalar inv = 1.0 / std::sqrt(static_cast<Scalar>(dh));
    for (Index h = 0; h < heads; ++h) {
      ag::Var q = ag::slice_cols(qkv, h * dh, dh);
      ag::Var k = ag::slice_cols(qkv, d + h * dh, dh);
      ag::Var v = ag::slice_cols(qkv, 2 * d + h * dh, dh);
      ag::Var att = ag::causal_softmax(ag::scale(ag::matmul_nt(q, k), inv));
      outs.push_back(ag::matmul(att, v));
    }
    ag::Var attn = ag::add_row(ag::matmul(ag::concat_cols(outs), param(p + "attn.c_proj.weight")),
                               param(p + "attn.c_proj.bias"));
    ag::Var h1 = ag::add(x, attn);

    ag::Var m = ag::layer_norm(h1, param(p + "ln_2.weight"), param(p + "ln_2.bias"), cfg_.ln_eps);
    m = ag::gelu(ag::add_row(ag::matmul(m, param(p + "mlp.c_fc.weight")), param(p + "mlp.c_fc.bias")));
    m = ag::add_row(ag::matmul(m, param(p + "mlp.c_proj.weight")), param(p + "mlp.c_proj.bias"));
    return ag::add(h1, m);
  }

  BackboneConfig cfg_;
  std::map<std::string, ag::Var> params_;
};

}  // namespace tsllm
