#pragma once

// Run configuration in a flat `key = value` text format. Every key has a
// documented default; unknown keys are rejected.

#include "tsllm/backbone.hpp"
#include "tsllm/core.hpp"
#include "tsllm/data_ingest.hpp"
#include "tsllm/evaluation.hpp"
#include "tsllm/model.hpp"
#include "tsllm/training.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace tsllm {

/// Parses "CODE=channel,..." where channel is sp, hp or ap.
inline ChannelMap parse_channel_map(const std::string& text) {
  ChannelMap out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("channel_map entry '" + item + "' is not CODE=channel");
    const std::string code(detail::trim(std::string_view(item).substr(0, eq)));
    const std::string ch(detail::trim(std::string_view(item).substr(eq + 1)));
    if (ch == "sp") out[code] = Channel::Solar;
    else if (ch == "hp") out[code] = Channel::HighPower;
    else if (ch == "ap") out[code] = Channel::Appliance;
    else throw ConfigError("channel_map: unknown channel '" + ch + "'");
  }
  for (int c = 0; c < kChannels; ++c) {
    const bool covered = std::any_of(out.begin(), out.end(), [c](const auto& kv) { return static_cast<int>(kv.second) == c; });
    if (!covered) throw ConfigError(std::string("channel_map does not cover ") + channel_name(c));
  }
  return out;
}

struct RunConfig {
  // data
  std::string data_path = "data/load.csv";
  std::string output_root = "runs";
  std::string run_id = "default";
  std::string channel_map = "GG=sp,CL=hp,GC=ap";  // CSV category code -> channel
  int households = 20;
  int primary_household = 0;  // 0 = lowest selected id
  SplitSpec split;
  Index window_stride = 96;
  MetricScale scale = MetricScale::Normalized;
  // model, backbone, optimization
  ModelConfig model = ModelConfig::toy();
  BackboneConfig backbone = BackboneConfig::toy();
  TrainConfig train;
  std::vector<Scalar> lambda_grid = {0.0, 0.01, 0.05, 0.1, 1.0};
  std::uint64_t seed = 0;

  /// Propagates the run seed into every seeded component.
  void apply_seed() {
    model.seed = seed;
    backbone.seed = seed;
    train.seed = seed;
  }

  void validate() const {
    if (households < 1) throw ConfigError("households must be at least 1");
    if (window_stride < 1) throw ConfigError("window_stride must be positive");
    split.validate();
    (void)parse_channel_map(channel_map);
    model.validate();
    backbone.validate();
    train.validate();
    if (model.m_prefix == 0 && train.lambda > 0) throw ConfigError("lambda > 0 requires m_prefix > 0");
    for (Scalar l : lambda_grid) {
      if (!(l >= 0)) throw ConfigError("lambda_grid values must be non-negative");
    }
  }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("invalid value '" + v + "' for " + key);
  return out;
}

/// Shortest text that parses back to the same double.
inline std::string fmt(Scalar v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

struct Field {
  const char* key;
  const char* doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class T>
Field int_field(const char* key, const char* doc, T RunConfig::*outer) {
  return {key, doc, [outer](const RunConfig& c) { return std::to_string(c.*outer); },
          [outer, key](RunConfig& c, const std::string& v) { c.*outer = parse_number<T>(key, v); }};
}

template <class S, class T>
Field nested_int(const char* key, const char* doc, S RunConfig::*outer, T S::*inner) {
  return {key, doc, [=](const RunConfig& c) { return std::to_string(c.*outer.*inner); },
          [=](RunConfig& c, const std::string& v) { c.*outer.*inner = parse_number<T>(key, v); }};
}

template <class S>
Field nested_real(const char* key, const char* doc, S RunConfig::*outer, Scalar S::*inner) {
  return {key, doc, [=](const RunConfig& c) { return fmt(c.*outer.*inner); },
          [=](RunConfig& c, const std::string& v) { c.*outer.*inner = parse_number<Scalar>(key, v); }};
}

inline Field string_field(const char* key, const char* doc, std::string RunConfig::*m) {
  return {key, doc, [=](const RunConfig& c) { return c.*m; }, [=](RunConfig& c, const std::string& v) { c.*m = v; }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      string_field("data_path", "wide-format load CSV", &RunConfig::data_path),
      string_field("output_root", "root of run directories (env TSLLM_OUTPUT_ROOT overrides)", &RunConfig::output_root),
      string_field("run_id", "run directory name under output_root", &RunConfig::run_id),
      string_field("channel_map", "category code to channel (sp, hp, ap)", &RunConfig::channel_map),
      int_field("seed", "seed for household selection, initialization and shuffling", &RunConfig::seed),
      int_field("households", "number of households selected", &RunConfig::households),
      int_field("primary_household", "training household id; 0 = lowest selected id", &RunConfig::primary_household),
      nested_real("split_train", "train fraction", &RunConfig::split, &SplitSpec::train),
      nested_real("split_val", "validation fraction", &RunConfig::split, &SplitSpec::val),
      nested_real("split_test", "test fraction", &RunConfig::split, &SplitSpec::test),
      int_field("window_stride", "steps between consecutive windows", &RunConfig::window_stride),
      {"scale", "metric scale: normalized | physical", [](const RunConfig& c) { return to_string(c.scale); },
       [](RunConfig& c, const std::string& v) { c.scale = parse_scale(v); }},
      nested_int("input_len", "input window length", &RunConfig::model, &ModelConfig::input_len),
      nested_int("horizon", "forecast horizon", &RunConfig::model, &ModelConfig::horizon),
      nested_int("period", "seasonal period in steps", &RunConfig::model, &ModelConfig::period),
      nested_int("patch_len", "patch length", &RunConfig::model, &ModelConfig::patch_len),
      nested_int("patch_stride", "patch stride", &RunConfig::model, &ModelConfig::patch_stride),
      nested_int("k_proto", "prototypes per task", &RunConfig::model, &ModelConfig::k_proto),
      nested_int("m_prefix", "selected prototypes prepended to the prompt", &RunConfig::model, &ModelConfig::m_prefix),
      {"metric", "similarity metric: cosine | euclidean", [](const RunConfig& c) { return to_string(c.model.metric); },
       [](RunConfig& c, const std::string& v) { c.model.metric = parse_metric(v); }},
      {"task_mode", "input projection: mtl (shared) | single (per channel)",
       [](const RunConfig& c) { return to_string(c.model.task_mode); },
       [](RunConfig& c, const std::string& v) { c.model.task_mode = parse_task_mode(v); }},
      nested_real("norm_eps", "normalization epsilon", &RunConfig::model, &ModelConfig::norm_eps),
      {"backbone", "toy | pretrained",
       [](const RunConfig& c) { return std::string(c.backbone.variant == BackboneVariant::Toy ? "toy" : "pretrained"); },
       [](RunConfig& c, const std::string& v) {
         if (v == "toy") c.backbone.variant = BackboneVariant::Toy;
         else if (v == "pretrained") c.backbone.variant = BackboneVariant::Pretrained;
         else throw ConfigError("backbone must be toy or pretrained, got '" + v + "'");
       }},
      {"weights_path", "pre-trained backbone tensor file", [](const RunConfig& c) { return c.backbone.weights_path; },
       [](RunConfig& c, const std::string& v) { c.backbone.weights_path = v; }},
      nested_int("d_model", "backbone width", &RunConfig::backbone, &BackboneConfig::d_model),
      nested_int("n_layers", "backbone depth", &RunConfig::backbone, &BackboneConfig::n_layers),
      nested_int("n_heads", "attention heads", &RunConfig::backbone, &BackboneConfig::n_heads),
      nested_int("vocab_size", "token vocabulary size", &RunConfig::backbone, &BackboneConfig::vocab_size),
      nested_int("max_positions", "positional table size", &RunConfig::backbone, &BackboneConfig::max_positions),
      nested_int("layers_used", "blocks run; 0 = all", &RunConfig::backbone, &BackboneConfig::layers_used),
      nested_real("lambda", "alignment loss weight", &RunConfig::train, &TrainConfig::lambda),
      nested_real("lr", "Adam learning rate", &RunConfig::train, &TrainConfig::lr),
      nested_int("max_epochs", "epoch cap", &RunConfig::train, &TrainConfig::max_epochs),
      nested_int("batch_size", "windows per optimizer step", &RunConfig::train, &TrainConfig::batch_size),
      nested_int("patience", "epochs without validation improvement before stopping", &RunConfig::train,
                 &TrainConfig::patience),
      {"lambda_grid", "comma-separated lambda values for the sensitivity sweep",
       [](const RunConfig& c) {
         std::string s;
         for (std::size_t i = 0; i < c.lambda_grid.size(); ++i) s += (i ? "," : "") + fmt(c.lambda_grid[i]);
         return s;
       },
       [](RunConfig& c, const std::string& v) {
         c.lambda_grid.clear();
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ',')) c.lambda_grid.push_back(parse_number<Scalar>("lambda_grid", std::string(trim(item))));
         if (c.lambda_grid.empty()) throw ConfigError("lambda_grid is empty");
       }},
  };
  return f;
}

}  // namespace detail

/// Applies one `key=value` assignment.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& f : detail::fields()) {
    if (key == f.key) {
      f.set(c, value);
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

inline RunConfig parse_run_config(std::istream& in, RunConfig base = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(base, std::string(detail::trim(t.substr(0, eq))), std::string(detail::trim(t.substr(eq + 1))));
  }
  return base;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_run_config(in);
}

/// Full listing with one comment line per key; parses back to an equal config.
inline std::string to_text(const RunConfig& c) {
  std::ostringstream os;
  for (const auto& f : detail::fields()) os << "# " << f.doc << '\n' << f.key << " = " << f.get(c) << '\n';
  return os.str();
}

inline std::map<std::string, std::string> to_map(const RunConfig& c) {
  std::map<std::string, std::string> m;
  for (const auto& f : detail::fields()) m[f.key] = f.get(c);
  return m;
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : to_map(c)) j[k] = v;
  return j;
}

/// Output root, with the environment override applied.
inline std::filesystem::path output_root(const RunConfig& c) {
  if (const char* env = std::getenv("TSLLM_OUTPUT_ROOT"); env && *env) return env;
  return c.output_root;
}

inline std::filesystem::path run_dir(const RunConfig& c) { return output_root(c) / c.run_id; }

}  // namespace tsllm
