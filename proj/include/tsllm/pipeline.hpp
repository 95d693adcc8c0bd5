#pragma once

// Command implementations behind the CLI. Each command reads and writes a
// self-describing run directory:
//
//   <output_root>/<run_id>/
//     config.txt  run_info.json  manifest.json
//     windows/{train,val,test}.windows  windows/transfer_<id>.windows
//     model.ckpt  curve.csv  train_report.json
//     eval.json  transfer_report.json
//     sensitivity.{csv,json,svg}  ablation.{csv,json}  plots/

#include "tsllm/config.hpp"
#include "tsllm/core.hpp"
#include "tsllm/data_ingest.hpp"
#include "tsllm/evaluation.hpp"
#include "tsllm/experiments.hpp"
#include "tsllm/model.hpp"
#include "tsllm/plots.hpp"
#include "tsllm/tensor_file.hpp"
#include "tsllm/training.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace tsllm {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitData = 2, kExitRuntime = 3 };

/// Maps an exception to the process exit code: 1 config, 2 data, 3 runtime.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ContextLengthError*>(&e)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const LoadError*>(&e)) return kExitData;
  return kExitRuntime;
}

struct RunPaths {
  std::filesystem::path root;
  explicit RunPaths(const RunConfig& c) : root(run_dir(c)) {}

  std::filesystem::path config() const { return root / "config.txt"; }
  std::filesystem::path run_info() const { return root / "run_info.json"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path windows(const std::string& split) const { return root / "windows" / (split + ".windows"); }
  std::filesystem::path transfer_windows(int id) const { return windows("transfer_" + std::to_string(id)); }
  std::filesystem::path checkpoint() const { return root / "model.ckpt"; }
  std::filesystem::path curve() const { return root / "curve.csv"; }
  std::filesystem::path train_report() const { return root / "train_report.json"; }
  std::filesystem::path eval_report() const { return root / "eval.json"; }
  std::filesystem::path transfer_report() const { return root / "transfer_report.json"; }
  std::filesystem::path forecast() const { return root / "forecast.csv"; }
  std::filesystem::path plots() const { return root / "plots"; }
};

inline std::string iso_time(Instant t) {
  const auto day = std::chrono::floor<std::chrono::days>(t);
  const std::chrono::year_month_day ymd{day};
  const std::chrono::hh_mm_ss hms{t - day};
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ld", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<long>(hms.hours().count()),
                static_cast<long>(hms.minutes().count()), static_cast<long>(hms.seconds().count()));
  return buf;
}

/// Short hex identifier derived from the config text and seed.
inline std::string run_uid(const RunConfig& c) {
  const std::string text = to_text(c);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a(text.data(), text.size())));
  return std::string(buf).substr(0, 12);
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

/// Writes config.txt and run_info.json so the directory describes itself.
inline void write_run_description(const RunConfig& c, const std::string& command) {
  const RunPaths paths(c);
  write_text(paths.config(), to_text(c));
  nlohmann::json info = std::filesystem::exists(paths.run_info()) ? read_json(paths.run_info()) : nlohmann::json::object();
  info["version"] = kVersion;
  info["seed"] = c.seed;
  info["run_uid"] = run_uid(c);
  info["commands"].push_back(command);
  write_json(paths.run_info(), info);
}

inline Forecaster build_model(const RunConfig& c) {
  RunConfig s = c;
  s.apply_seed();
  return Forecaster(s.model, make_backbone(s.backbone));
}

inline ModelFactory model_factory(const RunConfig& c) {
  RunConfig s = c;
  s.apply_seed();
  const BackboneConfig bc = s.backbone;
  return [bc](const ModelConfig& mc) { return Forecaster(mc, make_backbone(bc)); };
}

/// Seeded choice of `count` ids, returned sorted.
inline std::vector<int> select_households(std::vector<int> ids, int count, std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  if (static_cast<int>(ids.size()) <= count) return ids;
  Rng rng(seed);
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng() % i]);
  ids.resize(static_cast<std::size_t>(count));
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// Index of an exact timestamp, if present.
inline std::optional<std::size_t> find_time(const HouseholdSeries& s, Instant t) {
  auto it = std::lower_bound(s.timestamps.begin(), s.timestamps.end(), t);
  if (it == s.timestamps.end() || *it != t) return std::nullopt;
  return static_cast<std::size_t>(it - s.timestamps.begin());
}

struct PrepareResult {
  nlohmann::json manifest;
  std::size_t train_windows = 0;
  std::map<int, std::size_t> transfer_windows;
};

/// Parses the raw CSV, selects households, splits the primary household 7:1:2
/// and cuts every other household to the calendar range of the primary test segment.
inline PrepareResult cmd_prepare(RunConfig c) {
  c.apply_seed();
  c.validate();
  const RunPaths paths(c);
  if (!std::filesystem::exists(c.data_path)) throw DataError("data file not found: " + c.data_path);
  const ParseResult parsed = parse_load_csv(std::filesystem::path(c.data_path), parse_channel_map(c.channel_map));

  std::map<int, const HouseholdSeries*> by_id;
  for (const auto& h : parsed.households) by_id[h.household_id] = &h;
  std::vector<int> available;
  for (const auto& [id, _] : by_id) available.push_back(id);
  if (available.empty()) throw DataError(c.data_path + ": no complete household");

  std::vector<int> selected = select_households(available, c.households, c.seed);
  int primary = c.primary_household;
  if (primary == 0) {
    primary = selected.front();
  } else if (!by_id.count(primary)) {
    throw DataError("primary household " + std::to_string(primary) + " is not in " + c.data_path);
  } else if (std::find(selected.begin(), selected.end(), primary) == selected.end()) {
    selected.back() = primary;
    std::sort(selected.begin(), selected.end());
  }

  nlohmann::json excluded = nlohmann::json::object();
  for (int id : parsed.incomplete) excluded[std::to_string(id)] = "lacks a mapped consumption category";

  const HouseholdSeries prim = interpolate_missing(*by_id.at(primary));
  const auto in_len = static_cast<std::size_t>(c.model.input_len);
  const auto hz = static_cast<std::size_t>(c.model.horizon);
  const auto stride = static_cast<std::size_t>(c.window_stride);
  const SeriesSplit split = split_series(prim, c.split, in_len + hz);
  const auto tr = make_windows(split.train, in_len, hz, stride);
  const auto va = make_windows(split.val, in_len, hz, stride);
  const auto te = make_windows(split.test, in_len, hz, stride);
  const std::map<std::string, std::string> meta = {{"run_uid", run_uid(c)}, {"seed", std::to_string(c.seed)}};
  save_windows(paths.windows("train"), tr, meta);
  save_windows(paths.windows("val"), va, meta);
  save_windows(paths.windows("test"), te, meta);

  PrepareResult result;
  result.train_windows = tr.size();
  const Instant seg_begin = split.test.timestamps.front();
  const Instant seg_end = split.test.timestamps.back();
  nlohmann::json transfer = nlohmann::json::object();
  for (int id : selected) {
    if (id == primary) continue;
    HouseholdSeries s;
    try {
      s = interpolate_missing(*by_id.at(id));
    } catch (const DataError& e) {
      excluded[std::to_string(id)] = std::string("interpolation failed: ") + e.what();
      continue;
    }
    const auto b = find_time(s, seg_begin);
    const auto e = find_time(s, seg_end);
    if (!b || !e) {
      excluded[std::to_string(id)] = "does not cover the primary test segment " + iso_time(seg_begin) + " .. " + iso_time(seg_end);
      continue;
    }
    const auto w = make_windows(s.slice(*b, *e - *b + 1), in_len, hz, stride);
    if (w.empty()) {
      excluded[std::to_string(id)] = "segment shorter than one window";
      continue;
    }
    save_windows(paths.transfer_windows(id), w, meta);
    transfer[std::to_string(id)] = w.size();
    result.transfer_windows[id] = w.size();
  }

  auto seg = [](const HouseholdSeries& s, std::size_t offset) {
    return nlohmann::json{{"begin_index", offset},
                          {"end_index", offset + s.size()},
                          {"begin", iso_time(s.timestamps.front())},
                          {"end", iso_time(s.timestamps.back())}};
  };
  nlohmann::json m;
  m["source"] = c.data_path;
  m["seed"] = c.seed;
  m["run_uid"] = run_uid(c);
  m["households_available"] = available.size();
  m["households"] = selected;
  m["primary_household"] = primary;
  m["split"] = {{"train", seg(split.train, 0)},
                {"val", seg(split.val, split.train.size())},
                {"test", seg(split.test, split.train.size() + split.val.size())}};
  m["windows"] = {{"train", tr.size()}, {"val", va.size()}, {"test", te.size()}};
  m["transfer"] = transfer;
  m["excluded"] = excluded;
  m["warnings"] = parsed.warnings;
  write_json(paths.manifest(), m);
  write_run_description(c, "prepare");
  result.manifest = m;
  return result;
}

inline ExperimentData load_experiment_data(const RunConfig& c) {
  const RunPaths paths(c);
  if (!std::filesystem::exists(paths.manifest())) {
    throw ConfigError("no prepared dataset in " + paths.root.string() + " (run prepare first)");
  }
  const nlohmann::json m = read_json(paths.manifest());
  ExperimentData d;
  d.train = load_windows(paths.windows("train"));
  d.val = load_windows(paths.windows("val"));
  d.test = load_windows(paths.windows("test"));
  d.primary_household = m.at("primary_household");
  for (auto it = m.at("transfer").begin(); it != m.at("transfer").end(); ++it) {
    const int id = std::stoi(it.key());
    d.transfer[id] = load_windows(paths.transfer_windows(id));
  }
  return d;
}

inline TrainResult cmd_train(RunConfig c, const EpochObserver& observer = {}) {
  c.apply_seed();
  c.validate();
  const RunPaths paths(c);
  const ExperimentData data = load_experiment_data(c);
  Forecaster model = build_model(c);
  const TrainResult r = train(model, data.train, data.val, c.train, observer);

  save_checkpoint(paths.checkpoint(), model,
                  {{"seed", std::to_string(c.seed)}, {"run_uid", run_uid(c)}, {"run_id", c.run_id},
                   {"best_epoch", std::to_string(r.best_epoch)}});
  CsvTable curve{{"epoch", "train_loss", "val_loss", "pred_loss", "align_loss"}, {}};
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.curve) {
    curve.rows.push_back({std::to_string(row.epoch), csv_number(row.train_loss), csv_number(row.val_loss),
                          csv_number(row.pred_loss), csv_number(row.align_loss)});
    rows.push_back({{"epoch", row.epoch}, {"train_loss", row.train_loss}, {"val_loss", row.val_loss},
                    {"pred_loss", row.pred_loss}, {"align_loss", row.align_loss}});
  }
  write_text(paths.curve(), to_csv(curve));
  nlohmann::json params = nlohmann::json::object();
  for (const auto& p : model.registry()) {
    params[component_name(component_of(p.name))] =
        params.value(component_name(component_of(p.name)), 0) + p.var.value().size();
  }
  write_json(paths.train_report(), {{"curve", rows},
                                    {"best_epoch", r.best_epoch},
                                    {"best_val_loss", r.best_val_loss},
                                    {"steps", r.steps},
                                    {"early_stopped", r.early_stopped},
                                    {"trainable_parameters", params}});
  write_run_description(c, "train");
  return r;
}

inline std::filesystem::path resolve_checkpoint(const RunConfig& c, const std::filesystem::path& checkpoint) {
  const std::filesystem::path p = checkpoint.empty() ? RunPaths(c).checkpoint() : checkpoint;
  if (!std::filesystem::exists(p)) throw ConfigError("checkpoint not found: " + p.string());
  return p;
}

/// Conventional test metrics of the primary household.
inline HouseholdMetrics cmd_eval(RunConfig c, const std::filesystem::path& checkpoint = {}) {
  c.apply_seed();
  const auto ckpt = resolve_checkpoint(c, checkpoint);
  const RunPaths paths(c);
  const Forecaster model = load_checkpoint(ckpt);
  const auto test = load_windows(paths.windows("test"));
  const HouseholdMetrics m = evaluate_conventional(forecaster_predictor(model), test, c.scale, model.config().norm_eps);
  const nlohmann::json manifest = read_json(paths.manifest());
  write_json(paths.eval_report(), {{"household_id", manifest.at("primary_household")},
                                   {"mse", m.mse},
                                   {"mae", m.mae},
                                   {"windows", m.windows},
                                   {"scale", to_string(c.scale)},
                                   {"checkpoint", ckpt.string()}});
  write_run_description(c, "eval");
  return m;
}

/// Physical-unit forecasts of every test window, stacked in one CSV. The
/// sidecar lists which rows belong to which window.
inline std::filesystem::path cmd_forecast(RunConfig c, const std::filesystem::path& checkpoint = {}) {
  c.apply_seed();
  const auto ckpt = resolve_checkpoint(c, checkpoint);
  const RunPaths paths(c);
  const Forecaster model = load_checkpoint(ckpt);
  const auto test = load_windows(paths.windows("test"));
  const auto protos = model.prototypes();
  const Index H = model.config().horizon;
  Matrix all(static_cast<Index>(test.size()) * H, kChannels);
  std::vector<Instant> stamps;
  nlohmann::json windows = nlohmann::json::array();
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& w = test[i];
    all.middleRows(static_cast<Index>(i) * H, H) = model.predict(w.input, protos);
    const Instant first = w.t0 + kStep * static_cast<int>(w.input.rows());
    for (Index k = 0; k < H; ++k) stamps.push_back(first + kStep * static_cast<int>(k));
    windows.push_back({{"household_id", w.household_id},
                       {"input_start", iso_time(w.t0)},
                       {"forecast_start", iso_time(first)},
                       {"first_row", static_cast<Index>(i) * H},
                       {"rows", H}});
  }
  export_forecast(paths.forecast(), all, stamps,
                  {{"checkpoint", ckpt.string()}, {"horizon", H}, {"units", "kW"}, {"windows", windows}});
  write_run_description(c, "forecast");
  return paths.forecast();
}

/// Zero-shot evaluation on every prepared transfer household, with the primary
/// household's conventional metrics attached as the second sum variant.
inline EvalReport cmd_transfer(RunConfig c, const std::filesystem::path& checkpoint = {}) {
  c.apply_seed();
  const auto ckpt = resolve_checkpoint(c, checkpoint);
  const RunPaths paths(c);
  const Forecaster model = load_checkpoint(ckpt);
  const ExperimentData data = load_experiment_data(c);
  const Predictor p = forecaster_predictor(model);
  EvalReport r = zero_shot_transfer(p, data.transfer, c.scale, model.config().norm_eps);
  r.primary_household = data.primary_household;
  r.primary = evaluate_conventional(p, data.test, c.scale, model.config().norm_eps);
  const nlohmann::json manifest = read_json(paths.manifest());
  for (auto it = manifest.at("excluded").begin(); it != manifest.at("excluded").end(); ++it) {
    r.excluded[std::stoi(it.key())] = it.value();
  }
  r.config = to_json(c);
  r.config["checkpoint"] = ckpt.string();
  write_json(paths.transfer_report(), to_json(r));
  write_run_description(c, "transfer");
  return r;
}

inline std::vector<SensitivityRow> cmd_sensitivity(RunConfig c) {
  c.apply_seed();
  c.validate();
  const RunPaths paths(c);
  const ExperimentData data = load_experiment_data(c);
  const auto rows = sensitivity_sweep(model_factory(c), c.model, c.train, data, c.lambda_grid, c.scale);
  emit_table_plot(sensitivity_table(rows), paths.root / "sensitivity.csv", paths.root / "sensitivity.svg");
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) j.push_back({{"lambda", r.lambda}, {"sum_mse", r.sum_mse}, {"sum_mae", r.sum_mae}});
  write_json(paths.root / "sensitivity.json", {{"rows", j}, {"scale", to_string(c.scale)}, {"config", to_json(c)}});
  write_run_description(c, "sensitivity");
  return rows;
}

inline std::vector<AblationRow> cmd_ablation(RunConfig c) {
  c.apply_seed();
  c.validate();
  const RunPaths paths(c);
  const ExperimentData data = load_experiment_data(c);
  const auto rows = ablation_run(model_factory(c), c.model, c.train, data, c.scale);
  CsvTable t{{"task_mode", "metric", "sum_mse", "sum_mae", "conventional_mse", "conventional_mae"}, {}};
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    t.rows.push_back({to_string(r.task_mode), to_string(r.metric), csv_number(r.sum_mse), csv_number(r.sum_mae),
                      csv_number(r.conventional_mse), csv_number(r.conventional_mae)});
    j.push_back({{"task_mode", to_string(r.task_mode)}, {"metric", to_string(r.metric)}, {"sum_mse", r.sum_mse},
                 {"sum_mae", r.sum_mae}, {"conventional_mse", r.conventional_mse},
                 {"conventional_mae", r.conventional_mae}});
  }
  write_text(paths.root / "ablation.csv", to_csv(t));
  write_json(paths.root / "ablation.json", {{"rows", j}, {"scale", to_string(c.scale)}, {"config", to_json(c)}});
  write_run_description(c, "ablation");
  return rows;
}

/// Charts from a saved transfer report, plus the sensitivity curve when its table exists.
inline std::vector<std::filesystem::path> cmd_plot(const RunConfig& c, const std::filesystem::path& report = {}) {
  const RunPaths paths(c);
  const auto rp = report.empty() ? paths.transfer_report() : report;
  if (!std::filesystem::exists(rp)) throw ConfigError("report not found: " + rp.string());
  const EvalReport r = eval_report_from_json(read_json(rp));
  std::vector<SensitivityRow> sens;
  if (std::filesystem::exists(paths.root / "sensitivity.csv")) {
    const CsvTable t = read_csv_table(paths.root / "sensitivity.csv");
    const auto l = t.numbers("lambda"), m = t.numbers("sum_mse"), a = t.numbers("sum_mae");
    for (std::size_t i = 0; i < l.size(); ++i) sens.push_back({l[i], m[i], a[i]});
  }
  return emit_plots(r, paths.plots(), sens);
}

/// Reads "model,sum_mse,sum_mae" rows (blank cells allowed) and writes comparison.csv.
inline Comparison cmd_compare(const RunConfig& c, const std::filesystem::path& baselines) {
  const RunPaths paths(c);
  const EvalReport r = eval_report_from_json(read_json(paths.transfer_report()));
  const CsvTable t = read_csv_table(baselines);
  std::vector<BaselineEntry> entries;
  const auto mc = t.column("model"), sm = t.column("sum_mse"), sa = t.column("sum_mae");
  for (const auto& row : t.rows) {
    BaselineEntry b{row[mc], std::nullopt, std::nullopt};
    if (!row[sm].empty()) b.sum_mse = std::stod(row[sm]);
    if (!row[sa].empty()) b.sum_mae = std::stod(row[sa]);
    entries.push_back(b);
  }
  const Comparison cmp = compare_external(r, entries);
  CsvTable out{{"model", "metric", "baseline", "ours", "delta_percent"}, {}};
  for (const auto& row : cmp.rows) {
    out.rows.push_back({row.model, row.metric, csv_number(row.baseline), csv_number(row.ours), csv_number(100 * row.delta)});
  }
  write_text(paths.root / "comparison.csv", to_csv(out));
  return cmp;
}

}  // namespace tsllm
