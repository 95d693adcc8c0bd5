// Command-line front end. Every RunConfig key is also a flag (--key value);
// flags override the config file. Exit codes: 1 config, 2 data, 3 runtime.

#include "tsllm/pipeline.hpp"
#include "tsllm/synthetic.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <map>
#include <string>

namespace {

using namespace tsllm;

struct Options {
  std::string config_path;
  std::map<std::string, std::string> overrides;
  std::string checkpoint;
  std::string report;
  std::string baselines;
  std::string out = "data/synthetic.csv";
  int synth_households = 3;
  int synth_days = 140;
  std::uint64_t synth_seed = 7;
};

RunConfig resolve(const Options& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  for (const auto& [k, v] : o.overrides) set_config_value(c, k, v);
  return c;
}

void print_metrics(const char* label, const HouseholdMetrics& m) {
  std::cout << label << ": mse=" << m.mse << " mae=" << m.mae << " windows=" << m.windows << '\n';
}

int run(int argc, char** argv) {
  CLI::App app{"Zero-shot household load forecasting"};
  app.require_subcommand(1);
  Options o;

  auto* prepare = app.add_subcommand("prepare", "parse the load CSV and write window datasets plus a manifest");
  auto* train_cmd = app.add_subcommand("train", "train on the primary household and write a checkpoint and curve");
  auto* eval = app.add_subcommand("eval", "conventional test metrics of the primary household");
  auto* forecast = app.add_subcommand("forecast", "write physical-unit forecasts of the test windows as CSV");
  auto* transfer = app.add_subcommand("transfer", "zero-shot evaluation on the other households");
  auto* sensitivity = app.add_subcommand("sensitivity", "train and transfer once per lambda in lambda_grid");
  auto* ablation = app.add_subcommand("ablation", "task mode x similarity metric grid");
  auto* plot = app.add_subcommand("plot", "charts and CSV twins from a transfer report");
  auto* compare = app.add_subcommand("compare", "relative deltas against baseline sums from a CSV");
  auto* synth = app.add_subcommand("synth", "write a synthetic load CSV");
  auto* show = app.add_subcommand("config", "print the resolved configuration");

  for (auto* sub : {prepare, train_cmd, eval, forecast, transfer, sensitivity, ablation, plot, compare, show}) {
    sub->add_option("-c,--config", o.config_path, "key = value config file")->check(CLI::ExistingFile);
    for (const auto& f : detail::fields()) {
      const std::string key = f.key;
      sub->add_option_function<std::string>("--" + key, [&o, key](const std::string& v) { o.overrides[key] = v; }, f.doc)
          ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
  }
  for (auto* sub : {eval, forecast, transfer}) sub->add_option("--checkpoint", o.checkpoint, "checkpoint path (default: run dir)");
  plot->add_option("--report", o.report, "transfer report JSON (default: run dir)");
  compare->add_option("--baselines", o.baselines, "CSV with columns model,sum_mse,sum_mae")->required();
  synth->add_option("-o,--out", o.out, "output CSV path");
  synth->add_option("--households", o.synth_households, "number of households");
  synth->add_option("--days", o.synth_days, "days per household");
  synth->add_option("--seed", o.synth_seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (synth->parsed()) {
    SyntheticSpec spec;
    spec.households = o.synth_households;
    spec.days = o.synth_days;
    spec.seed = o.synth_seed;
    write_load_csv(std::filesystem::path(o.out), synthetic_households(spec));
    std::cout << "wrote " << o.out << '\n';
    return kExitOk;
  }

  const RunConfig c = resolve(o);
  const RunPaths paths(c);
  if (show->parsed()) {
    std::cout << to_text(c);
  } else if (prepare->parsed()) {
    const auto r = cmd_prepare(c);
    std::cout << "households " << r.manifest["households"].dump() << ", primary " << r.manifest["primary_household"]
              << ", " << r.train_windows << " training windows\n";
    for (auto it = r.manifest["excluded"].begin(); it != r.manifest["excluded"].end(); ++it) {
      std::cout << "excluded " << it.key() << ": " << it.value().get<std::string>() << '\n';
    }
  } else if (train_cmd->parsed()) {
    const auto r = cmd_train(c, [](const CurveRow& row) {
      std::cout << "epoch " << row.epoch << " train " << row.train_loss << " val " << row.val_loss << " pred "
                << row.pred_loss << " align " << row.align_loss << std::endl;
    });
    std::cout << "best epoch " << r.best_epoch << ", checkpoint " << paths.checkpoint().string() << '\n';
  } else if (eval->parsed()) {
    print_metrics("test", cmd_eval(c, o.checkpoint));
  } else if (forecast->parsed()) {
    std::cout << "wrote " << cmd_forecast(c, o.checkpoint).string() << '\n';
  } else if (transfer->parsed()) {
    const EvalReport r = cmd_transfer(c, o.checkpoint);
    for (const auto& [id, m] : r.per_household) print_metrics(("household " + std::to_string(id)).c_str(), m);
    std::cout << "sum_mse=" << r.sum_mse << " sum_mae=" << r.sum_mae << '\n';
  } else if (sensitivity->parsed()) {
    for (const auto& r : cmd_sensitivity(c)) {
      std::cout << "lambda " << r.lambda << " sum_mse " << r.sum_mse << " sum_mae " << r.sum_mae << '\n';
    }
  } else if (ablation->parsed()) {
    for (const auto& r : cmd_ablation(c)) {
      std::cout << to_string(r.task_mode) << '/' << to_string(r.metric) << " sum_mse " << r.sum_mse << " sum_mae "
                << r.sum_mae << '\n';
    }
  } else if (plot->parsed()) {
    for (const auto& p : cmd_plot(c, o.report)) std::cout << p.string() << '\n';
  } else if (compare->parsed()) {
    const Comparison cmp = cmd_compare(c, o.baselines);
    for (const auto& r : cmp.rows) std::cout << r.model << ' ' << r.metric << ' ' << 100 * r.delta << "%\n";
    for (const auto& n : cmp.notes) std::cout << "note: " << n << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return tsllm::exit_code_for(e);
  }
}
