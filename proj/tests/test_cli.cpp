#include "tsllm/pipeline.hpp"
#include "tsllm/synthetic.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace tsllm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "tsllm_tests" / "cli" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path synthetic_csv(const fs::path& dir, int households = 4, int days = 30) {
  SyntheticSpec spec;
  spec.households = households;
  spec.days = days;
  const fs::path p = dir / "load.csv";
  write_load_csv(p, synthetic_households(spec));
  return p;
}

/// Small geometry that keeps an end-to-end run to a few seconds.
RunConfig small_run(const fs::path& dir) {
  RunConfig c;
  c.data_path = synthetic_csv(dir).string();
  c.output_root = (dir / "runs").string();
  c.run_id = "small";
  c.window_stride = 48;
  c.model.input_len = 96;
  c.model.horizon = 8;
  c.model.k_proto = 8;
  c.model.m_prefix = 2;
  c.backbone.d_model = 16;
  c.backbone.n_heads = 2;
  c.backbone.vocab_size = 32;
  c.backbone.max_positions = 32;
  c.train.lr = 1e-3;
  c.train.batch_size = 4;
  c.train.max_epochs = 2;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

#ifdef TSLLM_CLI_PATH
int run_cli(const std::string& args) {
  const std::string cmd = std::string(TSLLM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
#endif

}  // namespace

TEST(RunConfigText, DefaultsAreGolden) {
  const auto m = to_map(RunConfig{});
  EXPECT_EQ(m.at("input_len"), "512");
  EXPECT_EQ(m.at("horizon"), "96");
  EXPECT_EQ(m.at("period"), "48");
  EXPECT_EQ(m.at("patch_len"), "16");
  EXPECT_EQ(m.at("patch_stride"), "8");
  EXPECT_EQ(m.at("m_prefix"), "8");
  EXPECT_EQ(m.at("households"), "20");
  EXPECT_EQ(m.at("split_train"), "0.7");
  EXPECT_EQ(m.at("split_val"), "0.1");
  EXPECT_EQ(m.at("split_test"), "0.2");
  EXPECT_EQ(m.at("lambda"), "0.1");
  EXPECT_EQ(m.at("metric"), "cosine");
  EXPECT_EQ(m.at("task_mode"), "mtl");
  EXPECT_EQ(m.at("scale"), "normalized");
  EXPECT_EQ(m.at("lambda_grid"), "0,0.01,0.05,0.1,1");
  EXPECT_NO_THROW(RunConfig{}.validate());
}

TEST(RunConfigText, RoundTripsAndRejectsUnknownKeys) {
  RunConfig c;
  c.model.metric = SimilarityMetric::Euclidean;
  c.train.lambda = 0.05;
  c.lambda_grid = {0, 0.3};
  c.seed = 42;
  std::istringstream in(to_text(c));
  EXPECT_EQ(to_text(parse_run_config(in)), to_text(c));

  std::istringstream bad("lambda = 0.1\nlamda = 0.2\n");
  EXPECT_THROW(parse_run_config(bad), ConfigError);
  std::istringstream no_eq("lambda 0.1\n");
  EXPECT_THROW(parse_run_config(no_eq), ConfigError);
  std::istringstream bad_value("lr = fast\n");
  EXPECT_THROW(parse_run_config(bad_value), ConfigError);
  std::istringstream comments("# header\n\nseed = 3  # trailing\n");
  EXPECT_EQ(parse_run_config(comments).seed, 3u);
}

TEST(RunConfigText, ValidationFailures) {
  RunConfig c;
  c.train.lambda = 0.1;
  c.model.m_prefix = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.lambda_grid = {-1};
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.split.test = 0.3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ExitCodes, MapErrorKinds) {
  EXPECT_EQ(exit_code_for(ConfigError("x")), 1);
  EXPECT_EQ(exit_code_for(ContextLengthError(80, 64)), 1);
  EXPECT_EQ(exit_code_for(DataError("x")), 2);
  EXPECT_EQ(exit_code_for(LoadError("x")), 2);
  EXPECT_EQ(exit_code_for(ShapeError("x")), 3);
  EXPECT_EQ(exit_code_for(std::runtime_error("x")), 3);
}

TEST(HouseholdSelection, SeededSortedAndStable) {
  std::vector<int> ids(50);
  for (int i = 0; i < 50; ++i) ids[static_cast<std::size_t>(i)] = i + 1;
  const auto a = select_households(ids, 20, 9), b = select_households(ids, 20, 9), c = select_households(ids, 20, 10);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_EQ(a.size(), 20u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(select_households({3, 1, 2}, 20, 0), (std::vector<int>{1, 2, 3}));
}

TEST(Prepare, DeterministicManifestAndWindows) {
  const fs::path dir = scratch("prepare");
  RunConfig c = small_run(dir);
  const auto first = cmd_prepare(c);
  const std::string train_bytes = slurp(RunPaths(c).windows("train"));
  const auto second = cmd_prepare(c);
  EXPECT_EQ(first.manifest, second.manifest);
  EXPECT_EQ(slurp(RunPaths(c).windows("train")), train_bytes);

  const auto& m = first.manifest;
  EXPECT_EQ(m["primary_household"], 1);
  EXPECT_EQ(m["households"].size(), 4u);
  EXPECT_EQ(m["transfer"].size(), 3u);
  // 30 days: 1008 / 144 / 288 steps, windows of 104 at stride 48
  EXPECT_EQ(m["split"]["train"]["end_index"], 1008);
  EXPECT_EQ(m["split"]["val"]["end_index"], 1152);
  EXPECT_EQ(m["windows"]["train"], 19);
  EXPECT_EQ(m["windows"]["test"], 4);
  EXPECT_EQ(m["transfer"]["2"], 4);
  EXPECT_TRUE(fs::exists(RunPaths(c).config()));
  EXPECT_TRUE(fs::exists(RunPaths(c).run_info()));
}

TEST(Prepare, MissingDataFileIsDataError) {
  const fs::path dir = scratch("missing_data");
  RunConfig c = small_run(dir);
  c.data_path = (dir / "absent.csv").string();
  EXPECT_THROW(cmd_prepare(c), DataError);
}

TEST(Pipeline, CommandsBeforePrepareOrTrainAreConfigErrors) {
  const fs::path dir = scratch("order");
  RunConfig c = small_run(dir);
  EXPECT_THROW(cmd_train(c), ConfigError);
  EXPECT_THROW(cmd_eval(c), ConfigError);
  EXPECT_THROW(cmd_transfer(c), ConfigError);
  EXPECT_THROW(cmd_forecast(c), ConfigError);
  cmd_prepare(c);
  EXPECT_THROW(cmd_transfer(c, dir / "nope.ckpt"), ConfigError);
}

TEST(Pipeline, PrepareTrainEvalTransferForecastPlot) {
  const fs::path dir = scratch("e2e");
  RunConfig c = small_run(dir);
  cmd_prepare(c);
  const TrainResult tr = cmd_train(c);
  EXPECT_EQ(tr.curve.size(), 3u);  // epoch 0 plus two epochs
  const RunPaths paths(c);
  ASSERT_TRUE(fs::exists(paths.checkpoint()));
  EXPECT_EQ(read_csv_table(paths.curve()).rows.size(), 3u);
  const auto report = read_json(paths.train_report());
  EXPECT_EQ(report["trainable_parameters"].size(), 6u);

  const std::string ckpt = slurp(paths.checkpoint());
  const HouseholdMetrics m = cmd_eval(c);
  EXPECT_EQ(m.windows, 4u);
  EXPECT_TRUE(std::isfinite(m.mse));
  const EvalReport r = cmd_transfer(c);
  EXPECT_EQ(slurp(paths.checkpoint()), ckpt);
  EXPECT_EQ(r.per_household.size(), 3u);
  ASSERT_TRUE(r.primary.has_value());
  EXPECT_DOUBLE_EQ(r.primary->mse, m.mse);
  const auto saved = read_json(paths.transfer_report());
  EXPECT_TRUE(validate_eval_report(saved).empty());
  EXPECT_EQ(cmd_transfer(c).sum_mse, r.sum_mse);

  const fs::path f = cmd_forecast(c);
  const CsvTable ft = read_csv_table(f);
  EXPECT_EQ(ft.header, (std::vector<std::string>{"timestamp", "sp_pred", "hp_pred", "ap_pred"}));
  EXPECT_EQ(ft.rows.size(), 4u * 8u);
  const auto side = read_json(fs::path(f.string() + ".json"));
  EXPECT_EQ(side["windows"].size(), 4u);
  const auto stamps = ft.numbers("timestamp");
  EXPECT_DOUBLE_EQ(stamps[1] - stamps[0], 1800.0);

  const auto plots = cmd_plot(c);
  EXPECT_EQ(plots.size(), 4u);

  const fs::path baselines = dir / "baselines.csv";
  write_text(baselines, "model,sum_mse,sum_mae\nA," + csv_number(2 * r.sum_mse) + ",\n");
  const Comparison cmp = cmd_compare(c, baselines);
  ASSERT_EQ(cmp.rows.size(), 1u);
  EXPECT_NEAR(cmp.rows[0].delta, 0.5, 1e-8);
  EXPECT_EQ(cmp.notes.size(), 1u);
}

TEST(Pipeline, SensitivityGridGivesOneRowPerLambda) {
  const fs::path dir = scratch("sens");
  RunConfig c = small_run(dir);
  c.train.max_epochs = 1;
  c.lambda_grid = {0, 0.1};
  cmd_prepare(c);
  const auto rows = cmd_sensitivity(c);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].lambda, 0.0);
  EXPECT_EQ(rows[1].lambda, 0.1);
  EXPECT_EQ(read_csv_table(RunPaths(c).root / "sensitivity.csv").rows.size(), 2u);
  EXPECT_TRUE(fs::exists(RunPaths(c).root / "sensitivity.svg"));
}

#ifdef TSLLM_CLI_PATH
TEST(Cli, SubcommandsAndExitCodes) {
  const fs::path dir = scratch("binary");
  const fs::path csv = dir / "synth.csv";
  ASSERT_EQ(run_cli("synth --households 3 --days 30 -o " + csv.string()), 0);
  ASSERT_TRUE(fs::exists(csv));
  const std::string common = " --data_path " + csv.string() + " --output_root " + (dir / "runs").string() +
                             " --input_len 96 --horizon 8 --k_proto 8 --m_prefix 2 --d_model 16 --n_heads 2"
                             " --vocab_size 32 --max_positions 32 --window_stride 48 --max_epochs 1 --batch_size 8";
  EXPECT_EQ(run_cli("config" + common), 0);
  EXPECT_EQ(run_cli("eval" + common), 1);
  EXPECT_EQ(run_cli("prepare --data_path " + (dir / "absent.csv").string()), 2);
  EXPECT_EQ(run_cli("prepare --lambda -1"), 1);
  EXPECT_EQ(run_cli("prepare --no_such_flag 3"), 1);
  EXPECT_EQ(run_cli("prepare" + common), 0);
  EXPECT_EQ(run_cli("train" + common), 0);
  EXPECT_EQ(run_cli("transfer" + common), 0);
  EXPECT_EQ(run_cli("forecast" + common), 0);
  EXPECT_TRUE(fs::exists(dir / "runs" / "default" / "forecast.csv"));
  EXPECT_EQ(run_cli("forecast" + common + " --checkpoint " + (dir / "missing.ckpt").string()), 1);
}
#endif
