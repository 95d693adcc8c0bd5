// Synthetic data, a short training run on the toy backbone, then zero-shot
// transfer to the other households. Usage: tsllm_demo [output_dir]

#include "tsllm/pipeline.hpp"
#include "tsllm/synthetic.hpp"

#include <iostream>

int main(int argc, char** argv) {
  using namespace tsllm;
  try {
    const std::filesystem::path out = argc > 1 ? argv[1] : "demo_run";
    SyntheticSpec spec;
    spec.households = 4;
    write_load_csv(out / "synthetic.csv", synthetic_households(spec));

    RunConfig c;
    c.data_path = (out / "synthetic.csv").string();
    c.output_root = out.string();
    c.run_id = "quickstart";
    c.households = spec.households;
    c.train.lr = 1e-3;
    c.train.batch_size = 4;
    c.train.max_epochs = 3;

    const auto prep = cmd_prepare(c);
    std::cout << "primary household " << prep.manifest["primary_household"] << ", " << prep.train_windows
              << " training windows\n";
    cmd_train(c, [](const CurveRow& r) {
      std::cout << "epoch " << r.epoch << " train " << r.train_loss << " val " << r.val_loss << '\n';
    });
    const EvalReport report = cmd_transfer(c);
    for (const auto& [id, m] : report.per_household) {
      std::cout << "household " << id << " mse " << m.mse << " mae " << m.mae << '\n';
    }
    std::cout << "sum_mse " << report.sum_mse << " sum_mae " << report.sum_mae << '\n';
    for (const auto& p : cmd_plot(c)) std::cout << "wrote " << p.string() << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}
