#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "bcsi/ablate.hpp"
#include "bcsi/gradsuite.hpp"
#include "bcsi/trainer.hpp"

// Exit codes: 0 success, 1 usage/config/format error, 2 numerical failure
// (non-finite loss or a failed gradient check).

using namespace bcsi;

namespace {

int cmd_gen_data(const std::string& config_path, const std::string& out, bool force) {
  const RunConfig cfg = load_config(config_path);
  const std::string dir = out.empty() ? cfg.data_dir : out;
  const DatasetManifest m = generate_dataset(dir, cfg, force);
  std::cout << "wrote " << cfg.data.n_cases << " cases to " << dir << " ("
            << m.labeled_ids.size() << " labeled / " << m.unlabeled_ids.size() << " unlabeled / "
            << m.test_ids.size() << " test)\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume, const std::string& out) {
  RunConfig cfg = load_config(config_path);
  if (!out.empty()) cfg.out_dir = out;
  run_training(cfg, resume);
  std::cout << "final checkpoint: " << cfg.out_dir << "/final.bck\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt, const std::string& out) {
  const RunConfig cfg = load_config(config_path);
  const Dataset data = load_dataset(cfg.data_dir);
  TrainerState state = init_state(cfg);
  load_state(ckpt, state);
  const MetricsReport rep = evaluate_cases(state, data.test);
  std::cout << std::fixed << std::setprecision(2) << "cases evaluated: " << rep.evaluated << "/"
            << rep.cases.size() << "\n"
            << "dice    " << rep.mean_dice << "\n"
            << "jaccard " << rep.mean_jaccard << "\n"
            << "hd95    " << rep.mean_hd95 << "\n"
            << "asd     " << rep.mean_asd << "\n";
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    write_metrics_csv(out + "/metrics.csv", rep);
    write_metrics_json(out + "/metrics.json", rep);
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& cells, int seeds,
               const std::string& out) {
  const RunConfig cfg = load_config(config_path);
  const std::string dir = out.empty() ? cfg.out_dir + "/ablation" : out;
  const std::vector<AblationRow> rows = run_ablation(cfg, cells, seeds, dir);
  write_ablation_csv(dir + "/ablation.csv", rows);
  std::cout << "wrote " << dir << "/ablation.csv (" << rows.size() << " rows)\n";
  return 0;
}

int cmd_grad_check() {
  const GradSuiteReport rep = run_grad_suite(true);
  std::cout << format_grad_report(rep);
  return rep.all_pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semi-supervised volumetric segmentation workbench"};
  app.require_subcommand(1);

  std::string config_path, resume, out;
  std::vector<std::string> cells = {"baseline", "ssp", "bci", "full"};
  int seeds = 1;
  bool force = false;

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  gen->add_option("--config", config_path, "run configuration (JSON)")->required();
  gen->add_option("--out", out, "dataset directory (default: data_dir from the config)");
  gen->add_flag("--force", force, "overwrite a non-empty directory");

  CLI::App* train = app.add_subcommand("train", "train to t_max with checkpoints and a loss log");
  train->add_option("--config", config_path, "run configuration (JSON)")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--out", out, "output directory (default: out_dir from the config)");

  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on the test split");
  eval->add_option("--config", config_path, "run configuration (JSON)")->required();
  eval->add_option("--resume", resume, "checkpoint to evaluate")->required();
  eval->add_option("--out", out, "directory for metrics.csv / metrics.json (optional)");

  CLI::App* ablate = app.add_subcommand("ablate", "train and compare ablation cells");
  ablate->add_option("--config", config_path, "base run configuration (JSON)")->required();
  ablate->add_option("--cells", cells, "cell names")->delimiter(',')->capture_default_str();
  ablate->add_option("--seeds", seeds, "seeds per cell")->check(CLI::PositiveNumber);
  ablate->add_option("--out", out, "harness directory (default: out_dir/ablation)");

  CLI::App* gc = app.add_subcommand("grad-check", "finite-difference gradient verification");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the usage error
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out, force);
    if (train->parsed()) return cmd_train(config_path, resume, out);
    if (eval->parsed()) return cmd_eval(config_path, resume, out);
    if (ablate->parsed()) return cmd_ablate(config_path, cells, seeds, out);
    if (gc->parsed()) return cmd_grad_check();
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
