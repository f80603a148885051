#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "lunetkit/harness/commands.hpp"

namespace fs = std::filesystem;
namespace h = lunetkit::harness;

int main(int argc, char** argv) {
  CLI::App app{"LU-Net localization and segmentation toolkit"};
  app.require_subcommand(1);

  std::size_t n = 0, k = 10, image_size = 128;
  std::uint64_t seed = 0;
  std::string out, data, config, model, bounds, in, op;
  int fold = 0;
  std::size_t configs = 20;
  bool quiet = false;

  auto* gen = app.add_subcommand("generate", "Generate a synthetic phantom dataset");
  gen->add_option("--n", n, "Number of patients")->required();
  gen->add_option("--seed", seed, "Master seed")->required();
  gen->add_option("--k", k, "Number of stratified folds");
  gen->add_option("--image-size", image_size, "Image side length in pixels");
  gen->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train the model of one cross-validation fold");
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--fold", fold, "Held-out fold index")->required();
  tr->add_option("--config", config, "Experiment config JSON")->required();
  tr->add_option("--out", out, "Model parameter file")->required();
  tr->add_flag("--quiet", quiet, "Suppress per-epoch progress");

  auto* cv = app.add_subcommand("cross-validate", "Train and evaluate every fold");
  cv->add_option("--data", data, "Dataset directory")->required();
  cv->add_option("--config", config, "Experiment config JSON")->required();
  cv->add_option("--out", out, "Output directory")->required();
  cv->add_flag("--quiet", quiet, "Suppress per-epoch progress");

  auto* ev = app.add_subcommand("evaluate", "Evaluate a saved model on a dataset");
  ev->add_option("--model", model, "Model parameter file")->required();
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--bounds", bounds, "Outlier bounds JSON")->required();
  ev->add_option("--out", out, "Output directory")->required();

  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  gc->add_option("--op", op, "Single operation name");
  gc->add_option("--configs", configs, "Random configurations per operation");
  gc->add_option("--seed", seed, "Random seed");

  auto* rp = app.add_subcommand("report", "Re-render a report directory");
  rp->add_option("--in", in, "Directory holding report.json and predictions/")->required();
  rp->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    std::ostream* log = quiet ? nullptr : &std::cerr;
    if (*gen) {
      lunetkit::phantom::PhantomParams params;
      params.image_size = image_size;
      h::command_generate(n, seed, k, out, params);
    } else if (*tr) {
      const auto hist = h::command_train(data, fold, config, out, log);
      std::cout << "best epoch " << hist.best_epoch << " of " << hist.stopped_epoch << "\n";
    } else if (*cv) {
      const auto report = h::command_cross_validate(data, config, out, log);
      std::cout << "pooled IOU " << report.pooled.localization.iou.mean << " BB out "
                << report.pooled.localization.bb_out << "\n";
    } else if (*ev) {
      const auto report = h::command_evaluate(model, data, bounds, out);
      std::cout << "IOU " << report.pooled.localization.iou.mean << " BB out " << report.pooled.localization.bb_out
                << "\n";
    } else if (*gc) {
      return h::command_grad_check(op, configs, seed, std::cout) ? 0 : 1;
    } else if (*rp) {
      h::command_report(in, out);
    }
  } catch (const lunetkit::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return h::exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
