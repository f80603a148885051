#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "lunetkit/harness/commands.hpp"

using namespace lunetkit;
using namespace lunetkit::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("lunetkit_cli_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args) {
  const std::string cmd = std::string(LUNETKIT_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nlohmann::json tiny_config() {
  return grid::read_json(fs::path(LUNETKIT_CONFIG_DIR) / "tiny.json");
}

fs::path write_config(const fs::path& dir, const nlohmann::json& j, const std::string& name = "config.json") {
  grid::write_json(dir / name, j);
  return dir / name;
}

/// Dataset of 6 patients at 32x32 in 3 folds, shared by the tests below.
const fs::path& shared_data() {
  static const fs::path dir = [] {
    const auto d = scratch("data");
    EXPECT_EQ(run("generate --n 6 --seed 1 --k 3 --image-size 32 --out " + (d / "ds").string()), 0);
    return d / "ds";
  }();
  return dir;
}

}  // namespace

TEST(Cli, GenerateWritesManifestAndFolds) {
  const auto ds = phantom::read_dataset(shared_data());
  EXPECT_EQ(ds.records.size(), 6u);
  EXPECT_EQ(ds.folds.k, 3u);
  EXPECT_EQ(ds.records[0].samples[0].image.height(), 32u);
  const auto again = phantom::generate_dataset(ds.params, 6, 1, 3);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(ds.records[i].patient_id, again.records[i].patient_id);
}

TEST(Cli, MissingArgumentsAreValidationErrors) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("generate --seed 1"), 1);
  EXPECT_EQ(run("train --data x"), 1);
}

TEST(Cli, InvalidConfigExitsOne) {
  const auto dir = scratch("badcfg");
  auto cfg = tiny_config();
  cfg["train"]["patience"] = 0;
  EXPECT_EQ(run("train --data " + shared_data().string() + " --fold 0 --config " +
                write_config(dir, cfg).string() + " --out " + (dir / "m.lunk").string()),
            1);
  EXPECT_FALSE(fs::exists(dir / "m.lunk"));
}

TEST(Cli, MissingDatasetExitsOne) {
  const auto dir = scratch("nodata");
  EXPECT_EQ(run("train --data " + (dir / "absent").string() + " --fold 0 --config " +
                write_config(dir, tiny_config()).string() + " --out " + (dir / "m.lunk").string()),
            1);
}

TEST(Cli, DivergenceExitsTwoWithStateDump) {
  const auto dir = scratch("diverge");
  auto cfg = tiny_config();
  cfg["train"]["learning_rate"] = 1e30;
  cfg["train"]["max_epochs"] = 5;
  EXPECT_EQ(run("train --data " + shared_data().string() + " --fold 0 --config " +
                write_config(dir, cfg).string() + " --out " + (dir / "m.lunk").string()),
            2);
  EXPECT_TRUE(fs::exists(dir / "m.lunk.diverged.json"));
  EXPECT_FALSE(fs::exists(dir / "m.lunk"));
}

TEST(Cli, GradCheckSingleOpAndUnknownOp) {
  EXPECT_EQ(run("grad-check --op sigmoid --configs 3"), 0);
  EXPECT_EQ(run("grad-check --op no_such_op"), 1);
}

TEST(Cli, CrossValidateTrainEvaluateReport) {
  const auto dir = scratch("pipeline");
  const auto cfg = write_config(dir, tiny_config());
  const auto data = shared_data().string();
  ASSERT_EQ(run("cross-validate --quiet --data " + data + " --config " + cfg.string() + " --out " +
                (dir / "cv").string()),
            0);
  for (const char* f : {"report.json", "summary.json", "scores.csv", "localization.csv", "clinical.csv",
                        "tables.md", "bounds.json"}) {
    EXPECT_TRUE(fs::exists(dir / "cv" / f)) << f;
  }
  const auto report = read_report(dir / "cv" / "report.json");
  EXPECT_EQ(report.folds.size(), 3u);
  EXPECT_EQ(report.pooled.patients.size(), 6u);
  EXPECT_EQ(grid::read_json(dir / "cv" / "report.json"), nlohmann::json(report));
  std::size_t overlays = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "cv" / "overlays")) ++overlays;
  EXPECT_EQ(overlays, 6u);
  for (int f = 0; f < 3; ++f) EXPECT_TRUE(fs::exists(dir / "cv" / "models" / ("fold" + std::to_string(f) + ".lunk")));

  ASSERT_EQ(run("train --quiet --data " + data + " --fold 1 --config " + cfg.string() + " --out " +
                (dir / "f1.lunk").string()),
            0);
  EXPECT_EQ(slurp(dir / "f1.lunk"), slurp(dir / "cv" / "models" / "fold1.lunk"));
  const auto loaded = load_model(dir / "f1.lunk");
  EXPECT_EQ(loaded.fold, 1);
  EXPECT_EQ(loaded.config, read_experiment(cfg));

  ASSERT_EQ(run("evaluate --model " + (dir / "f1.lunk").string() + " --data " + data + " --bounds " +
                (dir / "cv" / "bounds.json").string() + " --out " + (dir / "ev").string()),
            0);
  const auto ev = read_report(dir / "ev" / "report.json");
  EXPECT_EQ(ev.pooled.patients.size(), 6u);
  EXPECT_EQ(ev.pooled.cases.size(), 24u);
  EXPECT_EQ(ev.bounds, report.bounds);

  ASSERT_EQ(run("report --in " + (dir / "cv").string() + " --out " + (dir / "rendered").string()), 0);
  for (const char* f : {"report.json", "summary.json", "scores.csv", "localization.csv", "clinical.csv", "tables.md"}) {
    EXPECT_EQ(slurp(dir / "cv" / f), slurp(dir / "rendered" / f)) << f;
  }
  for (const auto& e : fs::directory_iterator(dir / "cv" / "overlays")) {
    EXPECT_EQ(slurp(e.path()), slurp(dir / "rendered" / "overlays" / e.path().filename())) << e.path();
  }
}

TEST(Cli, CrossValidateIsDeterministic) {
  const auto dir = scratch("determinism");
  const auto cfg = write_config(dir, tiny_config());
  for (const char* out : {"a", "b"}) {
    ASSERT_EQ(run("cross-validate --quiet --data " + shared_data().string() + " --config " + cfg.string() +
                  " --out " + (dir / out).string()),
              0);
  }
  EXPECT_EQ(slurp(dir / "a" / "report.json"), slurp(dir / "b" / "report.json"));
  EXPECT_EQ(slurp(dir / "a" / "models" / "fold0.lunk"), slurp(dir / "b" / "models" / "fold0.lunk"));
}

TEST(Cli, EvaluateRejectsMalformedBounds) {
  const auto dir = scratch("badbounds");
  const auto cfg = write_config(dir, tiny_config());
  ASSERT_EQ(run("train --quiet --data " + shared_data().string() + " --fold 0 --config " + cfg.string() +
                " --out " + (dir / "m.lunk").string()),
            0);
  grid::write_json(dir / "bounds.json", {{"endo", 1}});
  EXPECT_EQ(run("evaluate --model " + (dir / "m.lunk").string() + " --data " + shared_data().string() +
                " --bounds " + (dir / "bounds.json").string() + " --out " + (dir / "ev").string()),
            1);
}
