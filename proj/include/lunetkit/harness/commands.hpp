#pragma once

#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <ostream>
#include <string>
#include <vector>

#include "lunetkit/harness/cross_validate.hpp"
#include "lunetkit/harness/gradient_suite.hpp"
#include "lunetkit/nets/lunet.hpp"

namespace lunetkit::harness {

namespace fs = std::filesystem;

/// Process exit status for a library error.
inline int exit_code(const Error& e) { return e.code() == ErrorCode::DivergedLoss ? 2 : 1; }

/// Sidecar JSON describing a saved model: <model>.json next to the parameter file.
inline fs::path model_sidecar(const fs::path& model) { return fs::path(model.string() + ".json"); }

inline ExperimentConfig read_experiment(const fs::path& path) { return parse_experiment(grid::read_json(path)); }

inline std::string dataset_label(const fs::path& data) { return fs::absolute(data).lexically_normal().string(); }

inline void save_model(const nets::LUNetModel<float>& model, const fs::path& path, const ExperimentConfig& config,
                       int fold, const TrainHistory& history) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    require(!ec, ErrorCode::IoFailure, "cannot create " + path.parent_path().string());
  }
  nets::save_lunet(model, path);
  grid::write_json(model_sidecar(path), {{"config", config}, {"fold", fold}, {"history", history}});
}

struct LoadedModel {
  ExperimentConfig config;
  int fold = -1;
  nets::LUNetModel<float> model;
};

inline LoadedModel load_model(const fs::path& path) {
  const auto side = grid::read_json(model_sidecar(path));
  LoadedModel out;
  try {
    out.config = parse_experiment(side.at("config"));
    out.fold = side.value("fold", -1);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::IoFailure, "malformed model sidecar: " + std::string(e.what()));
  }
  out.model = nets::load_lunet<float>(out.config.model, path);
  return out;
}

/// Predicted label maps as <dir>/<patient_id>/<view>_<instant>_pred.png.
inline void write_predictions(const fs::path& dir, std::span<const phantom::PatientRecord> records,
                              std::span<const PatientPredictions> predictions) {
  require(records.size() == predictions.size(), ErrorCode::LengthMismatch, "predictions do not match records");
  parallel_for(records.size(), [&](std::size_t r) {
    const fs::path pdir = dir / records[r].patient_id;
    std::error_code ec;
    fs::create_directories(pdir, ec);
    require(!ec, ErrorCode::IoFailure, "cannot create " + pdir.string());
    std::size_t k = 0;
    for (View v : grid::kViews) {
      for (Instant i : grid::kInstants) {
        grid::write_mask_png(pdir / (phantom::sample_stem(v, i) + "_pred.png"), predictions[r][k++].labels);
      }
    }
  });
}

inline std::vector<PatientPredictions> read_predictions(const fs::path& dir,
                                                        std::span<const phantom::PatientRecord> records,
                                                        const EvalSection& section) {
  std::map<std::string, BoundingBox> boxes;
  for (const auto& c : section.cases) boxes[c.patient_id + "/" + phantom::sample_stem(c.view, c.instant)] = c.predicted_box;
  std::vector<PatientPredictions> out(records.size());
  parallel_for(records.size(), [&](std::size_t r) {
    std::size_t k = 0;
    for (View v : grid::kViews) {
      for (Instant i : grid::kInstants) {
        const auto stem = phantom::sample_stem(v, i);
        const auto it = boxes.find(records[r].patient_id + "/" + stem);
        require(it != boxes.end(), ErrorCode::IoFailure, "report lacks " + records[r].patient_id + " " + stem);
        const auto& spacing = records[r].at(v, i).mask.spacing();
        out[r][k++] = {it->second,
                       grid::read_mask_png(dir / records[r].patient_id / (stem + "_pred.png"), spacing)};
      }
    }
  });
  return out;
}

inline std::vector<PatientOverlay> make_overlays(std::span<const phantom::PatientRecord> records,
                                                 std::span<const PatientPredictions> predictions) {
  require(records.size() == predictions.size(), ErrorCode::LengthMismatch, "predictions do not match records");
  std::vector<PatientOverlay> out(records.size());
  for (std::size_t r = 0; r < records.size(); ++r) {
    out[r].patient_id = records[r].patient_id;
    std::size_t k = 0;
    for (View v : grid::kViews) {
      for (Instant i : grid::kInstants) {
        const auto& s = records[r].at(v, i);
        out[r].views[k] = {s.image, s.mask, predictions[r][k].labels, predictions[r][k].box};
        ++k;
      }
    }
  }
  return out;
}

/// Records in the order the pooled section lists its patients.
inline std::vector<phantom::PatientRecord> records_in_report_order(const phantom::Dataset& ds,
                                                                   const EvalSection& section) {
  std::map<std::string, const phantom::PatientRecord*> by_id;
  for (const auto& r : ds.records) by_id[r.patient_id] = &r;
  std::vector<phantom::PatientRecord> out;
  for (const auto& p : section.patients) {
    const auto it = by_id.find(p.patient_id);
    require(it != by_id.end(), ErrorCode::IoFailure, "dataset lacks patient " + p.patient_id);
    out.push_back(*it->second);
  }
  return out;
}

/// Serialised progress lines shared by concurrently training folds.
class ProgressLog {
 public:
  explicit ProgressLog(std::ostream* out) : out_(out) {}
  void epoch(int fold, std::size_t e, const LossParts& t, const LossParts& v) {
    if (out_ == nullptr) return;
    std::lock_guard lock(mutex_);
    *out_ << "fold " << fold << " epoch " << e << " train " << t.total << " val " << v.total << " (loc "
          << v.localization << " seg " << v.segmentation << " aux " << v.auxiliary << ")\n";
    out_->flush();
  }

 private:
  std::ostream* out_;
  std::mutex mutex_;
};

inline void command_generate(std::size_t n, std::uint64_t seed, std::size_t k, const fs::path& out,
                             const phantom::PhantomParams& params = {}) {
  phantom::write_dataset(out, phantom::generate_dataset(params, n, seed, k));
}

/// Trains the model of one cross-validation round: same split and seeds
/// as fold `fold` of cross_validate.
inline TrainHistory command_train(const fs::path& data, int fold, const fs::path& config_path, const fs::path& out,
                                  std::ostream* log = nullptr) {
  const auto config = read_experiment(config_path);
  const auto ds = phantom::read_dataset(data);
  const FoldSplit s = fold_split(ds.records, ds.folds, fold, config.train.validation_folds);
  auto model = nets::build_lunet<float>(config.model, fold_seed(config.train.seed, fold, 0));
  const auto train_samples = collect_samples(ds.records, s.train);
  const auto val_samples = collect_samples(ds.records, s.validation);
  const auto train_ptrs = pointers(train_samples);
  const auto val_ptrs = pointers(val_samples);
  TrainConfig tc = config.train;
  tc.seed = fold_seed(config.train.seed, fold, 1);
  ProgressLog progress(log);
  TrainHooks hooks;
  hooks.on_epoch = [&](std::size_t e, const LossParts& t, const LossParts& v) { progress.epoch(fold, e, t, v); };
  hooks.on_divergence = [&](const TrainHistory& h) {
    grid::write_json(fs::path(out.string() + ".diverged.json"), {{"config", config}, {"fold", fold}, {"history", h}});
  };
  LUNetTrainer trainer(model, config.train.loss);
  const auto history = train<Sample>(trainer, std::span<const Sample* const>(train_ptrs),
                                     std::span<const Sample* const>(val_ptrs), tc, hooks);
  model.set_trainable(false);
  save_model(model, out, config, fold, history);
  return history;
}

/// Layout: report files, bounds.json, models/fold<k>.lunk(+.json) and
/// predictions/<patient_id>/<view>_<instant>_pred.png.
inline RunReport command_cross_validate(const fs::path& data, const fs::path& config_path, const fs::path& out,
                                        std::ostream* log = nullptr) {
  const auto config = read_experiment(config_path);
  const auto ds = phantom::read_dataset(data);
  ProgressLog progress(log);
  auto cv = cross_validate(ds.records, ds.folds, config,
                           [&](int f, std::size_t e, const LossParts& t, const LossParts& v) {
                             progress.epoch(f, e, t, v);
                           });
  cv.report.dataset = dataset_label(data);
  for (std::size_t f = 0; f < cv.models.size(); ++f) {
    save_model(cv.models[f], out / "models" / ("fold" + std::to_string(f) + ".lunk"), config,
               static_cast<int>(f), cv.report.folds[f].history);
  }
  write_predictions(out / "predictions", ds.records, cv.predictions);
  grid::write_json(out / "bounds.json", cv.report.bounds);
  render_report(cv.report, out, make_overlays(ds.records, cv.predictions));
  return cv.report;
}

/// Evaluates a saved model on every record of the dataset.
inline RunReport command_evaluate(const fs::path& model_path, const fs::path& data, const fs::path& bounds_path,
                                  const fs::path& out) {
  const auto loaded = load_model(model_path);
  const auto ds = phantom::read_dataset(data);
  metrics::OutlierBounds bounds;
  try {
    bounds = grid::read_json(bounds_path).get<metrics::OutlierBounds>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, "malformed bounds file: " + std::string(e.what()));
  }
  auto ev = evaluate(LUNetPredictor(loaded.model, loaded.config.eval.teacher_forced), ds.records, bounds,
                     loaded.config.eval);
  RunReport report;
  report.dataset = dataset_label(data);
  report.config = loaded.config;
  report.bounds = bounds;
  report.pooled = ev.section;
  write_predictions(out / "predictions", ds.records, ev.predictions);
  render_report(report, out, make_overlays(ds.records, ev.predictions));
  return report;
}

/// Re-renders a report directory (report.json plus predictions/) into out.
inline RunReport command_report(const fs::path& in, const fs::path& out) {
  const auto report = read_report(in / "report.json");
  const auto ds = phantom::read_dataset(report.dataset);
  const auto ordered = records_in_report_order(ds, report.pooled);
  const auto predictions = read_predictions(in / "predictions", ordered, report.pooled);
  render_report(report, out, make_overlays(ordered, predictions));
  return report;
}

/// Runs one or all registered checks; true when every check passes.
inline bool command_grad_check(const std::string& op, std::size_t configs, std::uint64_t seed, std::ostream& out) {
  std::vector<std::string> ops;
  if (op.empty()) {
    ops = gradient_suite_ops();
  } else {
    ops = {op};
  }
  bool ok = true;
  for (const auto& name : ops) {
    const auto r = run_gradient_check(name, configs, seed);
    out << (r.passed() ? "PASS " : "FAIL ") << r.op << " configs=" << r.configs << " max_rel_error=" << r.max_error
        << " tolerance=" << r.tolerance << "\n";
    ok = ok && r.passed();
  }
  return ok;
}

}  // namespace lunetkit::harness
