#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "lunetkit/harness/report.hpp"
#include "lunetkit/phantom/dataset.hpp"

namespace lunetkit::harness {

/// Record indices of one cross-validation round, each sorted by patient id.
struct FoldSplit {
  std::vector<int> validation_folds;
  std::vector<std::size_t> train, validation, test;
};

/// Held-out fold f; validation uses the next validation_folds folds
/// (cyclically). When no other fold is left for training, the training
/// records double as the validation set.
inline FoldSplit fold_split(std::span<const phantom::PatientRecord> records,
                            const phantom::FoldAssignment& folds, int f, std::size_t validation_folds) {
  const auto k = static_cast<int>(folds.k);
  require(folds.folds.size() == records.size(), ErrorCode::InvalidK, "fold assignment does not match records");
  require(k >= 2, ErrorCode::InvalidK, "cross-validation needs at least 2 folds");
  require(f >= 0 && f < k, ErrorCode::InvalidK, "fold index out of range");
  FoldSplit s;
  const int nv = std::min(static_cast<int>(validation_folds), k - 2);
  for (int d = 1; d <= nv; ++d) s.validation_folds.push_back((f + d) % k);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const int fi = folds.folds[i];
    require(fi >= 0 && fi < k, ErrorCode::InvalidK, "fold index out of range");
    if (fi == f) {
      s.test.push_back(i);
    } else if (std::find(s.validation_folds.begin(), s.validation_folds.end(), fi) != s.validation_folds.end()) {
      s.validation.push_back(i);
    } else {
      s.train.push_back(i);
    }
  }
  if (s.validation_folds.empty()) s.validation = s.train;
  auto by_id = [&](std::size_t a, std::size_t b) { return records[a].patient_id < records[b].patient_id; };
  for (auto* v : {&s.train, &s.validation, &s.test}) std::sort(v->begin(), v->end(), by_id);
  require(!s.test.empty(), ErrorCode::EmptyDataset, "fold " + std::to_string(f) + " is empty");
  require(!s.train.empty(), ErrorCode::EmptyDataset, "no training records for fold " + std::to_string(f));
  return s;
}

/// Independent seed for one fold and purpose.
inline std::uint64_t fold_seed(std::uint64_t master, int fold, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(fold), purpose};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

struct CrossValidation {
  RunReport report;
  std::vector<nets::LUNetModel<float>> models;      ///< best-validation model per fold
  std::vector<PatientPredictions> predictions;      ///< held-out predictions, aligned with the records
};

using FoldProgress = std::function<void(int fold, std::size_t epoch, const LossParts& train, const LossParts& val)>;

/// Trains one model per fold on the remaining folds and evaluates it on the
/// held-out fold. Folds run in parallel; the pooled section is computed
/// over the concatenated held-out records.
inline CrossValidation cross_validate(std::span<const phantom::PatientRecord> records,
                                      const phantom::FoldAssignment& folds, const ExperimentConfig& config,
                                      const FoldProgress& progress = {}) {
  config.validate();
  require(!records.empty(), ErrorCode::EmptyDataset, "dataset is empty");
  const int k = static_cast<int>(folds.k);
  std::vector<FoldSplit> splits;
  for (int f = 0; f < k; ++f) splits.push_back(fold_split(records, folds, f, config.train.validation_folds));

  CrossValidation cv;
  cv.report.config = config;
  cv.report.bounds = bounds_from_references(records, config.eval.bounds_seed);
  cv.report.folds.resize(static_cast<std::size_t>(k));
  cv.models.resize(static_cast<std::size_t>(k));
  cv.predictions.resize(records.size());
  parallel_for(static_cast<std::size_t>(k), [&](std::size_t fi) {
    const int f = static_cast<int>(fi);
    const FoldSplit& s = splits[fi];
    auto model = nets::build_lunet<float>(config.model, fold_seed(config.train.seed, f, 0));
    const auto train_samples = collect_samples(records, s.train);
    const auto val_samples = collect_samples(records, s.validation);
    const auto train_ptrs = pointers(train_samples);
    const auto val_ptrs = pointers(val_samples);
    TrainConfig tc = config.train;
    tc.seed = fold_seed(config.train.seed, f, 1);
    TrainHooks hooks;
    if (progress) {
      hooks.on_epoch = [&](std::size_t e, const LossParts& t, const LossParts& v) { progress(f, e, t, v); };
    }
    LUNetTrainer trainer(model, config.train.loss);
    FoldReport fr;
    fr.fold = f;
    fr.validation_folds = s.validation_folds;
    fr.train_patients = s.train.size();
    fr.validation_patients = s.validation.size();
    fr.history = train<Sample>(trainer, std::span<const Sample* const>(train_ptrs),
                               std::span<const Sample* const>(val_ptrs), tc, hooks);
    model.set_trainable(false);

    std::vector<phantom::PatientRecord> held_out;
    for (std::size_t i : s.test) held_out.push_back(records[i]);
    auto ev = evaluate(LUNetPredictor(model, config.eval.teacher_forced), held_out, cv.report.bounds, config.eval);
    fr.evaluation = std::move(ev.section);
    for (std::size_t j = 0; j < s.test.size(); ++j) cv.predictions[s.test[j]] = std::move(ev.predictions[j]);
    cv.report.folds[fi] = std::move(fr);
    cv.models[fi] = std::move(model);
  });
  cv.report.pooled = pool_sections(cv.report.folds, config.model.margin);
  return cv;
}

}  // namespace lunetkit::harness
