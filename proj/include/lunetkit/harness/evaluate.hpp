#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "lunetkit/clinical/volumetry.hpp"
#include "lunetkit/harness/config.hpp"
#include "lunetkit/harness/samples.hpp"
#include "lunetkit/metrics/outliers.hpp"
#include "lunetkit/nets/lunet.hpp"
#include "lunetkit/parallel.hpp"

namespace lunetkit::harness {

using grid::BoundingBox;
using grid::Structure;

/// Predicted box (pixels) and full-size label map for one image.
struct Prediction {
  BoundingBox box;
  grid::LabelMask labels;
};

template <class P>
concept Predictor = requires(const P& p, std::span<const Sample* const> batch) {
  { p.predict(batch) } -> std::same_as<std::vector<Prediction>>;
  { p.margin() } -> std::convertible_to<double>;
};

/// LU-Net inference; optionally crops with the reference expanded box.
class LUNetPredictor {
 public:
  explicit LUNetPredictor(const nets::LUNetModel<float>& model, bool teacher_forced = false)
      : model_(&model), teacher_forced_(teacher_forced) {}

  double margin() const { return model_->config.margin; }

  std::vector<Prediction> predict(std::span<const Sample* const> batch) const {
    const Tensor<float> images = stack_images(batch);
    std::optional<Tensor<float>> teacher;
    if (teacher_forced_) teacher = reference_boxes(batch, margin());
    const auto p = nets::lunet_forward(*model_, images, teacher ? &*teacher : nullptr);
    std::vector<Prediction> out;
    for (std::size_t n = 0; n < batch.size(); ++n) {
      grid::LabelMask labels = p.label_maps[n];
      labels.set_spacing(batch[n]->mask.spacing());
      out.push_back({p.pixel_boxes[n], std::move(labels)});
    }
    return out;
  }

 private:
  const nets::LUNetModel<float>* model_;
  bool teacher_forced_;
};

/// Returns the reference masks and expanded reference boxes.
class ReferencePredictor {
 public:
  explicit ReferencePredictor(double margin) : margin_(margin) {}
  double margin() const { return margin_; }
  std::vector<Prediction> predict(std::span<const Sample* const> batch) const {
    std::vector<Prediction> out;
    for (const Sample* s : batch) out.push_back({reference_box(s->mask, margin_), s->mask});
    return out;
  }

 private:
  double margin_;
};

/// Per-image evaluation record.
struct CaseResult {
  std::string patient_id;
  View view = View::two_chamber;
  Instant instant = Instant::ed;
  BoundingBox predicted_box;
  BoundingBox reference_box;  ///< tight epicardial box expanded by the model margin
  double iou = 0.0;
  grid::BoxErrors errors;
  bool bb_out = false;  ///< predicted box misses part of the epicardial region
  std::optional<metrics::CaseScores> endo, epi;
  std::string failure;  ///< empty when scoring succeeded
  bool operator==(const CaseResult&) const = default;
};

/// Per-patient evaluation record.
struct PatientResult {
  std::string patient_id;
  metrics::OutlierFlags outliers;
  std::optional<clinical::PatientIndices> predicted;
  clinical::PatientIndices reference;  ///< biplane rule on the reference masks
  std::string failure;           ///< first unscorable image
  std::string clinical_failure;  ///< biplane rule failed on the predicted masks
  bool operator==(const PatientResult&) const = default;
};

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  ///< population standard deviation
  std::size_t n = 0;
  bool operator==(const MeanSd&) const = default;
};

inline MeanSd mean_sd(std::span<const double> v) {
  MeanSd out;
  out.n = v.size();
  if (v.empty()) return out;
  double sum = 0.0;
  for (double x : v) sum += x;
  out.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  out.sd = std::sqrt(ss / static_cast<double>(v.size()));
  return out;
}

inline double percent(std::size_t count, std::size_t total) {
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(count) / static_cast<double>(total);
}

struct LocalizationTable {
  double margin = 0.0;
  std::size_t cases = 0;
  MeanSd iou, e_xc, e_yc, e_h, e_w;
  std::size_t bb_out = 0;
  double bb_out_percent = 0.0;
  bool operator==(const LocalizationTable&) const = default;
};

struct SegmentationRow {
  std::string phase;  ///< "ED", "ES" or "ED+ES"
  Structure structure = Structure::endo;
  MeanSd dice, dm_mm, dh_mm;
  bool operator==(const SegmentationRow&) const = default;
};

struct OutlierTable {
  std::size_t patients = 0;
  std::size_t geometric = 0, anatomical = 0, both = 0;
  double geometric_percent = 0.0, anatomical_percent = 0.0, both_percent = 0.0;
  std::size_t failures = 0;  ///< patients with an unscorable prediction, counted in every column
  bool operator==(const OutlierTable&) const = default;
};

struct ClinicalRow {
  std::string index;  ///< "EDV", "ESV" or "EF"
  std::size_t n = 0;
  bool valid = false;  ///< false when agreement is undefined (fewer than 3 or constant values)
  clinical::AgreementStats stats;
  bool operator==(const ClinicalRow&) const = default;
};

/// Evaluation of one model on a set of patients: raw records plus the
/// localization, segmentation, outlier and clinical tables.
struct EvalSection {
  std::vector<CaseResult> cases;
  std::vector<PatientResult> patients;
  LocalizationTable localization;
  std::vector<SegmentationRow> segmentation;
  OutlierTable outliers;
  std::vector<ClinicalRow> clinical;
  std::size_t clinical_failures = 0;
  bool operator==(const EvalSection&) const = default;
};

/// Recomputes all tables from the raw records, sorted by patient id so the
/// result does not depend on record order.
inline void summarize(EvalSection& e, double margin) {
  auto case_key = [](const CaseResult& c) {
    return std::tuple(c.patient_id, static_cast<int>(c.view), static_cast<int>(c.instant));
  };
  std::sort(e.cases.begin(), e.cases.end(),
            [&](const CaseResult& a, const CaseResult& b) { return case_key(a) < case_key(b); });
  std::sort(e.patients.begin(), e.patients.end(),
            [](const PatientResult& a, const PatientResult& b) { return a.patient_id < b.patient_id; });

  auto& loc = e.localization;
  loc = {};
  loc.margin = margin;
  loc.cases = e.cases.size();
  std::vector<double> iou, xc, yc, h, w;
  for (const auto& c : e.cases) {
    iou.push_back(c.iou);
    xc.push_back(c.errors.e_xc);
    yc.push_back(c.errors.e_yc);
    h.push_back(c.errors.e_h);
    w.push_back(c.errors.e_w);
    loc.bb_out += c.bb_out ? 1 : 0;
  }
  loc.iou = mean_sd(iou);
  loc.e_xc = mean_sd(xc);
  loc.e_yc = mean_sd(yc);
  loc.e_h = mean_sd(h);
  loc.e_w = mean_sd(w);
  loc.bb_out_percent = percent(loc.bb_out, loc.cases);

  e.segmentation.clear();
  for (const std::string phase : {"ED", "ES", "ED+ES"}) {
    for (Structure s : grid::kStructures) {
      std::vector<double> d, dm, dh;
      for (const auto& c : e.cases) {
        const bool in_phase = phase == "ED+ES" || grid::to_string(c.instant) == phase;
        const auto& sc = s == Structure::endo ? c.endo : c.epi;
        if (!in_phase || !sc) continue;
        d.push_back(sc->dice);
        dm.push_back(sc->dm_mm);
        dh.push_back(sc->dh_mm);
      }
      e.segmentation.push_back({phase, s, mean_sd(d), mean_sd(dm), mean_sd(dh)});
    }
  }

  auto& out = e.outliers;
  out = {};
  out.patients = e.patients.size();
  for (const auto& p : e.patients) {
    out.geometric += p.outliers.geometric ? 1 : 0;
    out.anatomical += p.outliers.anatomical ? 1 : 0;
    out.both += p.outliers.both ? 1 : 0;
    out.failures += p.failure.empty() ? 0 : 1;
  }
  out.geometric_percent = percent(out.geometric, out.patients);
  out.anatomical_percent = percent(out.anatomical, out.patients);
  out.both_percent = percent(out.both, out.patients);

  e.clinical.clear();
  e.clinical_failures = 0;
  std::array<std::vector<double>, 3> pred, ref;
  for (const auto& p : e.patients) {
    if (!p.predicted) {
      ++e.clinical_failures;
      continue;
    }
    pred[0].push_back(p.predicted->edv);
    pred[1].push_back(p.predicted->esv);
    pred[2].push_back(p.predicted->ef);
    ref[0].push_back(p.reference.edv);
    ref[1].push_back(p.reference.esv);
    ref[2].push_back(p.reference.ef);
  }
  const std::array<const char*, 3> names{"EDV", "ESV", "EF"};
  for (std::size_t k = 0; k < 3; ++k) {
    ClinicalRow row{names[k], pred[k].size(), false, {}};
    try {
      row.stats = clinical::agreement_stats(pred[k], ref[k]);
      row.valid = true;
    } catch (const Error&) {
      row.valid = false;
    }
    e.clinical.push_back(row);
  }
}

/// Per-patient predictions in sample order (2CH ED, 2CH ES, 4CH ED, 4CH ES).
using PatientPredictions = std::array<Prediction, 4>;

struct EvaluationOutput {
  EvalSection section;
  std::vector<PatientPredictions> predictions;  ///< aligned with the input records
};

/// Runs the predictor on every image of every record (fanned out per
/// record) and scores it. Scoring failures are recorded on the case and
/// the patient, which then counts as an outlier of every kind.
template <Predictor P>
EvaluationOutput evaluate(const P& predictor, std::span<const phantom::PatientRecord> records,
                          const metrics::OutlierBounds& bounds, const EvalConfig& config = {}) {
  require(!records.empty(), ErrorCode::EmptyDataset, "evaluation set is empty");
  bounds.validate();
  config.validate();
  const double margin = predictor.margin();
  EvaluationOutput out;
  out.predictions.resize(records.size());
  std::vector<std::array<CaseResult, 4>> cases(records.size());
  std::vector<PatientResult> patients(records.size());
  parallel_for(records.size(), [&](std::size_t r) {
    const std::array<std::size_t, 1> idx{r};
    const auto samples = collect_samples(records, idx);
    const auto ptrs = pointers(samples);
    auto preds = predictor.predict(ptrs);
    require(preds.size() == 4, ErrorCode::ShapeMismatch, "predictor returned the wrong count");
    PatientResult& patient = patients[r];
    patient.patient_id = records[r].patient_id;
    std::vector<metrics::CaseScores> scores;
    for (std::size_t k = 0; k < 4; ++k) {
      const Sample& s = samples[k];
      const Prediction& p = preds[k];
      CaseResult& c = cases[r][k];
      c.patient_id = s.patient_id;
      c.view = s.view;
      c.instant = s.instant;
      c.predicted_box = p.box;
      c.reference_box = reference_box(s.mask, margin);
      c.iou = grid::iou(p.box, c.reference_box);
      c.errors = grid::bbox_errors(p.box, c.reference_box, s.mask.spacing());
      c.bb_out = !grid::encompasses(p.box, s.mask, Structure::epi);
      try {
        c.endo = metrics::score_case(p.labels, s.mask, s.view, s.instant, Structure::endo);
        c.epi = metrics::score_case(p.labels, s.mask, s.view, s.instant, Structure::epi);
        scores.push_back(*c.endo);
        scores.push_back(*c.epi);
      } catch (const Error& e) {
        c.failure = std::string(lunetkit::to_string(e.code())) + ": " + e.what();
        if (patient.failure.empty()) {
          patient.failure = grid::to_string(s.view) + "_" + grid::to_string(s.instant) + " " + c.failure;
        }
      }
    }
    if (patient.failure.empty()) {
      patient.outliers = metrics::classify_outliers(scores, bounds);
    } else {
      patient.outliers = {true, true, true};
    }
    const auto& rec = records[r];
    patient.reference = clinical::patient_indices(
        rec.at(View::two_chamber, Instant::ed).mask, rec.at(View::four_chamber, Instant::ed).mask,
        rec.at(View::two_chamber, Instant::es).mask, rec.at(View::four_chamber, Instant::es).mask,
        config.n_discs);
    try {
      patient.predicted = clinical::patient_indices(preds[0].labels, preds[2].labels, preds[1].labels,
                                                    preds[3].labels, config.n_discs);
    } catch (const Error& e) {
      patient.clinical_failure = std::string(lunetkit::to_string(e.code())) + ": " + e.what();
    }
    for (std::size_t k = 0; k < 4; ++k) out.predictions[r][k] = std::move(preds[k]);
  });
  for (std::size_t r = 0; r < records.size(); ++r) {
    for (auto& c : cases[r]) out.section.cases.push_back(std::move(c));
    out.section.patients.push_back(std::move(patients[r]));
  }
  summarize(out.section, margin);
  return out;
}

/// Outlier bounds derived from the reference masks of the given records.
inline metrics::OutlierBounds bounds_from_references(std::span<const phantom::PatientRecord> records,
                                                     std::uint64_t seed) {
  std::vector<grid::LabelMask> refs;
  for (const auto& r : records) {
    for (const auto& s : r.samples) refs.push_back(s.mask);
  }
  return metrics::derive_outlier_bounds(refs, seed);
}

}  // namespace lunetkit::harness
