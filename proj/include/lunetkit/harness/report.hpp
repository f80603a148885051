#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lunetkit/grid/io.hpp"
#include "lunetkit/harness/evaluate.hpp"
#include "lunetkit/harness/train.hpp"

namespace lunetkit::harness {

using nlohmann::json;

struct FoldReport {
  int fold = 0;
  std::vector<int> validation_folds;
  std::size_t train_patients = 0;
  std::size_t validation_patients = 0;
  TrainHistory history;
  EvalSection evaluation;
  bool operator==(const FoldReport&) const = default;
};

/// Per-fold training and evaluation plus the pooled held-out evaluation.
struct RunReport {
  std::string dataset;
  ExperimentConfig config;
  metrics::OutlierBounds bounds;
  std::vector<FoldReport> folds;
  EvalSection pooled;
  bool operator==(const RunReport&) const = default;
};

/// Pools held-out records of all folds and recomputes the tables.
inline EvalSection pool_sections(std::span<const FoldReport> folds, double margin) {
  EvalSection pooled;
  for (const auto& f : folds) {
    pooled.cases.insert(pooled.cases.end(), f.evaluation.cases.begin(), f.evaluation.cases.end());
    pooled.patients.insert(pooled.patients.end(), f.evaluation.patients.begin(),
                           f.evaluation.patients.end());
  }
  summarize(pooled, margin);
  return pooled;
}

// JSON. Enumerations are written as their display strings.

namespace detail {

inline json scores_json(const metrics::CaseScores& s) {
  return {{"dice", s.dice},
          {"dm_mm", s.dm_mm},
          {"dh_mm", s.dh_mm},
          {"simplicity", s.simplicity},
          {"convexity", s.convexity}};
}

inline metrics::CaseScores scores_from(const json& j, View v, Instant i, Structure s) {
  return {v,
          i,
          s,
          j.at("dice").get<double>(),
          j.at("dm_mm").get<double>(),
          j.at("dh_mm").get<double>(),
          j.at("simplicity").get<double>(),
          j.at("convexity").get<double>()};
}

inline json indices_json(const clinical::PatientIndices& p) {
  return {{"edv", p.edv}, {"esv", p.esv}, {"ef", p.ef}};
}

inline clinical::PatientIndices indices_from(const json& j) {
  return {j.at("edv").get<double>(), j.at("esv").get<double>(), j.at("ef").get<double>()};
}

inline json mean_sd_json(const MeanSd& m) { return {{"mean", m.mean}, {"sd", m.sd}, {"n", m.n}}; }

inline MeanSd mean_sd_from(const json& j) {
  return {j.at("mean").get<double>(), j.at("sd").get<double>(), j.at("n").get<std::size_t>()};
}

}  // namespace detail

inline void to_json(json& j, const CaseResult& c) {
  j = {{"patient_id", c.patient_id},
       {"view", grid::to_string(c.view)},
       {"instant", grid::to_string(c.instant)},
       {"predicted_box", grid::bbox_to_json(c.predicted_box)},
       {"reference_box", grid::bbox_to_json(c.reference_box)},
       {"iou", c.iou},
       {"errors_mm", {c.errors.e_xc, c.errors.e_yc, c.errors.e_h, c.errors.e_w}},
       {"bb_out", c.bb_out},
       {"endo", c.endo ? detail::scores_json(*c.endo) : json(nullptr)},
       {"epi", c.epi ? detail::scores_json(*c.epi) : json(nullptr)},
       {"failure", c.failure}};
}

inline void from_json(const json& j, CaseResult& c) {
  c.patient_id = j.at("patient_id").get<std::string>();
  c.view = grid::view_from_string(j.at("view").get<std::string>());
  c.instant = grid::instant_from_string(j.at("instant").get<std::string>());
  c.predicted_box = grid::bbox_from_json(j.at("predicted_box"));
  c.reference_box = grid::bbox_from_json(j.at("reference_box"));
  c.iou = j.at("iou").get<double>();
  const auto& e = j.at("errors_mm");
  c.errors = {e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<double>(), e.at(3).get<double>()};
  c.bb_out = j.at("bb_out").get<bool>();
  c.endo.reset();
  c.epi.reset();
  if (!j.at("endo").is_null()) c.endo = detail::scores_from(j.at("endo"), c.view, c.instant, Structure::endo);
  if (!j.at("epi").is_null()) c.epi = detail::scores_from(j.at("epi"), c.view, c.instant, Structure::epi);
  c.failure = j.at("failure").get<std::string>();
}

inline void to_json(json& j, const PatientResult& p) {
  j = {{"patient_id", p.patient_id},
       {"geometric_outlier", p.outliers.geometric},
       {"anatomical_outlier", p.outliers.anatomical},
       {"both_outlier", p.outliers.both},
       {"predicted", p.predicted ? detail::indices_json(*p.predicted) : json(nullptr)},
       {"reference", detail::indices_json(p.reference)},
       {"failure", p.failure},
       {"clinical_failure", p.clinical_failure}};
}

inline void from_json(const json& j, PatientResult& p) {
  p.patient_id = j.at("patient_id").get<std::string>();
  p.outliers = {j.at("geometric_outlier").get<bool>(), j.at("anatomical_outlier").get<bool>(),
                j.at("both_outlier").get<bool>()};
  p.predicted.reset();
  if (!j.at("predicted").is_null()) p.predicted = detail::indices_from(j.at("predicted"));
  p.reference = detail::indices_from(j.at("reference"));
  p.failure = j.at("failure").get<std::string>();
  p.clinical_failure = j.at("clinical_failure").get<std::string>();
}

inline json tables_json(const EvalSection& e) {
  const auto& l = e.localization;
  json loc = {{"margin", l.margin},
              {"cases", l.cases},
              {"iou", detail::mean_sd_json(l.iou)},
              {"e_xc_mm", detail::mean_sd_json(l.e_xc)},
              {"e_yc_mm", detail::mean_sd_json(l.e_yc)},
              {"e_h_mm", detail::mean_sd_json(l.e_h)},
              {"e_w_mm", detail::mean_sd_json(l.e_w)},
              {"bb_out", l.bb_out},
              {"bb_out_percent", l.bb_out_percent}};
  json seg = json::array();
  for (const auto& r : e.segmentation) {
    seg.push_back({{"phase", r.phase},
                   {"structure", grid::to_string(r.structure)},
                   {"dice", detail::mean_sd_json(r.dice)},
                   {"dm_mm", detail::mean_sd_json(r.dm_mm)},
                   {"dh_mm", detail::mean_sd_json(r.dh_mm)}});
  }
  const auto& o = e.outliers;
  json out = {{"patients", o.patients},
              {"geometric", o.geometric},
              {"anatomical", o.anatomical},
              {"both", o.both},
              {"geometric_percent", o.geometric_percent},
              {"anatomical_percent", o.anatomical_percent},
              {"both_percent", o.both_percent},
              {"failures", o.failures}};
  json clin = json::array();
  for (const auto& c : e.clinical) {
    clin.push_back({{"index", c.index},
                    {"n", c.n},
                    {"valid", c.valid},
                    {"corr", c.stats.corr},
                    {"bias", c.stats.bias},
                    {"loa", c.stats.loa},
                    {"mae", c.stats.mae}});
  }
  return {{"localization", loc},
          {"segmentation", seg},
          {"outliers", out},
          {"clinical", clin},
          {"clinical_failures", e.clinical_failures}};
}

inline void to_json(json& j, const EvalSection& e) {
  j = tables_json(e);
  j["cases"] = e.cases;
  j["patients"] = e.patients;
}

inline void from_json(const json& j, EvalSection& e) {
  e.cases = j.at("cases").get<std::vector<CaseResult>>();
  e.patients = j.at("patients").get<std::vector<PatientResult>>();
  const auto& l = j.at("localization");
  e.localization = {l.at("margin").get<double>(),        l.at("cases").get<std::size_t>(),
                    detail::mean_sd_from(l.at("iou")),   detail::mean_sd_from(l.at("e_xc_mm")),
                    detail::mean_sd_from(l.at("e_yc_mm")), detail::mean_sd_from(l.at("e_h_mm")),
                    detail::mean_sd_from(l.at("e_w_mm")), l.at("bb_out").get<std::size_t>(),
                    l.at("bb_out_percent").get<double>()};
  e.segmentation.clear();
  for (const auto& r : j.at("segmentation")) {
    e.segmentation.push_back({r.at("phase").get<std::string>(),
                              grid::structure_from_string(r.at("structure").get<std::string>()),
                              detail::mean_sd_from(r.at("dice")), detail::mean_sd_from(r.at("dm_mm")),
                              detail::mean_sd_from(r.at("dh_mm"))});
  }
  const auto& o = j.at("outliers");
  e.outliers = {o.at("patients").get<std::size_t>(),
                o.at("geometric").get<std::size_t>(),
                o.at("anatomical").get<std::size_t>(),
                o.at("both").get<std::size_t>(),
                o.at("geometric_percent").get<double>(),
                o.at("anatomical_percent").get<double>(),
                o.at("both_percent").get<double>(),
                o.at("failures").get<std::size_t>()};
  e.clinical.clear();
  for (const auto& c : j.at("clinical")) {
    e.clinical.push_back({c.at("index").get<std::string>(),
                          c.at("n").get<std::size_t>(),
                          c.at("valid").get<bool>(),
                          {c.at("corr").get<double>(), c.at("bias").get<double>(),
                           c.at("loa").get<double>(), c.at("mae").get<double>()}});
  }
  e.clinical_failures = j.at("clinical_failures").get<std::size_t>();
}

inline void to_json(json& j, const FoldReport& f) {
  j = {{"fold", f.fold},
       {"validation_folds", f.validation_folds},
       {"train_patients", f.train_patients},
       {"validation_patients", f.validation_patients},
       {"history", f.history},
       {"evaluation", f.evaluation}};
}

inline void from_json(const json& j, FoldReport& f) {
  f.fold = j.at("fold").get<int>();
  f.validation_folds = j.at("validation_folds").get<std::vector<int>>();
  f.train_patients = j.at("train_patients").get<std::size_t>();
  f.validation_patients = j.at("validation_patients").get<std::size_t>();
  f.history = j.at("history").get<TrainHistory>();
  f.evaluation = j.at("evaluation").get<EvalSection>();
}

inline void to_json(json& j, const RunReport& r) {
  j = {{"dataset", r.dataset},
       {"config", r.config},
       {"bounds", r.bounds},
       {"folds", r.folds},
       {"pooled", r.pooled}};
}

inline void from_json(const json& j, RunReport& r) {
  r.dataset = j.at("dataset").get<std::string>();
  r.config = j.at("config").get<ExperimentConfig>();
  r.bounds = j.at("bounds").get<metrics::OutlierBounds>();
  r.folds = j.at("folds").get<std::vector<FoldReport>>();
  r.pooled = j.at("pooled").get<EvalSection>();
}

inline RunReport read_report(const std::filesystem::path& path) {
  const json j = grid::read_json(path);
  try {
    return j.get<RunReport>();
  } catch (const json::exception& e) {
    fail(ErrorCode::IoFailure, "malformed report " + path.string() + ": " + e.what());
  }
}

/// Published full-scale values, written next to the desk-scale tables as
/// annotations only.
inline json published_reference() {
  const char* note = "full-scale CAMUS reference, not asserted";
  return {{"note", note},
          {"localization", {{"model", "U-L2-mu-m5"}, {"iou", 0.898}, {"bb_out_percent", 36.0}}},
          {"localization_m15", {{"model", "U-L2-mu-m15"}, {"iou", 0.907}, {"bb_out_percent", 2.0}}},
          {"segmentation",
           {{"model", "LU-Net-m5"},
            {"endo", {{"dice", 0.953}, {"dm_mm", 1.7}, {"dh_mm", 5.5}}},
            {"epi", {{"dice", 0.932}, {"dm_mm", 1.5}, {"dh_mm", 5.1}}},
            {"geometric_outlier_percent", 11.0}}},
          {"clinical",
           {{"model", "LU-Net-m5"},
            {"EDV", {{"corr", 0.956}, {"bias", 1.4}, {"loa", 21.8}, {"mae", 8.3}}},
            {"ESV", {{"corr", 0.956}, {"bias", 1.6}, {"loa", 18.0}, {"mae", 7.0}}},
            {"EF", {{"corr", 0.829}, {"bias", -1.5}, {"loa", 13.5}, {"mae", 5.0}}}}}};
}

/// Image, reference, prediction and box of one view for overlay drawing.
struct OverlayView {
  grid::ImageGrid image;
  grid::LabelMask reference;
  grid::LabelMask prediction;
  BoundingBox box;
};

struct PatientOverlay {
  std::string patient_id;
  std::array<OverlayView, 4> views;  ///< 2CH ED, 2CH ES, 4CH ED, 4CH ES
};

namespace detail {

inline bool on_border(const grid::LabelMask& m, Structure s, std::size_t r, std::size_t c) {
  if (!m.contains(s, r, c)) return false;
  if (r == 0 || c == 0 || r + 1 == m.height() || c + 1 == m.width()) return true;
  return !m.contains(s, r - 1, c) || !m.contains(s, r + 1, c) || !m.contains(s, r, c - 1) ||
         !m.contains(s, r, c + 1);
}

/// 2x2 tiles: grey image, reference contours green, predicted contours
/// red, predicted box yellow.
inline void write_overlay(const std::filesystem::path& path, const PatientOverlay& o) {
  const std::size_t h = o.views[0].image.height(), w = o.views[0].image.width();
  std::vector<std::uint8_t> rgb(4 * h * w * 3, 0);
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& v = o.views[k];
    require(v.image.height() == h && v.image.width() == w && v.reference.height() == h &&
                v.prediction.height() == h && v.reference.width() == w && v.prediction.width() == w,
            ErrorCode::ShapeMismatch, "overlay inputs differ in size");
    const std::size_t r0 = (k % 2) * h, c0 = (k / 2) * w;
    auto put = [&](std::size_t r, std::size_t c, std::uint8_t R, std::uint8_t G, std::uint8_t B) {
      std::uint8_t* px = rgb.data() + ((r0 + r) * 2 * w + c0 + c) * 3;
      px[0] = R;
      px[1] = G;
      px[2] = B;
    };
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const auto g = static_cast<std::uint8_t>(std::lround(std::clamp(v.image.at(r, c), 0.0f, 1.0f) * 255.0f));
        put(r, c, g, g, g);
      }
    }
    const auto& b = v.box;
    const auto rmin = static_cast<std::size_t>(std::clamp(b.x_min, 0.0, double(h - 1)));
    const auto rmax = static_cast<std::size_t>(std::clamp(std::ceil(b.x_max) - 1, 0.0, double(h - 1)));
    const auto cmin = static_cast<std::size_t>(std::clamp(b.y_min, 0.0, double(w - 1)));
    const auto cmax = static_cast<std::size_t>(std::clamp(std::ceil(b.y_max) - 1, 0.0, double(w - 1)));
    if (b.height() > 0.0 && b.width() > 0.0) {
      for (std::size_t r = rmin; r <= rmax; ++r) {
        put(r, cmin, 255, 220, 0);
        put(r, cmax, 255, 220, 0);
      }
      for (std::size_t c = cmin; c <= cmax; ++c) {
        put(rmin, c, 255, 220, 0);
        put(rmax, c, 255, 220, 0);
      }
    }
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        for (Structure s : grid::kStructures) {
          if (on_border(v.reference, s, r, c)) put(r, c, 0, 220, 0);
          if (on_border(v.prediction, s, r, c)) put(r, c, 230, 30, 30);
        }
      }
    }
  }
  grid::write_rgb_png(path, 2 * h, 2 * w, rgb);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), ErrorCode::IoFailure, "write failed for " + path.string());
}

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string pm(const MeanSd& m, const char* f = "%.3f") {
  return fmt(f, m.mean) + " ± " + fmt(f, m.sd);
}

inline std::string markdown_tables(const std::string& title, const EvalSection& e) {
  std::ostringstream md;
  const auto& l = e.localization;
  md << "## " << title << "\n\n";
  md << "### Localization (margin " << fmt("%.2f", l.margin) << ")\n\n";
  md << "| IOU | e_xc (mm) | e_yc (mm) | e_h (mm) | e_w (mm) | BB out |\n|---|---|---|---|---|---|\n";
  md << "| " << pm(l.iou) << " | " << pm(l.e_xc, "%.2f") << " | " << pm(l.e_yc, "%.2f") << " | "
     << pm(l.e_h, "%.2f") << " | " << pm(l.e_w, "%.2f") << " | " << l.bb_out << " ("
     << fmt("%.1f", l.bb_out_percent) << "%) |\n\n";
  md << "### Segmentation\n\n| phase | structure | Dice | d_m (mm) | d_H (mm) |\n|---|---|---|---|---|\n";
  for (const auto& r : e.segmentation) {
    md << "| " << r.phase << " | " << grid::to_string(r.structure) << " | " << pm(r.dice) << " | "
       << pm(r.dm_mm, "%.2f") << " | " << pm(r.dh_mm, "%.2f") << " |\n";
  }
  const auto& o = e.outliers;
  md << "\n### Outliers (" << o.patients << " patients, " << o.failures << " failures)\n\n";
  md << "| geometric | anatomical | both |\n|---|---|---|\n";
  md << "| " << o.geometric << " (" << fmt("%.1f", o.geometric_percent) << "%) | " << o.anatomical << " ("
     << fmt("%.1f", o.anatomical_percent) << "%) | " << o.both << " (" << fmt("%.1f", o.both_percent)
     << "%) |\n\n";
  md << "### Clinical indices\n\n| index | n | corr | bias ± loa | mae |\n|---|---|---|---|---|\n";
  for (const auto& c : e.clinical) {
    if (!c.valid) {
      md << "| " << c.index << " | " << c.n << " | n/a | n/a | n/a |\n";
      continue;
    }
    md << "| " << c.index << " | " << c.n << " | " << fmt("%.3f", c.stats.corr) << " | "
       << fmt("%.2f", c.stats.bias) << " ± " << fmt("%.2f", c.stats.loa) << " | "
       << fmt("%.2f", c.stats.mae) << " |\n";
  }
  md << "\n";
  return md.str();
}

}  // namespace detail

/// Writes report.json, summary.json, scores.csv, localization.csv,
/// clinical.csv, tables.md and one overlay PNG per patient.
inline void render_report(const RunReport& report, const std::filesystem::path& out,
                          std::span<const PatientOverlay> overlays) {
  const auto& pooled = report.pooled;
  require(!pooled.patients.empty() && !pooled.cases.empty(), ErrorCode::EmptyDataset,
          "report has no evaluated records");
  require(overlays.size() == pooled.patients.size(), ErrorCode::IoFailure,
          "overlay inputs do not match the evaluated patients");
  std::error_code ec;
  std::filesystem::create_directories(out / "overlays", ec);
  require(!ec, ErrorCode::IoFailure, "cannot create " + out.string());

  grid::write_json(out / "report.json", report);

  json folds = json::array();
  for (const auto& f : report.folds) {
    folds.push_back({{"fold", f.fold},
                     {"best_epoch", f.history.best_epoch},
                     {"stopped_epoch", f.history.stopped_epoch},
                     {"tables", tables_json(f.evaluation)}});
  }
  grid::write_json(out / "summary.json",
                   {{"pooled", tables_json(pooled)}, {"folds", folds}, {"published", published_reference()}});

  std::map<std::string, const PatientResult*> by_patient;
  for (const auto& p : pooled.patients) by_patient[p.patient_id] = &p;

  std::string scores = std::string(metrics::kScoresCsvHeader) + "\n";
  std::string loc = "patient_id,view,instant,pred_x_min,pred_x_max,pred_y_min,pred_y_max,ref_x_min,"
                    "ref_x_max,ref_y_min,ref_y_max,iou,e_xc_mm,e_yc_mm,e_h_mm,e_w_mm,bb_out\n";
  for (const auto& c : pooled.cases) {
    const auto flags = by_patient.at(c.patient_id)->outliers;
    for (const auto& sc : {c.endo, c.epi}) {
      if (sc) scores += metrics::scores_csv_row(c.patient_id, *sc, flags) + "\n";
    }
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.6f,%.4f,%.4f,%.4f,%.4f,%d\n",
                  c.patient_id.c_str(), grid::to_string(c.view).c_str(), grid::to_string(c.instant).c_str(),
                  c.predicted_box.x_min, c.predicted_box.x_max, c.predicted_box.y_min, c.predicted_box.y_max,
                  c.reference_box.x_min, c.reference_box.x_max, c.reference_box.y_min, c.reference_box.y_max,
                  c.iou, c.errors.e_xc, c.errors.e_yc, c.errors.e_h, c.errors.e_w, c.bb_out ? 1 : 0);
    loc += buf;
  }
  detail::write_text(out / "scores.csv", scores);
  detail::write_text(out / "localization.csv", loc);

  std::string clin = "patient_id,edv_pred,edv_ref,esv_pred,esv_ref,ef_pred,ef_ref\n";
  for (const auto& p : pooled.patients) {
    char buf[256];
    if (p.predicted) {
      std::snprintf(buf, sizeof buf, "%s,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n", p.patient_id.c_str(), p.predicted->edv,
                    p.reference.edv, p.predicted->esv, p.reference.esv, p.predicted->ef, p.reference.ef);
    } else {
      std::snprintf(buf, sizeof buf, "%s,,%.4f,,%.4f,,%.4f\n", p.patient_id.c_str(), p.reference.edv,
                    p.reference.esv, p.reference.ef);
    }
    clin += buf;
  }
  detail::write_text(out / "clinical.csv", clin);

  std::string md = "# Evaluation report\n\n" + detail::markdown_tables("Pooled held-out evaluation", pooled);
  for (const auto& f : report.folds) {
    md += detail::markdown_tables("Fold " + std::to_string(f.fold) + " (best epoch " +
                                      std::to_string(f.history.best_epoch) + ")",
                                  f.evaluation);
  }
  md += "## Published full-scale values\n\nFull-scale CAMUS reference, not asserted.\n\n";
  md += "| quantity | value |\n|---|---|\n";
  md += "| U-L2-mu-m5 IOU | 0.898 |\n| U-L2-mu-m15 IOU | 0.907 |\n";
  md += "| LU-Net-m5 endo d_m / d_H (mm) | 1.7 / 5.5 |\n| LU-Net-m5 epi d_m / d_H (mm) | 1.5 / 5.1 |\n";
  md += "| LU-Net-m5 geometric outliers | 11% |\n";
  md += "| LU-Net-m5 EDV / ESV / EF corr | 0.956 / 0.956 / 0.829 |\n| LU-Net-m5 EF mae | 5.0% |\n";
  detail::write_text(out / "tables.md", md);

  for (const auto& o : overlays) {
    require(by_patient.count(o.patient_id) == 1, ErrorCode::IoFailure,
            "overlay for unknown patient " + o.patient_id);
    detail::write_overlay(out / "overlays" / (o.patient_id + ".png"), o);
  }
}

}  // namespace lunetkit::harness
