#pragma once

#include <algorithm>
#include <cstdio>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lunetkit/metrics/segmentation.hpp"

namespace lunetkit::metrics {

using grid::Instant;
using grid::View;

/// Scores of one predicted structure against its reference.
struct CaseScores {
  View view = View::two_chamber;
  Instant instant = Instant::ed;
  Structure structure = Structure::endo;
  double dice = 0.0;
  double dm_mm = 0.0;
  double dh_mm = 0.0;
  double simplicity = 1.0;  ///< of the predicted region
  double convexity = 1.0;   ///< of the predicted region
  bool operator==(const CaseScores&) const = default;
};

/// Scores a predicted mask against a reference for one structure.
inline CaseScores score_case(const LabelMask& pred, const LabelMask& ref, View view,
                             Instant instant, Structure s) {
  require_same_grid(pred, ref);
  CaseScores out{view, instant, s};
  out.dice = dice(pred, ref, s);
  const auto cp = grid::mask_to_contour(pred, s);
  const auto cr = grid::mask_to_contour(ref, s);
  out.dm_mm = mean_absolute_distance(cp, cr);
  out.dh_mm = hausdorff(cp, cr);
  const auto shape = shape_descriptors(pred, s);
  out.simplicity = shape.simplicity;
  out.convexity = shape.convexity;
  return out;
}

struct StructureBounds {
  double dm_max = 0.0;          ///< mm
  double dh_max = 0.0;          ///< mm
  double simplicity_min = 0.0;  ///< in (0,1)
  double convexity_min = 0.0;   ///< in (0,1)
  bool operator==(const StructureBounds&) const = default;
};

struct OutlierBounds {
  StructureBounds endo;
  StructureBounds epi;

  const StructureBounds& operator[](Structure s) const { return s == Structure::endo ? endo : epi; }
  StructureBounds& operator[](Structure s) { return s == Structure::endo ? endo : epi; }

  void validate() const {
    for (const auto* b : {&endo, &epi}) {
      require(b->dm_max > 0.0 && b->dh_max > 0.0, ErrorCode::InvalidConfig,
              "distance bounds must be positive");
      require(b->simplicity_min > 0.0 && b->simplicity_min < 1.0 && b->convexity_min > 0.0 &&
                  b->convexity_min < 1.0,
              ErrorCode::InvalidConfig, "shape thresholds must lie in (0,1)");
    }
  }
  bool operator==(const OutlierBounds&) const = default;
};

struct OutlierFlags {
  bool geometric = false;
  bool anatomical = false;
  bool both = false;
  bool operator==(const OutlierFlags&) const = default;
};

inline bool geometric_violation(const CaseScores& s, const OutlierBounds& b) {
  return s.dm_mm > b[s.structure].dm_max || s.dh_mm > b[s.structure].dh_max;
}

inline bool anatomical_violation(const CaseScores& s, const OutlierBounds& b) {
  return s.simplicity < b[s.structure].simplicity_min || s.convexity < b[s.structure].convexity_min;
}

/// Patient-level flags over the 8 structure scores (2 views x 2 instants x
/// endo/epi); each combination must appear exactly once.
inline OutlierFlags classify_outliers(std::span<const CaseScores> scores, const OutlierBounds& bounds) {
  std::array<int, 8> seen{};
  for (const auto& s : scores) {
    const std::size_t k = static_cast<std::size_t>(s.view) * 4 +
                          static_cast<std::size_t>(s.instant) * 2 +
                          static_cast<std::size_t>(s.structure);
    ++seen[k];
  }
  require(std::all_of(seen.begin(), seen.end(), [](int n) { return n == 1; }),
          ErrorCode::IncompleteScores, "patient needs exactly one score per view, instant and structure");
  OutlierFlags f;
  for (const auto& s : scores) {
    f.geometric = f.geometric || geometric_violation(s, bounds);
    f.anatomical = f.anatomical || anatomical_violation(s, bounds);
  }
  f.both = f.geometric && f.anatomical;
  return f;
}

/// Lowest simplicity and convexity per structure over reference masks.
inline void set_anatomical_thresholds(OutlierBounds& bounds, std::span<const LabelMask> references) {
  require(!references.empty(), ErrorCode::EmptyDataset, "no reference masks");
  for (Structure s : grid::kStructures) {
    double smin = 1.0, cmin = 1.0;
    for (const auto& m : references) {
      const auto d = shape_descriptors(m, s);
      smin = std::min(smin, d.simplicity);
      cmin = std::min(cmin, d.convexity);
    }
    // keep thresholds strictly inside (0,1)
    bounds[s].simplicity_min = std::clamp(smin, 1e-6, 1.0 - 1e-6);
    bounds[s].convexity_min = std::clamp(cmin, 1e-6, 1.0 - 1e-6);
  }
}

/// Structure region translated by up to `amplitude` pixels per axis, then
/// dilated or eroded by one pixel (4-neighbourhood). Returned as a binary
/// mask with label 1.
inline LabelMask jitter_region(const LabelMask& mask, Structure s, int amplitude, std::mt19937_64& rng) {
  const auto h = static_cast<std::ptrdiff_t>(mask.height()), w = static_cast<std::ptrdiff_t>(mask.width());
  std::uniform_int_distribution<int> shift(-amplitude, amplitude);
  const int tr = shift(rng), tc = shift(rng);
  const bool dilate = (rng() & 1u) != 0;
  std::vector<std::uint8_t> moved(mask.labels().size(), 0);
  for (std::ptrdiff_t r = 0; r < h; ++r) {
    for (std::ptrdiff_t c = 0; c < w; ++c) {
      const std::ptrdiff_t sr = r - tr, sc = c - tc;
      if (sr >= 0 && sc >= 0 && sr < h && sc < w && mask.contains(s, sr, sc)) moved[r * w + c] = 1;
    }
  }
  LabelMask out(mask.height(), mask.width(), mask.spacing());
  for (std::ptrdiff_t r = 0; r < h; ++r) {
    for (std::ptrdiff_t c = 0; c < w; ++c) {
      auto at = [&](std::ptrdiff_t rr, std::ptrdiff_t cc) -> bool {
        return rr >= 0 && cc >= 0 && rr < h && cc < w && moved[rr * w + cc];
      };
      const bool self = at(r, c);
      const bool any = at(r - 1, c) || at(r + 1, c) || at(r, c - 1) || at(r, c + 1);
      const bool all = at(r - 1, c) && at(r + 1, c) && at(r, c - 1) && at(r, c + 1);
      const bool v = dilate ? (self || any) : (self && all);
      if (v) out.set(r, c, 1);
    }
  }
  if (out.count(Structure::endo) == 0) {
    for (std::ptrdiff_t k = 0; k < h * w; ++k) {
      if (moved[k]) out.set(k / w, k % w, 1);
    }
  }
  return out;
}

/// Largest d_m and d_H per structure between each reference and a jittered
/// copy of it, standing in for observer variability.
inline void set_geometric_bounds(OutlierBounds& bounds, std::span<const LabelMask> references,
                                 std::uint64_t seed, int amplitude = 2) {
  require(!references.empty(), ErrorCode::EmptyDataset, "no reference masks");
  std::mt19937_64 rng(seed);
  for (Structure s : grid::kStructures) {
    double dm = 0.0, dh = 0.0;
    for (const auto& m : references) {
      LabelMask region(m.height(), m.width(), m.spacing());
      for (std::size_t r = 0; r < m.height(); ++r) {
        for (std::size_t c = 0; c < m.width(); ++c) {
          if (m.contains(s, r, c)) region.set(r, c, 1);
        }
      }
      const auto jittered = jitter_region(m, s, amplitude, rng);
      const auto a = grid::mask_to_contour(region, Structure::endo);
      const auto b = grid::mask_to_contour(jittered, Structure::endo);
      dm = std::max(dm, mean_absolute_distance(a, b));
      dh = std::max(dh, hausdorff(a, b));
    }
    bounds[s].dm_max = std::max(dm, 1e-6);
    bounds[s].dh_max = std::max(dh, 1e-6);
  }
}

/// Default bounds for a set of reference annotations.
inline OutlierBounds derive_outlier_bounds(std::span<const LabelMask> references, std::uint64_t seed) {
  OutlierBounds b;
  set_geometric_bounds(b, references, seed);
  set_anatomical_thresholds(b, references);
  return b;
}

inline void to_json(nlohmann::json& j, const StructureBounds& b) {
  j = {{"dm_max_mm", b.dm_max},
       {"dh_max_mm", b.dh_max},
       {"simplicity_min", b.simplicity_min},
       {"convexity_min", b.convexity_min}};
}

inline void from_json(const nlohmann::json& j, StructureBounds& b) {
  b.dm_max = j.at("dm_max_mm").get<double>();
  b.dh_max = j.at("dh_max_mm").get<double>();
  b.simplicity_min = j.at("simplicity_min").get<double>();
  b.convexity_min = j.at("convexity_min").get<double>();
}

inline void to_json(nlohmann::json& j, const OutlierBounds& b) { j = {{"endo", b.endo}, {"epi", b.epi}}; }

inline void from_json(const nlohmann::json& j, OutlierBounds& b) {
  b.endo = j.at("endo").get<StructureBounds>();
  b.epi = j.at("epi").get<StructureBounds>();
}

inline const char* kScoresCsvHeader =
    "patient_id,view,instant,structure,dice,dm_mm,dh_mm,simplicity,convexity,geo_outlier,ana_outlier";

/// One CSV row; the outlier columns are the patient-level flags.
inline std::string scores_csv_row(const std::string& patient_id, const CaseScores& s,
                                  const OutlierFlags& flags) {
  char buf[256];
  std::snprintf(buf, sizeof buf, ",%s,%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%d,%d",
                grid::to_string(s.view).c_str(), grid::to_string(s.instant).c_str(),
                grid::to_string(s.structure).c_str(), s.dice, s.dm_mm, s.dh_mm, s.simplicity,
                s.convexity, flags.geometric ? 1 : 0, flags.anatomical ? 1 : 0);
  return patient_id + buf;
}

}  // namespace lunetkit::metrics
