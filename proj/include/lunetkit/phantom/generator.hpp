#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "lunetkit/clinical/volumetry.hpp"
#include "lunetkit/grid/bbox.hpp"
#include "lunetkit/grid/types.hpp"

namespace lunetkit::phantom {

using grid::BoundingBox;
using grid::ImageGrid;
using grid::Instant;
using grid::LabelMask;
using grid::View;

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

/// Generator settings. Lengths in mm unless marked px.
struct PhantomParams {
  std::size_t image_size = 128;
  double field_of_view_mm = 128.0;  ///< spacing = field_of_view_mm / image_size
  Range semi_major_mm{38.0, 48.0};  ///< LV cavity half length at ED
  Range semi_minor_mm{15.0, 22.0};  ///< per view, at ED
  Range base_fraction{0.5, 0.75};   ///< base plane distance from the centre, over semi_major
  Range contraction{0.68, 0.92};    ///< ES linear scale factor
  Range thickness_mm{6.0, 10.0};
  Range translation_px{-6.0, 6.0};
  Range rotation_deg{-10.0, 10.0};
  Range speckle{0.15, 0.55};   ///< log-normal sigma
  Range contrast{0.45, 0.8};   ///< myocardium minus cavity intensity
  double sector_half_angle_deg = 45.0;
  double blur_sigma_mm = 1.0;
  double noise_sd = 0.02;
  double good_quality_min = 0.3;  ///< contrast - speckle at or above: good
  double poor_quality_max = 0.12;  ///< contrast - speckle below: poor

  double spacing_mm() const { return field_of_view_mm / static_cast<double>(image_size); }

  void validate() const {
    auto ok = [](const Range& r, double lo, double hi) {
      return std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi && r.lo >= lo && r.hi <= hi;
    };
    const double inf = INFINITY;
    require(image_size >= 16, ErrorCode::InvalidParams, "image_size must be at least 16");
    require(field_of_view_mm > 0.0 && std::isfinite(field_of_view_mm), ErrorCode::InvalidParams,
            "field of view must be positive");
    require(ok(semi_major_mm, 1e-9, inf) && ok(semi_minor_mm, 1e-9, inf) &&
                ok(thickness_mm, 1e-9, inf),
            ErrorCode::InvalidParams, "shape ranges must be positive");
    require(ok(base_fraction, 1e-9, 1.0), ErrorCode::InvalidParams, "base_fraction must lie in (0,1]");
    require(ok(contraction, 1e-9, 1.0) && contraction.hi < 1.0, ErrorCode::InvalidParams,
            "contraction must lie in (0,1)");
    require(ok(translation_px, -inf, inf) && ok(rotation_deg, -90.0, 90.0), ErrorCode::InvalidParams,
            "invalid pose ranges");
    require(ok(speckle, 0.0, inf) && ok(contrast, 1e-9, 0.85), ErrorCode::InvalidParams,
            "invalid appearance ranges");
    require(sector_half_angle_deg > 0.0 && sector_half_angle_deg <= 90.0, ErrorCode::InvalidParams,
            "sector half angle must lie in (0,90]");
    require(blur_sigma_mm >= 0.0 && noise_sd >= 0.0, ErrorCode::InvalidParams,
            "blur and noise must be non-negative");
    require(poor_quality_max <= good_quality_min, ErrorCode::InvalidParams,
            "quality thresholds out of order");
  }
  bool operator==(const PhantomParams&) const = default;
};

enum class Quality { good, medium, poor };
enum class EfCategory { low, mid, high };  ///< <=45%, 45-55%, >=55%

inline std::string to_string(Quality q) {
  return q == Quality::good ? "good" : (q == Quality::medium ? "medium" : "poor");
}
inline std::string to_string(EfCategory c) {
  return c == EfCategory::low ? "<=45" : (c == EfCategory::mid ? "45-55" : ">=55");
}
inline Quality quality_from_string(const std::string& s) {
  require(s == "good" || s == "medium" || s == "poor", ErrorCode::IoFailure, "unknown quality " + s);
  return s == "good" ? Quality::good : (s == "medium" ? Quality::medium : Quality::poor);
}

inline EfCategory ef_category(double ef) {
  if (ef <= 45.0) return EfCategory::low;
  if (ef >= 55.0) return EfCategory::high;
  return EfCategory::mid;
}

struct ViewSample {
  ImageGrid image;
  LabelMask mask;
  BoundingBox bbox;  ///< tight box of the epicardial region
  bool operator==(const ViewSample&) const = default;
};

struct PatientRecord {
  std::string patient_id;
  std::array<ViewSample, 4> samples;  ///< indexed by sample_index(view, instant)
  double edv = 0.0;                   ///< ml, analytic
  double esv = 0.0;                   ///< ml, analytic
  double ef = 0.0;                    ///< percent
  Quality quality = Quality::medium;
  int fold = -1;

  static constexpr std::size_t sample_index(View v, Instant i) {
    return static_cast<std::size_t>(v) * 2 + static_cast<std::size_t>(i);
  }
  const ViewSample& at(View v, Instant i) const { return samples[sample_index(v, i)]; }
  ViewSample& at(View v, Instant i) { return samples[sample_index(v, i)]; }
  EfCategory category() const { return ef_category(ef); }
  bool operator==(const PatientRecord&) const = default;
};

inline std::string patient_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "patient%04zu", index + 1);
  return buf;
}

/// Cavity volume of the truncated prolate ellipsoid: semi-axes a (long),
/// b2, b4, cut by the plane at distance c from the centre toward the base.
inline double truncated_ellipsoid_ml(double a, double b2, double b4, double c) {
  return std::numbers::pi * b2 * b4 * ((c + a) - (c * c * c + a * a * a) / (3.0 * a * a)) / 1000.0;
}

namespace detail {

struct Shape {
  double a, b, c, thickness;  ///< mm
  double x0, y0;              ///< ellipse centre, px
  double angle;               ///< radians, long axis from +x toward +y
};

inline LabelMask rasterize(const Shape& s, std::size_t n, double sp) {
  LabelMask m(n, n, {sp, sp});
  const double ux = std::cos(s.angle), uy = std::sin(s.angle);
  const double ao = s.a + s.thickness, bo = s.b + s.thickness;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t col = 0; col < n; ++col) {
      const double dx = (r + 0.5 - s.x0) * sp, dy = (col + 0.5 - s.y0) * sp;
      const double t = dx * ux + dy * uy, q = -dx * uy + dy * ux;
      if (t > s.c) continue;
      if ((t * t) / (s.a * s.a) + (q * q) / (s.b * s.b) <= 1.0) {
        m.set(r, col, 1);
      } else if ((t * t) / (ao * ao) + (q * q) / (bo * bo) <= 1.0) {
        m.set(r, col, 2);
      }
    }
  }
  return m;
}

inline std::vector<float> gaussian_blur(const std::vector<float>& img, std::size_t n, double sigma_px) {
  if (sigma_px <= 0.0) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma_px));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma_px * sigma_px));
    total += k[i + radius];
  }
  for (auto& v : k) v /= total;
  const auto N = static_cast<int>(n);
  auto clampi = [N](int v) { return v < 0 ? 0 : (v >= N ? N - 1 : v); };
  std::vector<float> tmp(img.size()), out(img.size());
  for (int r = 0; r < N; ++r) {
    for (int c = 0; c < N; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * img[r * N + clampi(c + i)];
      tmp[r * N + c] = static_cast<float>(acc);
    }
  }
  for (int r = 0; r < N; ++r) {
    for (int c = 0; c < N; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp[clampi(r + i) * N + c];
      out[r * N + c] = static_cast<float>(acc);
    }
  }
  return out;
}

struct Appearance {
  double cavity, tissue, myocardium, speckle;
};

inline ImageGrid render(const LabelMask& mask, const PhantomParams& p, const Appearance& look,
                        std::mt19937_64& rng) {
  const std::size_t n = mask.height();
  const double sp = p.spacing_mm();
  const double half = p.sector_half_angle_deg * std::numbers::pi / 180.0;
  std::vector<bool> sector(n * n);
  std::vector<float> img(n * n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double x = r + 0.5, y = c + 0.5 - 0.5 * static_cast<double>(n);
      sector[r * n + c] = std::abs(std::atan2(y, x)) <= half;
      const auto l = mask.at(r, c);
      img[r * n + c] =
          static_cast<float>(l == 1 ? look.cavity : (l == 2 ? look.myocardium : look.tissue));
    }
  }
  img = gaussian_blur(img, n, p.blur_sigma_mm / sp);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double s = look.speckle;
  for (std::size_t k = 0; k < n * n; ++k) {
    const double mult = std::clamp(std::exp(s * gauss(rng) - 0.5 * s * s), 0.0, 4.0);
    const double noise = p.noise_sd * gauss(rng);
    double v = sector[k] ? img[k] * mult + noise : 0.0;
    v = std::clamp(v, 0.0, 1.0);
    // 8-bit levels, so a PNG round trip is exact
    img[k] = static_cast<float>(std::lround(v * 255.0)) / 255.0f;
  }
  return ImageGrid(n, n, std::move(img), {sp, sp});
}

}  // namespace detail

/// One synthetic patient. The cavity is a truncated ellipse sharing its long
/// semi-axis and base plane across the two views, with a per-view minor
/// semi-axis; ES scales the ED shape about the ellipse centre.
inline PatientRecord generate_patient(const PhantomParams& params, std::uint64_t seed,
                                      std::string id = "patient0001") {
  params.validate();
  std::mt19937_64 rng(seed);
  auto draw = [&](const Range& r) { return std::uniform_real_distribution<double>(r.lo, r.hi)(rng); };
  const double a = draw(params.semi_major_mm);
  const double c = a * draw(params.base_fraction);
  const double b2 = draw(params.semi_minor_mm);
  const double b4 = draw(params.semi_minor_mm);
  const double scale = draw(params.contraction);
  const double contrast = draw(params.contrast);
  const double speckle = draw(params.speckle);

  PatientRecord rec;
  rec.patient_id = std::move(id);
  rec.edv = truncated_ellipsoid_ml(a, b2, b4, c);
  rec.esv = truncated_ellipsoid_ml(a * scale, b2 * scale, b4 * scale, c * scale);
  rec.ef = clinical::ejection_fraction(rec.edv, rec.esv);
  const double q = contrast - speckle;
  rec.quality = q >= params.good_quality_min
                    ? Quality::good
                    : (q < params.poor_quality_max ? Quality::poor : Quality::medium);

  const std::size_t n = params.image_size;
  const double sp = params.spacing_mm();
  const detail::Appearance look{0.08, 0.3, std::min(1.0, 0.08 + contrast), speckle};
  for (View v : grid::kViews) {
    const double b = v == View::two_chamber ? b2 : b4;
    const double thickness = draw(params.thickness_mm);
    const double angle = draw(params.rotation_deg) * std::numbers::pi / 180.0;
    const double tx = draw(params.translation_px), ty = draw(params.translation_px);
    // centre the ED extent [-(a + thickness), c] along the axis
    const double offset = 0.5 * ((a + thickness) - c) / sp;
    const double x0 = 0.5 * n + offset * std::cos(angle) + tx;
    const double y0 = 0.5 * n + offset * std::sin(angle) + ty;
    for (Instant i : grid::kInstants) {
      const double s = i == Instant::ed ? 1.0 : scale;
      const detail::Shape shape{a * s, b * s, c * s, thickness * s, x0, y0, angle};
      ViewSample& out = rec.at(v, i);
      out.mask = detail::rasterize(shape, n, sp);
      out.bbox = grid::tight_bbox(out.mask, grid::Structure::epi);
      out.image = detail::render(out.mask, params, look, rng);
    }
  }
  return rec;
}

/// Per-patient seed derived from the master seed and the patient index.
inline std::uint64_t patient_seed(std::uint64_t master, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline void to_json(nlohmann::json& j, const Range& r) { j = nlohmann::json::array({r.lo, r.hi}); }
inline void from_json(const nlohmann::json& j, Range& r) {
  require(j.is_array() && j.size() == 2, ErrorCode::InvalidParams, "range must be [lo, hi]");
  r = {j[0].get<double>(), j[1].get<double>()};
}

inline void to_json(nlohmann::json& j, const PhantomParams& p) {
  j = {{"image_size", p.image_size},
       {"field_of_view_mm", p.field_of_view_mm},
       {"semi_major_mm", p.semi_major_mm},
       {"semi_minor_mm", p.semi_minor_mm},
       {"base_fraction", p.base_fraction},
       {"contraction", p.contraction},
       {"thickness_mm", p.thickness_mm},
       {"translation_px", p.translation_px},
       {"rotation_deg", p.rotation_deg},
       {"speckle", p.speckle},
       {"contrast", p.contrast},
       {"sector_half_angle_deg", p.sector_half_angle_deg},
       {"blur_sigma_mm", p.blur_sigma_mm},
       {"noise_sd", p.noise_sd},
       {"good_quality_min", p.good_quality_min},
       {"poor_quality_max", p.poor_quality_max}};
}

inline void from_json(const nlohmann::json& j, PhantomParams& p) {
  p = PhantomParams{};
  p.image_size = j.value("image_size", p.image_size);
  p.field_of_view_mm = j.value("field_of_view_mm", p.field_of_view_mm);
  p.semi_major_mm = j.value("semi_major_mm", p.semi_major_mm);
  p.semi_minor_mm = j.value("semi_minor_mm", p.semi_minor_mm);
  p.base_fraction = j.value("base_fraction", p.base_fraction);
  p.contraction = j.value("contraction", p.contraction);
  p.thickness_mm = j.value("thickness_mm", p.thickness_mm);
  p.translation_px = j.value("translation_px", p.translation_px);
  p.rotation_deg = j.value("rotation_deg", p.rotation_deg);
  p.speckle = j.value("speckle", p.speckle);
  p.contrast = j.value("contrast", p.contrast);
  p.sector_half_angle_deg = j.value("sector_half_angle_deg", p.sector_half_angle_deg);
  p.blur_sigma_mm = j.value("blur_sigma_mm", p.blur_sigma_mm);
  p.noise_sd = j.value("noise_sd", p.noise_sd);
  p.good_quality_min = j.value("good_quality_min", p.good_quality_min);
  p.poor_quality_max = j.value("poor_quality_max", p.poor_quality_max);
}

}  // namespace lunetkit::phantom
