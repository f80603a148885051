#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "lunetkit/grid/types.hpp"

namespace lunetkit::clinical {

using grid::LabelMask;
using grid::Point;
using grid::Structure;

/// Principal axis of a region. Positions are in mm (x = rows, y = columns);
/// the apex end has the smaller projection.
struct LongAxis {
  double ux = 1.0, uy = 0.0;  ///< unit direction in mm space, ux > 0 or (ux == 0, uy > 0)
  double cx = 0.0, cy = 0.0;  ///< centroid, mm
  double t_min = 0.0;         ///< projection of the apex end relative to the centroid, mm
  double length_mm = 0.0;

  Point apex_mm() const { return {cx + t_min * ux, cy + t_min * uy}; }
  Point base_mm() const { return {cx + (t_min + length_mm) * ux, cy + (t_min + length_mm) * uy}; }
  /// Endpoints in continuous pixel coordinates.
  Point apex(const grid::PixelSpacing& s) const { auto p = apex_mm(); return {p.x / s.dx, p.y / s.dy}; }
  Point base(const grid::PixelSpacing& s) const { auto p = base_mm(); return {p.x / s.dx, p.y / s.dy}; }
};

/// PCA of the region's pixel centres in mm. Near-equal eigenvalues (relative
/// 1e-6) fall back to the +x direction. The length spans the extreme centre
/// projections plus one pixel footprint along the axis.
inline LongAxis long_axis(const LabelMask& mask, Structure s = Structure::endo) {
  const double dx = mask.spacing().dx, dy = mask.spacing().dy;
  std::vector<Point> pts;
  for (std::size_t r = 0; r < mask.height(); ++r) {
    for (std::size_t c = 0; c < mask.width(); ++c) {
      if (mask.contains(s, r, c)) pts.push_back({(r + 0.5) * dx, (c + 0.5) * dy});
    }
  }
  require(!pts.empty(), ErrorCode::EmptyStructure, "long axis of an empty region");
  require(pts.size() >= 3, ErrorCode::DegenerateRegion, "long axis needs at least 3 pixels");
  const double n = static_cast<double>(pts.size());
  double mx = 0.0, my = 0.0;
  for (const auto& p : pts) {
    mx += p.x;
    my += p.y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (const auto& p : pts) {
    sxx += (p.x - mx) * (p.x - mx);
    syy += (p.y - my) * (p.y - my);
    sxy += (p.x - mx) * (p.y - my);
  }
  sxx /= n;
  syy /= n;
  sxy /= n;
  const double half_gap = std::sqrt(0.25 * (sxx - syy) * (sxx - syy) + sxy * sxy);
  const double l1 = 0.5 * (sxx + syy) + half_gap;
  const double l2 = 0.5 * (sxx + syy) - half_gap;
  LongAxis a;
  a.cx = mx;
  a.cy = my;
  if (l1 - l2 > 1e-6 * std::max(std::abs(l1), 1e-300)) {
    // eigenvector of [[sxx, sxy], [sxy, syy]] for l1, from the better-conditioned row
    double vx, vy;
    if (sxx >= syy) {
      vx = l1 - syy;
      vy = sxy;
    } else {
      vx = sxy;
      vy = l1 - sxx;
    }
    const double norm = std::hypot(vx, vy);
    a.ux = vx / norm;
    a.uy = vy / norm;
    if (a.ux < 0.0 || (a.ux == 0.0 && a.uy < 0.0)) {
      a.ux = -a.ux;
      a.uy = -a.uy;
    }
  }
  double tmin = INFINITY, tmax = -INFINITY;
  for (const auto& p : pts) {
    const double t = (p.x - mx) * a.ux + (p.y - my) * a.uy;
    tmin = std::min(tmin, t);
    tmax = std::max(tmax, t);
  }
  const double footprint = std::abs(a.ux) * dx + std::abs(a.uy) * dy;
  a.t_min = tmin - 0.5 * footprint;
  a.length_mm = tmax - tmin + footprint;
  require(a.length_mm > 0.0, ErrorCode::DegenerateRegion, "zero-length long axis");
  return a;
}

namespace detail {

inline bool inside_at(const LabelMask& mask, Structure s, double x_mm, double y_mm) {
  const double r = std::floor(x_mm / mask.spacing().dx);
  const double c = std::floor(y_mm / mask.spacing().dy);
  if (r < 0.0 || c < 0.0 || r >= static_cast<double>(mask.height()) ||
      c >= static_cast<double>(mask.width())) {
    return false;
  }
  return mask.contains(s, static_cast<std::size_t>(r), static_cast<std::size_t>(c));
}

}  // namespace detail

/// Diameters (mm) of `n_discs` equal slabs along the axis: the extent of the
/// region along the perpendicular through each slab's midpoint, with the
/// boundary located by sampling and bisection against pixel membership.
/// Slabs whose midline misses the region yield 0.
inline std::vector<double> disc_diameters(const LabelMask& mask, const LongAxis& axis,
                                          std::size_t n_discs, Structure s = Structure::endo) {
  require(n_discs >= 4, ErrorCode::InvalidArgument, "at least 4 discs are required");
  const double dx = mask.spacing().dx, dy = mask.spacing().dy;
  const double vx = -axis.uy, vy = axis.ux;
  const double reach = std::hypot(mask.height() * dx, mask.width() * dy);
  const double step = 0.25 * std::min(dx, dy);
  const auto samples = static_cast<std::ptrdiff_t>(std::ceil(reach / step));
  std::vector<double> out(n_discs, 0.0);
  for (std::size_t i = 0; i < n_discs; ++i) {
    const double t = axis.t_min + (static_cast<double>(i) + 0.5) * axis.length_mm / n_discs;
    const double px = axis.cx + t * axis.ux, py = axis.cy + t * axis.uy;
    auto in = [&](double sv) { return detail::inside_at(mask, s, px + sv * vx, py + sv * vy); };
    std::ptrdiff_t first = samples + 1, last = -samples - 1;
    for (std::ptrdiff_t k = -samples; k <= samples; ++k) {
      if (in(k * step)) {
        first = std::min(first, k);
        last = std::max(last, k);
      }
    }
    if (first > last) continue;
    auto refine = [&](double outside, double inside) {
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (outside + inside);
        (in(mid) ? inside : outside) = mid;
      }
      return 0.5 * (outside + inside);
    };
    const double lo = refine((first - 1) * step, first * step);
    const double hi = refine((last + 1) * step, last * step);
    out[i] = hi - lo;
  }
  return out;
}

/// Method of discs over two orthogonal views, in ml.
inline double simpson_biplane(const LabelMask& endo_2ch, const LabelMask& endo_4ch,
                              std::size_t n_discs = 20) {
  const LongAxis a2 = long_axis(endo_2ch), a4 = long_axis(endo_4ch);
  const auto d2 = disc_diameters(endo_2ch, a2, n_discs);
  const auto d4 = disc_diameters(endo_4ch, a4, n_discs);
  const double length = std::max(a2.length_mm, a4.length_mm);
  double sum = 0.0;
  for (std::size_t i = 0; i < n_discs; ++i) sum += d2[i] * d4[i];
  return std::numbers::pi / 4.0 * sum * length / static_cast<double>(n_discs) / 1000.0;
}

inline double ejection_fraction(double edv, double esv) {
  require(edv > 0.0, ErrorCode::NonPositiveEDV, "end-diastolic volume must be positive");
  return 100.0 * (edv - esv) / edv;
}

struct PatientIndices {
  double edv = 0.0;  ///< ml
  double esv = 0.0;  ///< ml
  double ef = 0.0;   ///< percent
  bool operator==(const PatientIndices&) const = default;
};

inline PatientIndices patient_indices(const LabelMask& ed_2ch, const LabelMask& ed_4ch,
                                      const LabelMask& es_2ch, const LabelMask& es_4ch,
                                      std::size_t n_discs = 20) {
  PatientIndices p;
  p.edv = simpson_biplane(ed_2ch, ed_4ch, n_discs);
  p.esv = simpson_biplane(es_2ch, es_4ch, n_discs);
  p.ef = ejection_fraction(p.edv, p.esv);
  return p;
}

struct AgreementStats {
  double corr = 0.0;
  double bias = 0.0;  ///< mean(pred - ref)
  double loa = 0.0;   ///< 1.96 * population SD of (pred - ref)
  double mae = 0.0;
  bool operator==(const AgreementStats&) const = default;
};

inline AgreementStats agreement_stats(std::span<const double> pred, std::span<const double> ref) {
  require(pred.size() == ref.size(), ErrorCode::LengthMismatch, "series lengths differ");
  require(pred.size() >= 3, ErrorCode::DegenerateSeries, "agreement needs at least 3 pairs");
  const double n = static_cast<double>(pred.size());
  double mp = 0.0, mr = 0.0, md = 0.0, mae = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mp += pred[i];
    mr += ref[i];
    md += pred[i] - ref[i];
    mae += std::abs(pred[i] - ref[i]);
  }
  mp /= n;
  mr /= n;
  md /= n;
  mae /= n;
  double spp = 0.0, srr = 0.0, spr = 0.0, sdd = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a = pred[i] - mp, b = ref[i] - mr, d = pred[i] - ref[i] - md;
    spp += a * a;
    srr += b * b;
    spr += a * b;
    sdd += d * d;
  }
  require(srr > 0.0 && spp > 0.0, ErrorCode::DegenerateSeries,
          "correlation undefined for a constant series");
  AgreementStats s;
  s.corr = std::clamp(spr / std::sqrt(spp * srr), -1.0, 1.0);
  s.bias = md;
  s.loa = 1.96 * std::sqrt(sdd / n);
  s.mae = mae;
  return s;
}

}  // namespace lunetkit::clinical
