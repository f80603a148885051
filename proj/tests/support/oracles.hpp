#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "lunetkit/grid/bbox.hpp"
#include "lunetkit/grid/contour.hpp"
#include "lunetkit/metrics/outliers.hpp"

/// Brute-force restatements of library quantities, shared by the unit and
/// acceptance suites.
namespace lunetkit::oracle {

using grid::BoundingBox;
using grid::Contour;
using grid::LabelMask;
using grid::Point;
using grid::Structure;

/// Mask with side lengths in [1, max_side]; each pixel is foreground with
/// probability `density`, split evenly between labels 1 and 2.
inline LabelMask random_mask(std::mt19937_64& rng, std::size_t max_side, double density) {
  std::uniform_int_distribution<std::size_t> dim(1, max_side);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LabelMask m(dim(rng), dim(rng));
  for (std::size_t r = 0; r < m.height(); ++r) {
    for (std::size_t c = 0; c < m.width(); ++c) {
      if (u(rng) < density) m.set(r, c, u(rng) < 0.5 ? 1 : 2);
    }
  }
  return m;
}

inline BoundingBox random_box(std::mt19937_64& rng, double extent) {
  std::uniform_real_distribution<double> u(0.0, extent);
  const double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
  return {std::min(a, b), std::max(a, b), std::min(c, d), std::max(c, d)};
}

inline BoundingBox random_integer_box(std::mt19937_64& rng, int extent) {
  std::uniform_int_distribution<int> u(0, extent);
  const int a = u(rng), b = u(rng), c = u(rng), d = u(rng);
  return {double(std::min(a, b)), double(std::max(a, b)), double(std::min(c, d)), double(std::max(c, d))};
}

/// Min/max over structure pixel indices, pixel-inclusive; empty when absent.
inline std::optional<BoundingBox> tight_bbox(const LabelMask& m, Structure s) {
  std::size_t r0 = SIZE_MAX, r1 = 0, c0 = SIZE_MAX, c1 = 0;
  bool any = false;
  for (std::size_t r = 0; r < m.height(); ++r) {
    for (std::size_t c = 0; c < m.width(); ++c) {
      if (!m.contains(s, r, c)) continue;
      any = true;
      r0 = std::min(r0, r);
      r1 = std::max(r1, r);
      c0 = std::min(c0, c);
      c1 = std::max(c1, c);
    }
  }
  if (!any) return std::nullopt;
  return BoundingBox{double(r0), double(r1 + 1), double(c0), double(c1 + 1)};
}

/// IOU of integer-cornered boxes by counting unit cells inside [0, extent)^2.
inline double raster_iou(const BoundingBox& a, const BoundingBox& b, int extent) {
  std::size_t inter = 0, uni = 0;
  for (int r = 0; r < extent; ++r) {
    for (int c = 0; c < extent; ++c) {
      const bool ia = r >= a.x_min && r < a.x_max && c >= a.y_min && c < a.y_max;
      const bool ib = r >= b.x_min && r < b.x_max && c >= b.y_min && c < b.y_max;
      inter += ia && ib;
      uni += ia || ib;
    }
  }
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

inline bool encompasses(const BoundingBox& bb, const LabelMask& m, Structure s) {
  for (std::size_t r = 0; r < m.height(); ++r) {
    for (std::size_t c = 0; c < m.width(); ++c) {
      if (m.contains(s, r, c) && !(r >= bb.x_min && r + 1 <= bb.x_max && c >= bb.y_min && c + 1 <= bb.y_max)) {
        return false;
      }
    }
  }
  return true;
}

inline double dice(const LabelMask& a, const LabelMask& b, Structure s) {
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t r = 0; r < a.height(); ++r) {
    for (std::size_t c = 0; c < a.width(); ++c) {
      na += a.contains(s, r, c);
      nb += b.contains(s, r, c);
      both += a.contains(s, r, c) && b.contains(s, r, c);
    }
  }
  return na + nb == 0 ? 1.0 : 2.0 * double(both) / double(na + nb);
}

/// Up to 80 pixel-centre points on a 64x64 lattice.
inline Contour random_contour(std::mt19937_64& rng, grid::PixelSpacing sp) {
  std::uniform_int_distribution<int> n(1, 80);
  std::uniform_int_distribution<int> coord(0, 63);
  Contour c;
  c.spacing = sp;
  const int count = n(rng);
  for (int i = 0; i < count; ++i) c.points.push_back({coord(rng) + 0.5, coord(rng) + 0.5});
  return c;
}

inline double nearest(const Point& p, const Contour& to) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : to.points) {
    best = std::min(best, std::hypot((p.x - q.x) * to.spacing.dx, (p.y - q.y) * to.spacing.dy));
  }
  return best;
}

inline double mean_distance(const Contour& a, const Contour& b) {
  double sa = 0, sb = 0;
  for (const auto& p : a.points) sa += nearest(p, b);
  for (const auto& p : b.points) sb += nearest(p, a);
  return 0.5 * (sa / double(a.points.size()) + sb / double(b.points.size()));
}

inline double hausdorff(const Contour& a, const Contour& b) {
  double m = 0;
  for (const auto& p : a.points) m = std::max(m, nearest(p, b));
  for (const auto& p : b.points) m = std::max(m, nearest(p, a));
  return m;
}

/// Geometric if any distance exceeds its bound, anatomical if any shape
/// score falls below its bound.
inline metrics::OutlierFlags classify_outliers(std::span<const metrics::CaseScores> scores,
                                               const metrics::OutlierBounds& b) {
  bool geo = false, ana = false;
  for (const auto& c : scores) {
    const auto& sb = c.structure == Structure::endo ? b.endo : b.epi;
    geo |= c.dm_mm > sb.dm_max || c.dh_mm > sb.dh_max;
    ana |= c.simplicity < sb.simplicity_min || c.convexity < sb.convexity_min;
  }
  return {geo, ana, geo && ana};
}

/// Twelve in-bound scores (2 views x 2 instants x 2 structures), then each
/// field perturbed with probability 1/4.
inline std::vector<metrics::CaseScores> random_scores(std::mt19937_64& rng) {
  std::vector<metrics::CaseScores> out;
  for (auto v : grid::kViews) {
    for (auto i : grid::kInstants) {
      for (auto s : grid::kStructures) out.push_back({v, i, s, 0.9, 1.0, 3.0, 0.9, 0.95});
    }
  }
  std::uniform_real_distribution<double> d(0.0, 10.0), q(0.4, 1.0);
  for (auto& c : out) {
    if (rng() % 4 == 0) c.dm_mm = d(rng) * 0.3;
    if (rng() % 4 == 0) c.dh_mm = d(rng);
    if (rng() % 4 == 0) c.simplicity = q(rng);
    if (rng() % 4 == 0) c.convexity = q(rng);
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

struct Agreement {
  double corr, bias, loa, mae;
};

/// Two-pass long-double statistics: Pearson correlation, mean difference,
/// 1.96 population SD of differences, mean absolute difference.
inline Agreement agreement(std::span<const double> pred, std::span<const double> ref) {
  const std::size_t n = pred.size();
  long double mr = 0, mp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mr += ref[i];
    mp += pred[i];
  }
  mr /= n;
  mp /= n;
  long double cov = 0, vr = 0, vp = 0, bias = 0, mae = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (pred[i] - mp) * (ref[i] - mr);
    vr += (ref[i] - mr) * (ref[i] - mr);
    vp += (pred[i] - mp) * (pred[i] - mp);
    bias += pred[i] - ref[i];
    mae += std::fabs(pred[i] - ref[i]);
  }
  bias /= n;
  mae /= n;
  long double vd = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const long double d = pred[i] - ref[i] - bias;
    vd += d * d;
  }
  return {static_cast<double>(cov / std::sqrt(vr * vp)), static_cast<double>(bias),
          static_cast<double>(1.96L * std::sqrt(vd / n)), static_cast<double>(mae)};
}

/// Ellipse with semi-axes a (along the axis rotated by `angle` from +x
/// toward +y) and b, centred at (cx, cy) in pixel coordinates.
inline LabelMask ellipse(std::size_t size, double cx, double cy, double a, double b, double angle = 0.0,
                         grid::PixelSpacing sp = {}) {
  LabelMask m(size, size, sp);
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      const double x = r + 0.5 - cx, y = c + 0.5 - cy;
      const double u = x * ca + y * sa, v = -x * sa + y * ca;
      if ((u * u) / (a * a) + (v * v) / (b * b) <= 1.0) m.set(r, c, 1);
    }
  }
  return m;
}

}  // namespace lunetkit::oracle
