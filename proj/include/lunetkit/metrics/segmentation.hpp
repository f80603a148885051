#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "lunetkit/grid/contour.hpp"
#include "lunetkit/grid/types.hpp"

namespace lunetkit::metrics {

using grid::Contour;
using grid::LabelMask;
using grid::Structure;

inline void require_same_grid(const LabelMask& a, const LabelMask& b) {
  require(a.height() == b.height() && a.width() == b.width(), ErrorCode::GridMismatch,
          "masks are on different grids");
}

/// 2|A n B| / (|A| + |B|), 1 when both regions are empty.
inline double dice(const LabelMask& a, const LabelMask& b, Structure s) {
  require_same_grid(a, b);
  std::size_t na = 0, nb = 0, both = 0;
  const auto& la = a.labels();
  const auto& lb = b.labels();
  for (std::size_t k = 0; k < la.size(); ++k) {
    const bool ia = grid::in_structure(la[k], s), ib = grid::in_structure(lb[k], s);
    na += ia;
    nb += ib;
    both += ia && ib;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

namespace detail {

struct MmPoint {
  double x, y;
};

inline std::vector<MmPoint> to_mm(const Contour& c) {
  std::vector<MmPoint> out;
  out.reserve(c.points.size());
  for (const auto& p : c.points) out.push_back({p.x * c.spacing.dx, p.y * c.spacing.dy});
  return out;
}

inline void require_pair(const Contour& a, const Contour& b) {
  require(!a.points.empty() && !b.points.empty(), ErrorCode::EmptyContour, "empty contour");
  require(a.spacing == b.spacing, ErrorCode::GridMismatch, "contours have different spacing");
}

/// Nearest-point distances from every point of `from` to the set `to`,
/// using a sweep over `to` sorted by x with pruning on |dx|.
inline std::vector<double> nearest_distances(const std::vector<MmPoint>& from,
                                             std::vector<MmPoint> to) {
  std::sort(to.begin(), to.end(), [](const MmPoint& p, const MmPoint& q) { return p.x < q.x; });
  std::vector<double> out;
  out.reserve(from.size());
  for (const MmPoint& p : from) {
    const auto start = std::lower_bound(to.begin(), to.end(), p.x,
                                        [](const MmPoint& q, double x) { return q.x < x; });
    double best2 = std::numeric_limits<double>::infinity();
    for (auto it = start; it != to.end(); ++it) {
      const double dx = it->x - p.x;
      if (dx * dx > best2) break;
      const double dy = it->y - p.y;
      best2 = std::min(best2, dx * dx + dy * dy);
    }
    for (auto it = start; it != to.begin();) {
      --it;
      const double dx = it->x - p.x;
      if (dx * dx > best2) break;
      const double dy = it->y - p.y;
      best2 = std::min(best2, dx * dx + dy * dy);
    }
    out.push_back(std::sqrt(best2));
  }
  return out;
}

}  // namespace detail

/// Symmetric mean of nearest-point distances, in mm.
inline double mean_absolute_distance(const Contour& a, const Contour& b) {
  detail::require_pair(a, b);
  const auto pa = detail::to_mm(a), pb = detail::to_mm(b);
  const auto dab = detail::nearest_distances(pa, pb);
  const auto dba = detail::nearest_distances(pb, pa);
  double sa = 0.0, sb = 0.0;
  for (double d : dab) sa += d;
  for (double d : dba) sb += d;
  return 0.5 * (sa / static_cast<double>(dab.size()) + sb / static_cast<double>(dba.size()));
}

/// Symmetric Hausdorff distance, in mm.
inline double hausdorff(const Contour& a, const Contour& b) {
  detail::require_pair(a, b);
  const auto pa = detail::to_mm(a), pb = detail::to_mm(b);
  double worst = 0.0;
  for (double d : detail::nearest_distances(pa, pb)) worst = std::max(worst, d);
  for (double d : detail::nearest_distances(pb, pa)) worst = std::max(worst, d);
  return worst;
}

/// Outer-boundary length of the structure: each 8-connected component is
/// Moore-traced through its boundary pixel centres, with steps weighted dx,
/// dy or sqrt(dx^2 + dy^2).
inline double perimeter(const LabelMask& mask, Structure s) {
  const std::size_t h = mask.height(), w = mask.width();
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  std::vector<int> comp(h * w, -1);
  auto idx = [&](std::ptrdiff_t r, std::ptrdiff_t c) {
    return static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c);
  };
  // clockwise from west, in (row, col) offsets
  static constexpr std::array<std::array<int, 2>, 8> dirs{
      {{0, -1}, {-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}}};
  auto dir_of = [](std::ptrdiff_t dr, std::ptrdiff_t dc) {
    for (int k = 0; k < 8; ++k) {
      if (dirs[k][0] == dr && dirs[k][1] == dc) return k;
    }
    return 0;
  };
  const double dx = mask.spacing().dx, dy = mask.spacing().dy;
  const double diag = std::hypot(dx, dy);
  double total = 0.0;
  int next_id = 0;
  std::vector<std::size_t> stack;
  for (std::ptrdiff_t r0 = 0; r0 < H; ++r0) {
    for (std::ptrdiff_t c0 = 0; c0 < W; ++c0) {
      if (!mask.contains(s, r0, c0) || comp[idx(r0, c0)] >= 0) continue;
      const int id = next_id++;
      comp[idx(r0, c0)] = id;
      stack.assign(1, idx(r0, c0));
      while (!stack.empty()) {
        const std::size_t k = stack.back();
        stack.pop_back();
        const auto r = static_cast<std::ptrdiff_t>(k / w), c = static_cast<std::ptrdiff_t>(k % w);
        for (const auto& d : dirs) {
          const std::ptrdiff_t rr = r + d[0], cc = c + d[1];
          if (rr < 0 || cc < 0 || rr >= H || cc >= W) continue;
          if (comp[idx(rr, cc)] < 0 && mask.contains(s, rr, cc)) {
            comp[idx(rr, cc)] = id;
            stack.push_back(idx(rr, cc));
          }
        }
      }
      auto member = [&](std::ptrdiff_t r, std::ptrdiff_t c) {
        return r >= 0 && c >= 0 && r < H && c < W && comp[idx(r, c)] == id;
      };
      // (r0, c0) is the raster-first pixel, so its west neighbour is outside.
      std::ptrdiff_t r = r0, c = c0;
      int back = 0;
      int first_move = -1;
      const std::size_t guard = 8 * h * w + 8;
      for (std::size_t steps = 0; steps < guard; ++steps) {
        int move = -1;
        for (int k = 0; k < 8; ++k) {
          const int d = (back + k) % 8;
          if (member(r + dirs[d][0], c + dirs[d][1])) {
            move = d;
            break;
          }
        }
        if (move < 0) break;  // isolated pixel
        if (r == r0 && c == c0) {
          if (first_move < 0) {
            first_move = move;
          } else if (move == first_move) {
            break;
          }
        }
        const int prev = (move + 7) % 8;
        const std::ptrdiff_t br = r + dirs[prev][0], bc = c + dirs[prev][1];
        r += dirs[move][0];
        c += dirs[move][1];
        back = dir_of(br - r, bc - c);
        const bool dr = dirs[move][0] != 0, dc = dirs[move][1] != 0;
        total += dr && dc ? diag : (dr ? dx : dy);
      }
    }
  }
  return total;
}

/// sqrt(4 pi A) / P with A = pixel count * dx * dy and P the traced outer
/// boundary length; 1 for a region without extent, clamped to <= 1.
inline double simplicity(const LabelMask& mask, Structure s) {
  const std::size_t n = mask.count(s);
  require(n > 0, ErrorCode::EmptyStructure, "simplicity of an empty " + grid::to_string(s) + " region");
  const double area = static_cast<double>(n) * mask.spacing().dx * mask.spacing().dy;
  const double p = perimeter(mask, s);
  if (p <= 0.0) return 1.0;
  return std::min(1.0, std::sqrt(4.0 * std::numbers::pi * area) / p);
}

/// Area of the convex hull of the given points (monotone chain).
inline double convex_hull_area(std::vector<grid::Point> pts) {
  std::sort(pts.begin(), pts.end(),
            [](const grid::Point& a, const grid::Point& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return 0.0;
  auto cross = [](const grid::Point& o, const grid::Point& a, const grid::Point& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
  };
  std::vector<grid::Point> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  double area2 = 0.0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    area2 += a.x * b.y - b.x * a.y;
  }
  return 0.5 * std::abs(area2);
}

/// Pixel-count area over the hull area of the pixel centres, in mm^2;
/// 1 when the hull is degenerate, clamped to <= 1.
inline double convexity(const LabelMask& mask, Structure s) {
  const std::size_t n = mask.count(s);
  require(n > 0, ErrorCode::EmptyStructure, "convexity of an empty " + grid::to_string(s) + " region");
  std::vector<grid::Point> pts;
  const double dx = mask.spacing().dx, dy = mask.spacing().dy;
  for (std::size_t r = 0; r < mask.height(); ++r) {
    for (std::size_t c = 0; c < mask.width(); ++c) {
      // interior pixels cannot be hull vertices; row extremes suffice
      if (!mask.contains(s, r, c)) continue;
      const bool left = c == 0 || !mask.contains(s, r, c - 1);
      const bool right = c + 1 == mask.width() || !mask.contains(s, r, c + 1);
      if (left || right) pts.push_back({(r + 0.5) * dx, (c + 0.5) * dy});
    }
  }
  const double hull = convex_hull_area(std::move(pts));
  if (hull <= 0.0) return 1.0;
  return std::min(1.0, static_cast<double>(n) * dx * dy / hull);
}

struct ShapeDescriptors {
  double simplicity = 1.0;
  double convexity = 1.0;
};

inline ShapeDescriptors shape_descriptors(const LabelMask& mask, Structure s) {
  return {simplicity(mask, s), convexity(mask, s)};
}

}  // namespace lunetkit::metrics
