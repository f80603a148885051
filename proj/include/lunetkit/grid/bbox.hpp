#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "lunetkit/grid/types.hpp"

namespace lunetkit::grid {

/// Smallest box containing every pixel cell of the structure.
inline BoundingBox tight_bbox(const LabelMask& mask, Structure structure) {
  const std::size_t h = mask.height();
  const std::size_t w = mask.width();
  std::size_t r_min = h, r_max = 0, c_min = w, c_max = 0;
  for (std::size_t r = 0; r < h; ++r) {
    const auto* row = mask.labels().data() + r * w;
    std::size_t first = w;
    for (std::size_t c = 0; c < w; ++c) {
      if (in_structure(row[c], structure)) {
        first = c;
        break;
      }
    }
    if (first == w) continue;
    std::size_t last = first;
    for (std::size_t c = w; c-- > first;) {
      if (in_structure(row[c], structure)) {
        last = c;
        break;
      }
    }
    if (r_min == h) r_min = r;
    r_max = r;
    c_min = std::min(c_min, first);
    c_max = std::max(c_max, last);
  }
  require(r_min != h, ErrorCode::EmptyStructure,
          "mask contains no " + to_string(structure) + " pixel");
  return {static_cast<double>(r_min), static_cast<double>(r_max + 1),
          static_cast<double>(c_min), static_cast<double>(c_max + 1)};
}

struct ExpandedBox {
  BoundingBox box;
  bool clamped = false;  ///< true when any coordinate hit the image border
};

/// Margin expansion x_min - m*h, x_max + m*h, y_min - m*w, y_max + m*w,
/// clamped to [0, extent]. Reports whether the clamp fired.
inline ExpandedBox expand_bbox_checked(const BoundingBox& bb, double margin, ImageExtent bounds) {
  require(margin >= 0.0 && std::isfinite(margin), ErrorCode::InvalidArgument,
          "margin must be non-negative");
  require(bb.valid(), ErrorCode::InvalidArgument, "invalid bounding box");
  const double dh = margin * bb.height();
  const double dw = margin * bb.width();
  const BoundingBox raw{bb.x_min - dh, bb.x_max + dh, bb.y_min - dw, bb.y_max + dw};
  const double hx = static_cast<double>(bounds.height);
  const double wy = static_cast<double>(bounds.width);
  const BoundingBox out{std::clamp(raw.x_min, 0.0, hx), std::clamp(raw.x_max, 0.0, hx),
                        std::clamp(raw.y_min, 0.0, wy), std::clamp(raw.y_max, 0.0, wy)};
  return {out, !(out == raw)};
}

inline BoundingBox expand_bbox(const BoundingBox& bb, double margin, ImageExtent bounds) {
  return expand_bbox_checked(bb, margin, bounds).box;
}

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double ih = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iw = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  return (ih > 0.0 && iw > 0.0) ? ih * iw : 0.0;
}

/// Intersection over union; 0 for disjoint boxes or a zero-area union.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
  require(a.valid() && b.valid(), ErrorCode::InvalidArgument, "invalid bounding box");
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

struct BoxErrors {
  double e_xc = 0.0;  ///< mm
  double e_yc = 0.0;
  double e_h = 0.0;
  double e_w = 0.0;
  bool operator==(const BoxErrors&) const = default;
};

/// Absolute centre/size differences in millimetres.
inline BoxErrors bbox_errors(const BoundingBox& pred, const BoundingBox& ref,
                             const PixelSpacing& spacing) {
  spacing.validate();
  require(pred.valid() && ref.valid(), ErrorCode::InvalidArgument, "invalid bounding box");
  return {std::abs(pred.center_x() - ref.center_x()) * spacing.dx,
          std::abs(pred.center_y() - ref.center_y()) * spacing.dy,
          std::abs(pred.height() - ref.height()) * spacing.dx,
          std::abs(pred.width() - ref.width()) * spacing.dy};
}

/// True iff every structure pixel cell lies inside bb. A dataset's
/// "BB out" count is the number of false results.
inline bool encompasses(const BoundingBox& bb, const LabelMask& mask, Structure structure) {
  return bb.contains(tight_bbox(mask, structure));
}

}  // namespace lunetkit::grid
