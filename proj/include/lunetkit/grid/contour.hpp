#pragma once

#include "lunetkit/grid/types.hpp"

namespace lunetkit::grid {

/// Centres of structure pixels with at least one 4-neighbour outside the
/// structure (the image border counts as outside), in raster order.
inline Contour mask_to_contour(const LabelMask& mask, Structure structure) {
  const std::size_t h = mask.height();
  const std::size_t w = mask.width();
  Contour contour;
  contour.spacing = mask.spacing();
  auto inside = [&](std::size_t r, std::size_t c) { return mask.contains(structure, r, c); };
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      if (!inside(r, c)) continue;
      const bool boundary = r == 0 || c == 0 || r + 1 == h || c + 1 == w || !inside(r - 1, c) ||
                            !inside(r + 1, c) || !inside(r, c - 1) || !inside(r, c + 1);
      if (boundary) {
        contour.points.push_back({static_cast<double>(r) + 0.5, static_cast<double>(c) + 0.5});
      }
    }
  }
  require(!contour.points.empty(), ErrorCode::EmptyStructure,
          "mask contains no " + to_string(structure) + " pixel");
  return contour;
}

}  // namespace lunetkit::grid
