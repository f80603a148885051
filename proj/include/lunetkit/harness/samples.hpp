#pragma once

#include <algorithm>
#include <array>
#include <span>
#include <string>
#include <vector>

#include "lunetkit/diffcore/tensor.hpp"
#include "lunetkit/grid/bbox.hpp"
#include "lunetkit/phantom/generator.hpp"

namespace lunetkit::harness {

using diffcore::Tensor;
using grid::Instant;
using grid::View;

/// One annotated image of one patient.
struct Sample {
  std::string patient_id;
  View view = View::two_chamber;
  Instant instant = Instant::ed;
  grid::ImageGrid image;
  grid::LabelMask mask;
};

/// All four images of the selected records, in record order then
/// (2CH ED, 2CH ES, 4CH ED, 4CH ES).
inline std::vector<Sample> collect_samples(std::span<const phantom::PatientRecord> records,
                                           std::span<const std::size_t> indices) {
  std::vector<Sample> out;
  out.reserve(indices.size() * 4);
  for (std::size_t idx : indices) {
    const auto& r = records[idx];
    for (View v : grid::kViews) {
      for (Instant i : grid::kInstants) {
        const auto& s = r.at(v, i);
        out.push_back({r.patient_id, v, i, s.image, s.mask});
      }
    }
  }
  return out;
}

inline std::vector<const Sample*> pointers(const std::vector<Sample>& samples) {
  std::vector<const Sample*> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(&s);
  return out;
}

/// [B, 1, H, W] stack of the batch images.
inline Tensor<float> stack_images(std::span<const Sample* const> batch) {
  require(!batch.empty(), ErrorCode::EmptyDataset, "empty batch");
  const std::size_t h = batch[0]->image.height(), w = batch[0]->image.width();
  Tensor<float> out({batch.size(), 1, h, w});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& img = batch[n]->image;
    require(img.height() == h && img.width() == w, ErrorCode::ShapeMismatch,
            "batch images differ in size");
    std::copy(img.pixels().begin(), img.pixels().end(), out.data() + n * h * w);
  }
  return out;
}

/// Reference box with margin: the tight epicardial box expanded by m.
inline grid::BoundingBox reference_box(const grid::LabelMask& mask, double margin) {
  return grid::expand_bbox(grid::tight_bbox(mask, grid::Structure::epi), margin,
                           {mask.height(), mask.width()});
}

/// Pixel box to normalized (x_min, x_max, y_min, y_max).
inline std::array<double, 4> normalize_box(const grid::BoundingBox& b, grid::ImageExtent e) {
  const double h = static_cast<double>(e.height), w = static_cast<double>(e.width);
  return {b.x_min / h, b.x_max / h, b.y_min / w, b.y_max / w};
}

/// [B, 4] normalized reference boxes at the given margin.
inline Tensor<float> reference_boxes(std::span<const Sample* const> batch, double margin) {
  Tensor<float> out({batch.size(), 4});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& m = batch[n]->mask;
    const auto nb = normalize_box(reference_box(m, margin), {m.height(), m.width()});
    for (std::size_t k = 0; k < 4; ++k) out[4 * n + k] = static_cast<float>(nb[k]);
  }
  return out;
}

}  // namespace lunetkit::harness
