#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "json.hpp"
#include "lunetkit/diffcore/crop_resize.hpp"
#include "lunetkit/diffcore/ops.hpp"
#include "lunetkit/grid/types.hpp"

namespace lunetkit::losses {

using diffcore::Tape;
using diffcore::Tensor;
using diffcore::Var;

/// per_coordinate: sum_k min(|e_k|, clip). summed: min(sum_k |e_k|, clip).
enum class ClipMode { per_coordinate, summed };

struct LossWeights {
  double localization_weight = 10.0;
  double segmentation_weight = 1.0;
  double clip = 0.99;
  double smooth = 1.0;  ///< Dice smoothing, in pixel-count units
  ClipMode clip_mode = ClipMode::per_coordinate;

  void validate() const {
    require(localization_weight > 0.0 && segmentation_weight > 0.0 && smooth > 0.0,
            ErrorCode::InvalidConfig, "loss weights and smoothing must be positive");
    require(clip > 0.0 && clip <= 1.0, ErrorCode::InvalidConfig, "clip must lie in (0, 1]");
  }
  bool operator==(const LossWeights&) const = default;
};

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"localization_weight", w.localization_weight},
       {"segmentation_weight", w.segmentation_weight},
       {"clip", w.clip},
       {"smooth", w.smooth},
       {"clip_mode", w.clip_mode == ClipMode::per_coordinate ? "per_coordinate" : "summed"}};
}

inline void from_json(const nlohmann::json& j, LossWeights& w) {
  w = LossWeights{};
  w.localization_weight = j.value("localization_weight", w.localization_weight);
  w.segmentation_weight = j.value("segmentation_weight", w.segmentation_weight);
  w.clip = j.value("clip", w.clip);
  w.smooth = j.value("smooth", w.smooth);
  const std::string mode = j.value("clip_mode", std::string("per_coordinate"));
  require(mode == "per_coordinate" || mode == "summed", ErrorCode::InvalidConfig,
          "clip_mode must be per_coordinate or summed");
  w.clip_mode = mode == "summed" ? ClipMode::summed : ClipMode::per_coordinate;
}

/// Clipped L1 between predicted and reference normalized boxes [N,4],
/// averaged over the batch. Zero gradient where clipped.
template <std::floating_point T>
Var<T> clipped_l1_loss(Var<T> pred, const Tensor<T>& ref, double clip,
                       ClipMode mode = ClipMode::per_coordinate) {
  const auto& s = pred.shape();
  require(s.size() == 2 && s[1] == 4 && ref.shape() == s, ErrorCode::ShapeMismatch,
          "clipped_l1_loss expects matching [N,4] boxes");
  const std::size_t n = s[0];
  const auto& pv = pred.value();
  std::vector<T> slope(pv.size(), T{0});
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double item = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      const double e = static_cast<double>(pv[4 * i + k]) - static_cast<double>(ref[4 * i + k]);
      const double sign = e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
      if (mode == ClipMode::per_coordinate) {
        if (std::abs(e) < clip) {
          item += std::abs(e);
          slope[4 * i + k] = static_cast<T>(sign);
        } else {
          item += clip;
        }
      } else {
        item += std::abs(e);
        slope[4 * i + k] = static_cast<T>(sign);
      }
    }
    if (mode == ClipMode::summed && item >= clip) {
      item = clip;
      for (std::size_t k = 0; k < 4; ++k) slope[4 * i + k] = T{0};
    }
    total += item;
  }
  const T inv_n = T{1} / static_cast<T>(n);
  const std::size_t ip = pred.id();
  return pred.tape()->record(
      Tensor<T>({1}, static_cast<T>(total / static_cast<double>(n))), {pred},
      [ip, slope = std::move(slope), inv_n](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0] * inv_n;
        auto acc = t.accumulator(ip);
        for (std::size_t k = 0; k < slope.size(); ++k) acc[k] += g * slope[k];
      });
}

/// 1 - mean over {LV cavity, myocardium} of the soft Dice
/// (2 sum p r + eps) / (sum p + sum r + eps), averaged over the batch.
/// Background is excluded.
template <std::floating_point T>
Var<T> multiclass_dice_loss(Var<T> probs, std::span<const grid::LabelMask> refs, double smooth) {
  const auto& s = probs.shape();
  require(s.size() == 4 && s[1] == 3 && refs.size() == s[0], ErrorCode::ShapeMismatch,
          "multiclass_dice_loss expects [N,3,h,w] and N reference masks");
  const std::size_t n = s[0], h = s[2], w = s[3], plane = h * w;
  for (const auto& r : refs) {
    require(r.height() == h && r.width() == w, ErrorCode::ShapeMismatch,
            "reference mask size does not match probabilities");
  }
  const auto& pv = probs.value();
  // per item and class: intersection, prediction mass, reference mass
  std::vector<std::array<double, 3>> stats(n * 2);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& labels = refs[i].labels();
    double item = 0.0;
    for (std::size_t cls = 1; cls <= 2; ++cls) {
      const T* p = pv.data() + (i * 3 + cls) * plane;
      double inter = 0.0, mass_p = 0.0, mass_r = 0.0;
      for (std::size_t k = 0; k < plane; ++k) {
        const double pk = static_cast<double>(p[k]);
        mass_p += pk;
        if (labels[k] == cls) {
          inter += pk;
          mass_r += 1.0;
        }
      }
      stats[2 * i + cls - 1] = {inter, mass_p, mass_r};
      item += (2.0 * inter + smooth) / (mass_p + mass_r + smooth);
    }
    total += 1.0 - 0.5 * item;
  }
  std::vector<std::vector<std::uint8_t>> labels;
  labels.reserve(n);
  for (const auto& r : refs) labels.push_back(r.labels());
  const std::size_t ip = probs.id();
  return probs.tape()->record(
      Tensor<T>({1}, static_cast<T>(total / static_cast<double>(n))), {probs},
      [=, stats = std::move(stats), labels = std::move(labels)](Tape<T>& t, std::size_t self) {
        const double g = static_cast<double>(t.grad(self)[0]) / (2.0 * static_cast<double>(n));
        auto acc = t.accumulator(ip);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t cls = 1; cls <= 2; ++cls) {
            const auto [inter, mass_p, mass_r] = stats[2 * i + cls - 1];
            const double denom = mass_p + mass_r + smooth;
            const double num = 2.0 * inter + smooth;
            const double d_in = -g * (2.0 * denom - num) / (denom * denom);
            const double d_out = -g * (-num) / (denom * denom);
            T* a = acc.data() + (i * 3 + cls) * plane;
            for (std::size_t k = 0; k < plane; ++k) {
              a[k] += static_cast<T>(labels[i][k] == cls ? d_in : d_out);
            }
          }
        }
      });
}

/// Reference labels resampled (nearest neighbour) into a predicted ROI at
/// the same sample positions crop_resize uses; outside the image reads as
/// background. Not differentiable.
inline grid::LabelMask dynamic_roi_reference(const grid::LabelMask& ref,
                                             const diffcore::SanitizedBox& box,
                                             std::size_t crop_h, std::size_t crop_w) {
  require(crop_h >= 1 && crop_w >= 1, ErrorCode::InvalidArgument, "empty crop size");
  const std::size_t h = ref.height(), w = ref.width();
  const diffcore::SamplingAxis ax(box.x, h, crop_h), ay(box.y, w, crop_w);
  const grid::PixelSpacing spacing{
      std::max(1e-12, (box.x.hi - box.x.lo) * static_cast<double>(h) / crop_h) * ref.spacing().dx,
      std::max(1e-12, (box.y.hi - box.y.lo) * static_cast<double>(w) / crop_w) * ref.spacing().dy};
  grid::LabelMask out(crop_h, crop_w, spacing);
  for (std::size_t i = 0; i < crop_h; ++i) {
    const double r = std::floor(ax.source(i) + 0.5);
    if (r < 0.0 || r >= static_cast<double>(h)) continue;
    for (std::size_t j = 0; j < crop_w; ++j) {
      const double c = std::floor(ay.source(j) + 0.5);
      if (c < 0.0 || c >= static_cast<double>(w)) continue;
      out.set(i, j, ref.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)));
    }
  }
  return out;
}

template <class T>
grid::LabelMask dynamic_roi_reference(const grid::LabelMask& ref, std::span<const T> raw_box,
                                      std::size_t crop_h, std::size_t crop_w) {
  return dynamic_roi_reference(ref, diffcore::sanitize_box(raw_box, ref.height(), ref.width()),
                               crop_h, crop_w);
}

/// localization_weight * loc + segmentation_weight * seg.
template <std::floating_point T>
Var<T> multitask_loss(Var<T> loc, Var<T> seg, const LossWeights& weights) {
  require(loc.value().size() == 1 && seg.value().size() == 1, ErrorCode::NotScalarLoss,
          "multitask_loss combines scalar losses");
  return diffcore::add(diffcore::scale(loc, static_cast<T>(weights.localization_weight)),
                       diffcore::scale(seg, static_cast<T>(weights.segmentation_weight)));
}

}  // namespace lunetkit::losses
