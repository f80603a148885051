#pragma once

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lunetkit/diffcore/crop_resize.hpp"
#include "lunetkit/diffcore/serialize.hpp"
#include "lunetkit/grid/types.hpp"
#include "lunetkit/nets/localizer.hpp"

namespace lunetkit::nets {

/// Localizer and segmenter with disjoint parameter stores.
template <std::floating_point T>
struct LUNetModel {
  LUNetConfig config;
  LocalizerModel<T> localizer;
  UNetModel<T> segmenter;

  static constexpr const char* localizer_prefix = "localizer.";
  static constexpr const char* segmenter_prefix = "segmenter.";

  std::size_t parameter_count() const {
    return localizer.params.parameter_count() + segmenter.params.parameter_count();
  }

  /// Copies of all parameters, localizer first, with prefixed names.
  std::vector<NamedTensor<T>> named_parameters() const {
    std::vector<NamedTensor<T>> out;
    for (const auto& e : localizer.params.entries()) out.push_back({localizer_prefix + e.name, e.tensor});
    for (const auto& e : segmenter.params.entries()) out.push_back({segmenter_prefix + e.name, e.tensor});
    for (auto& e : out) {
      e.tensor.clear_grad();
      e.tensor.set_requires_grad(false);
    }
    return out;
  }

  template <std::floating_point U>
  void assign(const std::vector<NamedTensor<U>>& values) {
    const std::size_t nl = localizer.params.size();
    require(values.size() == nl + segmenter.params.size(), ErrorCode::InvalidConfig,
            "parameter file does not match the model layout");
    auto strip = [](const NamedTensor<U>& v, const std::string& prefix) {
      require(v.name.rfind(prefix, 0) == 0, ErrorCode::InvalidConfig,
              "unexpected parameter name " + v.name);
      return NamedTensor<U>{v.name.substr(prefix.size()), v.tensor};
    };
    std::vector<NamedTensor<U>> loc, seg;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i < nl) {
        loc.push_back(strip(values[i], localizer_prefix));
      } else {
        seg.push_back(strip(values[i], segmenter_prefix));
      }
    }
    localizer.params.assign(loc);
    segmenter.params.assign(seg);
  }

  void set_trainable(bool on) {
    localizer.params.set_trainable(on);
    segmenter.params.set_trainable(on);
  }
  void zero_grad() {
    localizer.params.zero_grad();
    segmenter.params.zero_grad();
  }
};

/// One random stream seeds the localizer, then the segmenter.
template <std::floating_point T>
LUNetModel<T> build_lunet(const LUNetConfig& config, std::uint64_t seed) {
  config.validate();
  LUNetModel<T> model;
  model.config = config;
  std::mt19937_64 rng(seed);
  model.localizer.layout = LocalizerLayout(config.localizer, model.localizer.params, "", rng);
  model.segmenter.layout = UNetLayout(config.segmenter, model.segmenter.params, "", rng);
  return model;
}

template <std::floating_point T>
void save_lunet(const LUNetModel<T>& model, const std::filesystem::path& path) {
  diffcore::save_parameters(path, model.named_parameters());
}

template <std::floating_point T>
LUNetModel<T> load_lunet(const LUNetConfig& config, const std::filesystem::path& path) {
  LUNetModel<T> model = build_lunet<T>(config, 0);
  model.assign(diffcore::load_parameters<float>(path));
  return model;
}

/// Differentiable end-to-end graph on a shared tape.
template <std::floating_point T>
struct LUNetGraph {
  Var<T> box;         ///< [N,4] localizer output
  Var<T> loc_probs;   ///< [N,3,H,W] localizer trunk segmentation
  Var<T> crop_box;    ///< box used for cropping (predicted or teacher)
  Var<T> roi;         ///< [N,C,h,w] cropped image
  Var<T> roi_probs;   ///< [N,3,h,w]
};

/// With a teacher box the crop uses it as a constant and the localizer
/// receives no gradient through the sampler.
template <std::floating_point T>
LUNetGraph<T> lunet_graph(const LUNetModel<T>& model, Binder<T>& loc, Binder<T>& seg,
                          Var<T> images, const Tensor<T>* teacher_box = nullptr) {
  const auto& bb = model.config.localizer.backbone;
  const auto& s = images.shape();
  require(s.size() == 4 && s[1] == bb.in_channels && s[2] == bb.input_height &&
              s[3] == bb.input_width,
          ErrorCode::ShapeMismatch,
          "LU-Net input " + diffcore::shape_string(s) + " does not match the localizer input");
  auto l = model.localizer.layout.forward(loc, images);
  Var<T> crop_box = l.box;
  if (teacher_box) {
    require(teacher_box->shape() == l.box.shape(), ErrorCode::ShapeMismatch,
            "teacher box must be [N,4]");
    crop_box = images.tape()->input(*teacher_box);
  }
  Var<T> roi =
      diffcore::crop_resize(images, crop_box, model.config.crop_height, model.config.crop_width);
  auto r = model.segmenter.layout.forward(seg, roi);
  return {l.box, l.seg_probs, crop_box, roi, r.probs};
}

/// Sanitized normalized box scaled to pixel units and clamped to the image.
inline grid::BoundingBox pixel_box(const diffcore::SanitizedBox& sb, grid::ImageExtent extent) {
  const double h = static_cast<double>(extent.height), w = static_cast<double>(extent.width);
  return {std::clamp(sb.x.lo * h, 0.0, h), std::clamp(sb.x.hi * h, 0.0, h),
          std::clamp(sb.y.lo * w, 0.0, w), std::clamp(sb.y.hi * w, 0.0, w)};
}

/// Nearest-neighbour inverse mapping of ROI labels into an image of the
/// given extent. A pixel centre u inside [min, max) maps to ROI index
/// floor((u - min) / step); pixels outside the box are background.
inline grid::LabelMask remap_to_original(const grid::LabelMask& roi_labels,
                                         const grid::BoundingBox& box, grid::ImageExtent out,
                                         grid::PixelSpacing spacing = {}) {
  constexpr double tol = 1e-9;
  const double h = static_cast<double>(out.height), w = static_cast<double>(out.width);
  require(std::isfinite(box.x_min) && std::isfinite(box.x_max) && std::isfinite(box.y_min) &&
              std::isfinite(box.y_max) && box.x_min >= -tol && box.y_min >= -tol &&
              box.x_max <= h + tol && box.y_max <= w + tol && box.x_min <= box.x_max &&
              box.y_min <= box.y_max,
          ErrorCode::BoxOutOfBounds, "remap box is not inside the image");
  require(roi_labels.height() >= 1 && roi_labels.width() >= 1, ErrorCode::InvalidArgument,
          "empty ROI label map");
  grid::LabelMask result(out.height, out.width, spacing);
  if (box.height() <= 0.0 || box.width() <= 0.0) return result;
  const std::size_t rh = roi_labels.height(), rw = roi_labels.width();
  const double step_x = box.height() / static_cast<double>(rh);
  const double step_y = box.width() / static_cast<double>(rw);
  for (std::size_t r = 0; r < out.height; ++r) {
    const double u = static_cast<double>(r) + 0.5;
    if (u < box.x_min || u >= box.x_max) continue;
    const auto i = std::min(rh - 1, static_cast<std::size_t>(std::floor((u - box.x_min) / step_x)));
    for (std::size_t c = 0; c < out.width; ++c) {
      const double v = static_cast<double>(c) + 0.5;
      if (v < box.y_min || v >= box.y_max) continue;
      const auto j =
          std::min(rw - 1, static_cast<std::size_t>(std::floor((v - box.y_min) / step_y)));
      result.set(r, c, roi_labels.at(i, j));
    }
  }
  return result;
}

/// Per-pixel argmax over classes of item n of [N,3,h,w]; ties go to the
/// lower label.
template <std::floating_point T>
grid::LabelMask argmax_labels(const Tensor<T>& probs, std::size_t n, grid::PixelSpacing spacing = {}) {
  require(probs.rank() == 4 && n < probs.dim(0), ErrorCode::ShapeMismatch,
          "argmax_labels expects [N,C,h,w]");
  const std::size_t classes = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
  grid::LabelMask out(h, w, spacing);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < classes; ++k) {
        if (probs[probs.offset(n, k, r, c)] > probs[probs.offset(n, best, r, c)]) best = k;
      }
      out.set(r, c, static_cast<std::uint8_t>(best));
    }
  }
  return out;
}

template <std::floating_point T>
struct LUNetPrediction {
  Tensor<T> box;        ///< [N,4] localizer output
  Tensor<T> crop_box;   ///< [N,4] box actually used for cropping
  Tensor<T> loc_probs;  ///< [N,3,H,W]
  Tensor<T> roi_probs;  ///< [N,3,h,w]
  std::vector<grid::BoundingBox> pixel_boxes;
  std::vector<grid::LabelMask> roi_labels;
  std::vector<grid::LabelMask> label_maps;  ///< H x W, background outside the box
};

/// Inference pass without gradient tracking.
template <std::floating_point T>
LUNetPrediction<T> lunet_forward(const LUNetModel<T>& model, const Tensor<T>& images,
                                 const Tensor<T>* teacher_box = nullptr) {
  Tape<T> tape;
  Binder<T> loc(tape, model.localizer.params);
  Binder<T> seg(tape, model.segmenter.params);
  auto g = lunet_graph(model, loc, seg, tape.input(images), teacher_box);
  LUNetPrediction<T> p{g.box.value(), g.crop_box.value(), g.loc_probs.value(), g.roi_probs.value(),
                       {}, {}, {}};
  const grid::ImageExtent extent{images.dim(2), images.dim(3)};
  const auto& cb = p.crop_box;
  for (std::size_t n = 0; n < images.dim(0); ++n) {
    const auto sb = diffcore::sanitize_box(std::span<const T>(cb.data() + 4 * n, 4),
                                           extent.height, extent.width);
    p.pixel_boxes.push_back(pixel_box(sb, extent));
    p.roi_labels.push_back(argmax_labels(p.roi_probs, n));
    p.label_maps.push_back(remap_to_original(p.roi_labels.back(), p.pixel_boxes.back(), extent));
  }
  return p;
}

}  // namespace lunetkit::nets
