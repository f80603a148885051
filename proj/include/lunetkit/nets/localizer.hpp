#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "lunetkit/nets/unet.hpp"

namespace lunetkit::nets {

/// U-Net trunk whose pre-softmax logits feed a downsampling branch: stride-2
/// 3x3 conv + relu blocks until both spatial sides are <= 4, then flatten and
/// dense layers of `head_units` widths (relu between, sigmoid on the last 4).
class LocalizerLayout {
 public:
  LocalizerLayout() = default;

  template <std::floating_point T>
  LocalizerLayout(const LocalizerConfig& config, ParameterStore<T>& store,
                  const std::string& prefix, std::mt19937_64& rng)
      : config_(config) {
    config.validate();
    backbone_ = UNetLayout(config.backbone, store, prefix + "backbone.", rng);
    std::size_t in = config.backbone.classes;
    std::size_t h = config.backbone.input_height, w = config.backbone.input_width;
    std::size_t filters = config.branch_filters;
    for (std::size_t k = 0; h > 4 || w > 4; ++k) {
      branch_.push_back(
          make_conv(store, prefix + "branch" + std::to_string(k), in, filters, 3, 2, rng));
      in = filters;
      filters = std::min(filters * 2, config.branch_max_filters);
      h = (h + 1) / 2;
      w = (w + 1) / 2;
    }
    std::size_t units = in * h * w;
    for (std::size_t k = 0; k < config.head_units.size(); ++k) {
      head_.push_back(
          make_dense(store, prefix + "head" + std::to_string(k), units, config.head_units[k], rng));
      units = config.head_units[k];
    }
  }

  const LocalizerConfig& config() const noexcept { return config_; }
  const UNetLayout& backbone() const noexcept { return backbone_; }
  const std::vector<DenseLayer>& head() const noexcept { return head_; }
  std::size_t branch_depth() const noexcept { return branch_.size(); }

  template <std::floating_point T>
  struct Result {
    Var<T> seg_logits;  ///< [N, 3, H, W]
    Var<T> seg_probs;   ///< [N, 3, H, W]
    Var<T> box;         ///< [N, 4] normalized (x_min, x_max, y_min, y_max)
  };

  template <std::floating_point T>
  Result<T> forward(Binder<T>& bind, Var<T> x) const {
    using namespace diffcore;
    auto trunk = backbone_.forward(bind, x);
    Var<T> h = trunk.logits;
    for (const ConvLayer& c : branch_) h = relu(apply(bind, c, h));
    h = flatten(h);
    for (std::size_t k = 0; k < head_.size(); ++k) {
      h = apply(bind, head_[k], h);
      h = k + 1 < head_.size() ? relu(h) : sigmoid(h);
    }
    return {trunk.logits, trunk.probs, h};
  }

 private:
  LocalizerConfig config_;
  UNetLayout backbone_;
  std::vector<ConvLayer> branch_;
  std::vector<DenseLayer> head_;
};

template <std::floating_point T>
struct LocalizerModel {
  ParameterStore<T> params;
  LocalizerLayout layout;
};

template <std::floating_point T>
LocalizerModel<T> build_localizer(const LocalizerConfig& config, std::uint64_t seed) {
  config.validate();
  LocalizerModel<T> model;
  std::mt19937_64 rng(seed);
  model.layout = LocalizerLayout(config, model.params, "", rng);
  return model;
}

template <std::floating_point T>
struct LocalizerOutput {
  Tensor<T> seg_probs;  ///< [N, 3, H, W]
  Tensor<T> box;        ///< [N, 4] in [0, 1]
};

/// Inference pass without gradient tracking.
template <std::floating_point T>
LocalizerOutput<T> localizer_forward(const LocalizerModel<T>& model, const Tensor<T>& images) {
  Tape<T> tape;
  Binder<T> bind(tape, model.params);
  auto r = model.layout.forward(bind, tape.input(images));
  return {r.seg_probs.value(), r.box.value()};
}

}  // namespace lunetkit::nets
