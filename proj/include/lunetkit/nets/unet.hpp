#pragma once

#include <random>
#include <string>
#include <vector>

#include "lunetkit/diffcore/linear.hpp"
#include "lunetkit/diffcore/ops.hpp"
#include "lunetkit/nets/config.hpp"
#include "lunetkit/nets/params.hpp"

namespace lunetkit::nets {

struct ConvLayer {
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t stride = 1;
};

struct DenseLayer {
  std::size_t weight = 0;
  std::size_t bias = 0;
};

template <std::floating_point T>
ConvLayer make_conv(ParameterStore<T>& store, const std::string& name, std::size_t in,
                    std::size_t out, std::size_t kernel, std::size_t stride, std::mt19937_64& rng) {
  ConvLayer layer;
  layer.weight = store.add(name + ".weight", {out, in, kernel, kernel});
  layer.bias = store.add(name + ".bias", {out});
  layer.stride = stride;
  store.init_fan_in_uniform(layer.weight, in * kernel * kernel, rng);
  return layer;
}

template <std::floating_point T>
DenseLayer make_dense(ParameterStore<T>& store, const std::string& name, std::size_t in,
                      std::size_t out, std::mt19937_64& rng) {
  DenseLayer layer;
  layer.weight = store.add(name + ".weight", {out, in});
  layer.bias = store.add(name + ".bias", {out});
  store.init_fan_in_uniform(layer.weight, in, rng);
  return layer;
}

template <std::floating_point T>
Var<T> apply(Binder<T>& bind, const ConvLayer& layer, Var<T> x) {
  return diffcore::conv2d(x, bind(layer.weight), bind(layer.bias), layer.stride);
}

template <std::floating_point T>
Var<T> apply(Binder<T>& bind, const DenseLayer& layer, Var<T> x) {
  return diffcore::dense(x, bind(layer.weight), bind(layer.bias));
}

/// Layer layout of a U-Net. Encoder: `levels` blocks of conv-relu-conv-relu
/// followed by 2x2 max pooling, filters doubling per level; bottleneck block;
/// decoder: nearest upsample, 3x3 conv, skip concatenation, conv block;
/// final 1x1 conv to class logits and channel softmax.
class UNetLayout {
 public:
  struct Block {
    ConvLayer first;
    ConvLayer second;
  };

  UNetLayout() = default;

  template <std::floating_point T>
  UNetLayout(const UNetConfig& config, ParameterStore<T>& store, const std::string& prefix,
             std::mt19937_64& rng)
      : config_(config) {
    config.validate();
    auto filters = [&](std::size_t level) { return config.base_filters << level; };
    std::size_t in = config.in_channels;
    for (std::size_t l = 0; l < config.levels; ++l) {
      const std::string name = prefix + "enc" + std::to_string(l);
      Block b{make_conv(store, name + ".conv1", in, filters(l), 3, 1, rng),
              make_conv(store, name + ".conv2", filters(l), filters(l), 3, 1, rng)};
      encoder_.push_back(b);
      in = filters(l);
    }
    const std::size_t fb = filters(config.levels);
    bottom_ = {make_conv(store, prefix + "bottom.conv1", in, fb, 3, 1, rng),
               make_conv(store, prefix + "bottom.conv2", fb, fb, 3, 1, rng)};
    in = fb;
    for (std::size_t l = config.levels; l-- > 0;) {
      const std::string name = prefix + "dec" + std::to_string(l);
      up_.push_back(make_conv(store, name + ".up", in, filters(l), 3, 1, rng));
      decoder_.push_back({make_conv(store, name + ".conv1", 2 * filters(l), filters(l), 3, 1, rng),
                          make_conv(store, name + ".conv2", filters(l), filters(l), 3, 1, rng)});
      in = filters(l);
    }
    head_ = make_conv(store, prefix + "head", in, config.classes, 1, 1, rng);
  }

  const UNetConfig& config() const noexcept { return config_; }

  template <std::floating_point T>
  struct Result {
    Var<T> logits;  ///< [N, 3, H, W], pre-softmax
    Var<T> probs;   ///< [N, 3, H, W]
  };

  template <std::floating_point T>
  Result<T> forward(Binder<T>& bind, Var<T> x) const {
    using namespace diffcore;
    const auto& s = x.shape();
    require(s.size() == 4 && s[1] == config_.in_channels && s[2] == config_.input_height &&
                s[3] == config_.input_width,
            ErrorCode::ShapeMismatch,
            "U-Net input " + shape_string(s) + " does not match configured size");
    auto block = [&](const Block& b, Var<T> v) {
      return relu(apply(bind, b.second, relu(apply(bind, b.first, v))));
    };
    std::vector<Var<T>> skips;
    Var<T> h = x;
    for (const Block& b : encoder_) {
      h = block(b, h);
      skips.push_back(h);
      h = maxpool2d(h);
    }
    h = block(bottom_, h);
    for (std::size_t k = 0; k < decoder_.size(); ++k) {
      h = relu(apply(bind, up_[k], nearest_upsample2x(h)));
      h = concat_channels(h, skips[skips.size() - 1 - k]);
      h = block(decoder_[k], h);
    }
    Var<T> logits = apply(bind, head_, h);
    return {logits, channel_softmax(logits)};
  }

 private:
  UNetConfig config_;
  std::vector<Block> encoder_;
  Block bottom_;
  std::vector<ConvLayer> up_;
  std::vector<Block> decoder_;
  ConvLayer head_;
};

/// A U-Net layout with its own parameters.
template <std::floating_point T>
struct UNetModel {
  ParameterStore<T> params;
  UNetLayout layout;

  /// Probabilities for a batch [N, C, H, W] without gradient tracking.
  Tensor<T> predict(const Tensor<T>& images) const {
    Tape<T> tape;
    Binder<T> bind(tape, params);
    return layout.forward(bind, tape.input(images)).probs.value();
  }
};

/// Builds a U-Net with fan-in scaled uniform weights and zero biases drawn
/// from the given seed.
template <std::floating_point T>
UNetModel<T> build_unet(const UNetConfig& config, std::uint64_t seed) {
  config.validate();
  UNetModel<T> model;
  std::mt19937_64 rng(seed);
  model.layout = UNetLayout(config, model.params, "", rng);
  return model;
}

}  // namespace lunetkit::nets
