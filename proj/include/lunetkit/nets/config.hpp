#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"
#include "lunetkit/error.hpp"

namespace lunetkit::nets {

/// Encoder-decoder segmentation network.
struct UNetConfig {
  std::size_t levels = 4;         ///< number of pooling stages
  std::size_t base_filters = 16;  ///< filters at level 0, doubling per level
  std::size_t input_height = 128;
  std::size_t input_width = 128;
  std::size_t in_channels = 1;
  std::size_t classes = 3;

  void validate() const {
    require(levels >= 2, ErrorCode::InvalidConfig, "U-Net needs at least 2 levels");
    require(base_filters >= 4, ErrorCode::InvalidConfig, "U-Net base_filters must be >= 4");
    require(in_channels >= 1, ErrorCode::InvalidConfig, "U-Net needs at least one input channel");
    require(classes == 3, ErrorCode::InvalidConfig, "U-Net segments exactly 3 classes");
    const std::size_t div = std::size_t{1} << levels;
    require(input_height >= div && input_width >= div && input_height % div == 0 &&
                input_width % div == 0,
            ErrorCode::InvalidConfig, "input size must be divisible by 2^levels");
  }
  bool operator==(const UNetConfig&) const = default;
};

/// mo: localization loss only; mu: localization plus auxiliary segmentation.
enum class LocalizerMode { mo, mu };

struct LocalizerConfig {
  UNetConfig backbone;
  std::vector<std::size_t> head_units{256, 64, 16, 4};
  std::size_t branch_filters = 16;      ///< first strided conv of the downsampling branch
  std::size_t branch_max_filters = 64;  ///< cap when doubling per block
  LocalizerMode mode = LocalizerMode::mu;

  void validate() const {
    backbone.validate();
    require(!head_units.empty() && head_units.back() == 4, ErrorCode::InvalidConfig,
            "localizer head must end in 4 units");
    for (auto u : head_units) require(u >= 1, ErrorCode::InvalidConfig, "empty dense layer");
    require(branch_filters >= 1 && branch_max_filters >= branch_filters, ErrorCode::InvalidConfig,
            "invalid downsampling branch widths");
  }
  bool operator==(const LocalizerConfig&) const = default;
};

struct LUNetConfig {
  LocalizerConfig localizer;
  UNetConfig segmenter;
  double margin = 0.05;
  std::size_t crop_height = 128;
  std::size_t crop_width = 128;

  void validate() const {
    localizer.validate();
    segmenter.validate();
    require(margin >= 0.0, ErrorCode::InvalidConfig, "margin must be non-negative");
    require(crop_height >= 2 && crop_width >= 2, ErrorCode::InvalidConfig, "crop too small");
    require(segmenter.input_height == crop_height && segmenter.input_width == crop_width,
            ErrorCode::InvalidConfig, "segmenter input size must equal the crop size");
    require(segmenter.in_channels == localizer.backbone.in_channels, ErrorCode::InvalidConfig,
            "segmenter and localizer must see the same image channels");
  }
  bool operator==(const LUNetConfig&) const = default;
};

/// Desk-scale defaults: 128x128 input and crop, 4 levels, 16 base filters.
inline LUNetConfig desk_scale_config() { return LUNetConfig{}; }

/// Full-scale localizer head widths (1024, 256, 32, 4).
inline std::vector<std::size_t> full_scale_head_units() { return {1024, 256, 32, 4}; }

// JSON mirrors the struct fields one to one.

inline void to_json(nlohmann::json& j, const UNetConfig& c) {
  j = {{"levels", c.levels},
       {"base_filters", c.base_filters},
       {"input_height", c.input_height},
       {"input_width", c.input_width},
       {"in_channels", c.in_channels},
       {"classes", c.classes}};
}

inline void from_json(const nlohmann::json& j, UNetConfig& c) {
  c = UNetConfig{};
  c.levels = j.value("levels", c.levels);
  c.base_filters = j.value("base_filters", c.base_filters);
  c.input_height = j.value("input_height", c.input_height);
  c.input_width = j.value("input_width", c.input_width);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.classes = j.value("classes", c.classes);
}

inline void to_json(nlohmann::json& j, const LocalizerConfig& c) {
  j = {{"backbone", c.backbone},
       {"head_units", c.head_units},
       {"branch_filters", c.branch_filters},
       {"branch_max_filters", c.branch_max_filters},
       {"mode", c.mode == LocalizerMode::mu ? "mu" : "mo"}};
}

inline void from_json(const nlohmann::json& j, LocalizerConfig& c) {
  c = LocalizerConfig{};
  if (j.contains("backbone")) c.backbone = j.at("backbone").get<UNetConfig>();
  c.head_units = j.value("head_units", c.head_units);
  c.branch_filters = j.value("branch_filters", c.branch_filters);
  c.branch_max_filters = j.value("branch_max_filters", c.branch_max_filters);
  const std::string mode = j.value("mode", std::string("mu"));
  require(mode == "mu" || mode == "mo", ErrorCode::InvalidConfig, "localizer mode must be mu or mo");
  c.mode = mode == "mu" ? LocalizerMode::mu : LocalizerMode::mo;
}

inline void to_json(nlohmann::json& j, const LUNetConfig& c) {
  j = {{"localizer", c.localizer},
       {"segmenter", c.segmenter},
       {"margin", c.margin},
       {"crop_height", c.crop_height},
       {"crop_width", c.crop_width}};
}

inline void from_json(const nlohmann::json& j, LUNetConfig& c) {
  c = LUNetConfig{};
  if (j.contains("localizer")) c.localizer = j.at("localizer").get<LocalizerConfig>();
  if (j.contains("segmenter")) c.segmenter = j.at("segmenter").get<UNetConfig>();
  c.margin = j.value("margin", c.margin);
  c.crop_height = j.value("crop_height", c.crop_height);
  c.crop_width = j.value("crop_width", c.crop_width);
}

}  // namespace lunetkit::nets
