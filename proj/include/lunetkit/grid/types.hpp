#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lunetkit/error.hpp"

namespace lunetkit::grid {

// Axis convention: x runs along rows (image height), y along columns (width).
// A pixel at index (r, c) occupies the unit cell [r, r+1) x [c, c+1).

/// Physical pixel size in millimetres.
struct PixelSpacing {
  double dx = 1.0;  ///< mm per pixel along x (rows)
  double dy = 1.0;  ///< mm per pixel along y (columns)

  void validate() const {
    require(std::isfinite(dx) && std::isfinite(dy) && dx > 0.0 && dy > 0.0,
            ErrorCode::InvalidArgument, "pixel spacing must be positive and finite");
  }
  bool operator==(const PixelSpacing&) const = default;
};

struct ImageExtent {
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const ImageExtent&) const = default;
};

/// Grayscale image with intensities in [0, 1].
class ImageGrid {
 public:
  ImageGrid() = default;
  ImageGrid(std::size_t height, std::size_t width, PixelSpacing spacing = {}, float fill = 0.0f)
      : height_(height), width_(width), pixels_(height * width, fill), spacing_(spacing) {
    require(height >= 1 && width >= 1, ErrorCode::InvalidArgument, "image must be at least 1x1");
    require(std::isfinite(fill) && fill >= 0.0f && fill <= 1.0f, ErrorCode::InvalidArgument,
            "fill intensity outside [0,1]");
    spacing.validate();
  }
  ImageGrid(std::size_t height, std::size_t width, std::vector<float> pixels, PixelSpacing spacing)
      : height_(height), width_(width), pixels_(std::move(pixels)), spacing_(spacing) {
    require(height >= 1 && width >= 1, ErrorCode::InvalidArgument, "image must be at least 1x1");
    require(pixels_.size() == height * width, ErrorCode::ShapeMismatch,
            "pixel count does not match height*width");
    for (float v : pixels_) {
      require(std::isfinite(v) && v >= 0.0f && v <= 1.0f, ErrorCode::InvalidArgument,
              "pixel intensity outside [0,1]");
    }
    spacing.validate();
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  ImageExtent extent() const noexcept { return {height_, width_}; }
  const PixelSpacing& spacing() const noexcept { return spacing_; }
  const std::vector<float>& pixels() const noexcept { return pixels_; }

  float at(std::size_t r, std::size_t c) const { return pixels_[r * width_ + c]; }
  /// Caller keeps the value in [0,1].
  float& at(std::size_t r, std::size_t c) { return pixels_[r * width_ + c]; }

  bool operator==(const ImageGrid&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> pixels_;
  PixelSpacing spacing_;
};

enum class Label : std::uint8_t { background = 0, cavity = 1, myocardium = 2 };

/// endo = LV cavity (class 1); epi = cavity plus myocardium (classes 1 and 2).
enum class Structure { endo, epi };

inline std::string to_string(Structure s) { return s == Structure::endo ? "endo" : "epi"; }

constexpr bool in_structure(std::uint8_t label, Structure s) noexcept {
  return s == Structure::endo ? label == 1 : (label == 1 || label == 2);
}

class LabelMask {
 public:
  LabelMask() = default;
  LabelMask(std::size_t height, std::size_t width, PixelSpacing spacing = {})
      : height_(height), width_(width), labels_(height * width, 0), spacing_(spacing) {
    require(height >= 1 && width >= 1, ErrorCode::InvalidArgument, "mask must be at least 1x1");
    spacing.validate();
  }
  LabelMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> labels,
            PixelSpacing spacing)
      : height_(height), width_(width), labels_(std::move(labels)), spacing_(spacing) {
    require(height >= 1 && width >= 1, ErrorCode::InvalidArgument, "mask must be at least 1x1");
    require(labels_.size() == height * width, ErrorCode::ShapeMismatch,
            "label count does not match height*width");
    for (auto v : labels_) {
      require(v <= 2, ErrorCode::InvalidArgument, "label outside {0,1,2}");
    }
    spacing.validate();
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  ImageExtent extent() const noexcept { return {height_, width_}; }
  const PixelSpacing& spacing() const noexcept { return spacing_; }
  void set_spacing(PixelSpacing spacing) {
    spacing.validate();
    spacing_ = spacing;
  }
  const std::vector<std::uint8_t>& labels() const noexcept { return labels_; }

  std::uint8_t at(std::size_t r, std::size_t c) const { return labels_[r * width_ + c]; }
  void set(std::size_t r, std::size_t c, std::uint8_t label) {
    require(label <= 2, ErrorCode::InvalidArgument, "label outside {0,1,2}");
    labels_[r * width_ + c] = label;
  }
  bool contains(Structure s, std::size_t r, std::size_t c) const {
    return in_structure(at(r, c), s);
  }
  std::size_t count(Structure s) const {
    std::size_t n = 0;
    for (auto v : labels_) n += in_structure(v, s) ? 1 : 0;
    return n;
  }

  bool operator==(const LabelMask&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> labels_;
  PixelSpacing spacing_;
};

/// Axis-aligned box in continuous pixel coordinates.
struct BoundingBox {
  double x_min = 0.0;
  double x_max = 0.0;
  double y_min = 0.0;
  double y_max = 0.0;

  double height() const noexcept { return x_max - x_min; }
  double width() const noexcept { return y_max - y_min; }
  double center_x() const noexcept { return 0.5 * (x_min + x_max); }
  double center_y() const noexcept { return 0.5 * (y_min + y_max); }
  double area() const noexcept { return height() * width(); }
  bool valid() const noexcept {
    return std::isfinite(x_min) && std::isfinite(x_max) && std::isfinite(y_min) &&
           std::isfinite(y_max) && x_min <= x_max && y_min <= y_max;
  }
  bool contains(const BoundingBox& other) const noexcept {
    return other.x_min >= x_min && other.x_max <= x_max && other.y_min >= y_min &&
           other.y_max <= y_max;
  }
  bool operator==(const BoundingBox&) const = default;
};

/// Pixel-centre position; x along rows, y along columns.
struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

struct Contour {
  std::vector<Point> points;
  PixelSpacing spacing;
};

enum class View { two_chamber, four_chamber };
enum class Instant { ed, es };

inline constexpr std::array<View, 2> kViews{View::two_chamber, View::four_chamber};
inline constexpr std::array<Instant, 2> kInstants{Instant::ed, Instant::es};
inline constexpr std::array<Structure, 2> kStructures{Structure::endo, Structure::epi};

inline std::string to_string(View v) { return v == View::two_chamber ? "2CH" : "4CH"; }
inline std::string to_string(Instant i) { return i == Instant::ed ? "ED" : "ES"; }

inline View view_from_string(const std::string& s) {
  require(s == "2CH" || s == "4CH", ErrorCode::InvalidArgument, "unknown view " + s);
  return s == "2CH" ? View::two_chamber : View::four_chamber;
}
inline Instant instant_from_string(const std::string& s) {
  require(s == "ED" || s == "ES", ErrorCode::InvalidArgument, "unknown instant " + s);
  return s == "ED" ? Instant::ed : Instant::es;
}
inline Structure structure_from_string(const std::string& s) {
  require(s == "endo" || s == "epi", ErrorCode::InvalidArgument, "unknown structure " + s);
  return s == "endo" ? Structure::endo : Structure::epi;
}

}  // namespace lunetkit::grid
