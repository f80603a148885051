#pragma once

#include <png.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lunetkit/grid/types.hpp"

namespace lunetkit::grid {

namespace detail {

struct DecodedGray {
  std::size_t height = 0;
  std::size_t width = 0;
  bool sixteen_bit = false;
  std::vector<std::uint16_t> values;
};

inline DecodedGray decode_gray_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    fail(ErrorCode::IoFailure, "cannot read PNG " + path.string() + ": " + image.message);
  }
  DecodedGray out;
  out.height = image.height;
  out.width = image.width;
  out.sixteen_bit = (image.format & PNG_FORMAT_FLAG_LINEAR) != 0;
  const std::size_t n = out.height * out.width;
  out.values.resize(n);
  bool ok = false;
  if (out.sixteen_bit) {
    image.format = PNG_FORMAT_LINEAR_Y;
    ok = png_image_finish_read(&image, nullptr, out.values.data(), 0, nullptr) != 0;
  } else {
    image.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(n);
    ok = png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr) != 0;
    for (std::size_t i = 0; i < n; ++i) out.values[i] = buf[i];
  }
  if (!ok) {
    std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorCode::IoFailure, "cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

inline void encode_png(const std::filesystem::path& path, std::size_t height, std::size_t width,
                       std::uint32_t format, const void* data) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, data, 0, nullptr)) {
    fail(ErrorCode::IoFailure, "cannot write PNG " + path.string() + ": " + image.message);
  }
}

}  // namespace detail

/// Reads an 8- or 16-bit grayscale PNG; intensities are scaled to [0, 1].
inline ImageGrid read_image_png(const std::filesystem::path& path, PixelSpacing spacing) {
  auto decoded = detail::decode_gray_png(path);
  const float levels = decoded.sixteen_bit ? 65535.0f : 255.0f;
  std::vector<float> pixels(decoded.values.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<float>(decoded.values[i]) / levels;
  return ImageGrid(decoded.height, decoded.width, std::move(pixels), spacing);
}

/// Writes an 8-bit grayscale PNG (intensity rounded to the nearest level).
inline void write_image_png(const std::filesystem::path& path, const ImageGrid& image) {
  std::vector<std::uint8_t> buf(image.pixels().size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    buf[i] = static_cast<std::uint8_t>(std::lround(image.pixels()[i] * 255.0f));
  }
  detail::encode_png(path, image.height(), image.width(), PNG_FORMAT_GRAY, buf.data());
}

inline void write_image_png16(const std::filesystem::path& path, const ImageGrid& image) {
  std::vector<std::uint16_t> buf(image.pixels().size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    buf[i] = static_cast<std::uint16_t>(std::lround(image.pixels()[i] * 65535.0f));
  }
  detail::encode_png(path, image.height(), image.width(), PNG_FORMAT_LINEAR_Y, buf.data());
}

/// Label masks are 8-bit grayscale PNGs holding the raw values {0, 1, 2}.
inline LabelMask read_mask_png(const std::filesystem::path& path, PixelSpacing spacing) {
  auto decoded = detail::decode_gray_png(path);
  require(!decoded.sixteen_bit, ErrorCode::IoFailure, "label masks must be 8-bit: " + path.string());
  std::vector<std::uint8_t> labels(decoded.values.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(decoded.values[i] <= 2, ErrorCode::IoFailure,
            "label outside {0,1,2} in " + path.string());
    labels[i] = static_cast<std::uint8_t>(decoded.values[i]);
  }
  return LabelMask(decoded.height, decoded.width, std::move(labels), spacing);
}

inline void write_mask_png(const std::filesystem::path& path, const LabelMask& mask) {
  detail::encode_png(path, mask.height(), mask.width(), PNG_FORMAT_GRAY, mask.labels().data());
}

/// Interleaved 8-bit RGB.
inline void write_rgb_png(const std::filesystem::path& path, std::size_t height, std::size_t width,
                          const std::vector<std::uint8_t>& rgb) {
  require(rgb.size() == height * width * 3, ErrorCode::ShapeMismatch, "RGB buffer size");
  detail::encode_png(path, height, width, PNG_FORMAT_RGB, rgb.data());
}

// JSON sidecar fields: dx_mm, dy_mm, bbox: [x_min, x_max, y_min, y_max].

inline nlohmann::json bbox_to_json(const BoundingBox& bb) {
  return nlohmann::json::array({bb.x_min, bb.x_max, bb.y_min, bb.y_max});
}

inline BoundingBox bbox_from_json(const nlohmann::json& j) {
  require(j.is_array() && j.size() == 4, ErrorCode::IoFailure, "bbox must be a 4-element array");
  BoundingBox bb{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  require(bb.valid(), ErrorCode::IoFailure, "bbox coordinates out of order");
  return bb;
}

struct Sidecar {
  PixelSpacing spacing;
  BoundingBox bbox;
};

inline nlohmann::json sidecar_to_json(const Sidecar& s) {
  return {{"dx_mm", s.spacing.dx}, {"dy_mm", s.spacing.dy}, {"bbox", bbox_to_json(s.bbox)}};
}

inline Sidecar sidecar_from_json(const nlohmann::json& j) {
  try {
    Sidecar s{{j.at("dx_mm").get<double>(), j.at("dy_mm").get<double>()},
              bbox_from_json(j.at("bbox"))};
    s.spacing.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::IoFailure, std::string("malformed sidecar: ") + e.what());
  }
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::IoFailure, "cannot parse " + path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  require(static_cast<bool>(out), ErrorCode::IoFailure, "write failed for " + path.string());
}

}  // namespace lunetkit::grid
