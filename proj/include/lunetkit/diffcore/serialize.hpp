#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lunetkit/diffcore/tensor.hpp"

namespace lunetkit::diffcore {

// Parameter file layout (all integers little-endian):
//   magic "LUNK", u32 version,
//   u32 entry count, then per entry: u32 name length, name bytes,
//                                    u32 rank, rank x u64 dims,
//   followed by every entry's values as IEEE-754 float32 in manifest order.

inline constexpr std::array<char, 4> kParamMagic{'L', 'U', 'N', 'K'};
inline constexpr std::uint32_t kParamVersion = 1;

struct ManifestEntry {
  std::string name;
  Shape shape;
  bool operator==(const ManifestEntry&) const = default;
};

template <std::floating_point T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

namespace detail {

template <class U>
void put_le(std::ostream& os, U v) {
  std::array<unsigned char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <class U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  require(static_cast<bool>(is), ErrorCode::IoFailure, "truncated parameter file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace detail

template <std::floating_point T>
void write_parameters(std::ostream& os, const std::vector<NamedTensor<T>>& params) {
  os.write(kParamMagic.data(), kParamMagic.size());
  detail::put_le<std::uint32_t>(os, kParamVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) detail::put_le<std::uint64_t>(os, d);
  }
  for (const auto& p : params) {
    for (T v : p.tensor.values()) {
      detail::put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  require(static_cast<bool>(os), ErrorCode::IoFailure, "failed writing parameters");
}

template <std::floating_point T>
std::vector<NamedTensor<T>> read_parameters(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  require(static_cast<bool>(is) && magic == kParamMagic, ErrorCode::IoFailure,
          "not a parameter file (bad magic)");
  const auto version = detail::get_le<std::uint32_t>(is);
  require(version == kParamVersion, ErrorCode::IoFailure,
          "unsupported parameter file version " + std::to_string(version));
  const auto count = detail::get_le<std::uint32_t>(is);
  std::vector<ManifestEntry> manifest(count);
  for (auto& e : manifest) {
    const auto len = detail::get_le<std::uint32_t>(is);
    require(len < (1u << 16), ErrorCode::IoFailure, "parameter name too long");
    e.name.resize(len);
    is.read(e.name.data(), len);
    const auto rank = detail::get_le<std::uint32_t>(is);
    require(rank <= 8, ErrorCode::IoFailure, "parameter rank too large");
    for (std::uint32_t r = 0; r < rank; ++r) {
      e.shape.push_back(static_cast<std::size_t>(detail::get_le<std::uint64_t>(is)));
    }
  }
  std::vector<NamedTensor<T>> out;
  out.reserve(count);
  for (auto& e : manifest) {
    Tensor<T> t(e.shape);
    for (auto& v : t.values()) {
      v = static_cast<T>(std::bit_cast<float>(detail::get_le<std::uint32_t>(is)));
    }
    out.push_back({std::move(e.name), std::move(t)});
  }
  return out;
}

template <std::floating_point T>
void save_parameters(const std::filesystem::path& path, const std::vector<NamedTensor<T>>& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorCode::IoFailure, "cannot open " + path.string());
  write_parameters(os, params);
}

template <std::floating_point T>
std::vector<NamedTensor<T>> load_parameters(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::IoFailure, "cannot open " + path.string());
  return read_parameters<T>(is);
}

}  // namespace lunetkit::diffcore
