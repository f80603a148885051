#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>

#include "lunetkit/diffcore/ops.hpp"

namespace lunetkit::diffcore {

/// One axis of a sanitized box, with the 2x2 Jacobian of (lo, hi) with
/// respect to the raw predicted (lo, hi).
struct SanitizedAxis {
  double lo = 0.0;
  double hi = 1.0;
  double dlo_draw_lo = 1.0, dlo_draw_hi = 0.0;
  double dhi_draw_lo = 0.0, dhi_draw_hi = 1.0;
};

/// Clamp to [0,1], reorder so lo <= hi, then inflate to at least 2/extent
/// around the centre. The clamp passes gradient only inside [0,1].
inline SanitizedAxis sanitize_axis(double raw_lo, double raw_hi, std::size_t extent) {
  SanitizedAxis a;
  double d_lo = (raw_lo >= 0.0 && raw_lo <= 1.0) ? 1.0 : 0.0;
  double d_hi = (raw_hi >= 0.0 && raw_hi <= 1.0) ? 1.0 : 0.0;
  double lo = std::clamp(raw_lo, 0.0, 1.0);
  double hi = std::clamp(raw_hi, 0.0, 1.0);
  // row k holds d(k-th output)/d(raw_lo, raw_hi)
  std::array<double, 2> j_lo{d_lo, 0.0};
  std::array<double, 2> j_hi{0.0, d_hi};
  if (lo > hi) {
    std::swap(lo, hi);
    std::swap(j_lo, j_hi);
  }
  const double min_extent = 2.0 / static_cast<double>(extent);
  if (hi - lo < min_extent) {
    const double centre = 0.5 * (lo + hi);
    const std::array<double, 2> j_c{0.5 * (j_lo[0] + j_hi[0]), 0.5 * (j_lo[1] + j_hi[1])};
    lo = centre - 0.5 * min_extent;
    hi = centre + 0.5 * min_extent;
    j_lo = j_c;
    j_hi = j_c;
    if (lo < 0.0 || hi > 1.0) {
      const double shift = lo < 0.0 ? -lo : 1.0 - hi;
      lo = std::max(0.0, lo + shift);
      hi = std::min(1.0, hi + shift);
      j_lo = {0.0, 0.0};
      j_hi = {0.0, 0.0};
    }
  }
  a.lo = lo;
  a.hi = hi;
  a.dlo_draw_lo = j_lo[0];
  a.dlo_draw_hi = j_lo[1];
  a.dhi_draw_lo = j_hi[0];
  a.dhi_draw_hi = j_hi[1];
  return a;
}

/// Box as normalized (x_min, x_max, y_min, y_max) after sanitization.
struct SanitizedBox {
  SanitizedAxis x;
  SanitizedAxis y;
};

template <class T>
SanitizedBox sanitize_box(std::span<const T> raw, std::size_t height, std::size_t width) {
  require(raw.size() == 4, ErrorCode::ShapeMismatch, "box needs 4 coordinates");
  return {sanitize_axis(static_cast<double>(raw[0]), static_cast<double>(raw[1]), height),
          sanitize_axis(static_cast<double>(raw[2]), static_cast<double>(raw[3]), width)};
}

/// Source pixel-index coordinate sampled by output index i along one axis:
/// half-pixel aligned, so the full box at matching size is the identity.
struct SamplingAxis {
  double lo_px = 0.0;  ///< lo * extent
  double step = 1.0;   ///< (hi - lo) * extent / out
  std::size_t out = 1;
  std::size_t extent = 1;

  SamplingAxis(const SanitizedAxis& a, std::size_t extent_size, std::size_t out_size)
      : lo_px(a.lo * static_cast<double>(extent_size)),
        step((a.hi - a.lo) * static_cast<double>(extent_size) / static_cast<double>(out_size)),
        out(out_size),
        extent(extent_size) {}

  double raw_source(std::size_t i) const {
    return lo_px + (static_cast<double>(i) + 0.5) * step - 0.5;
  }
  /// Positions between the outermost pixel centre and the image edge are
  /// clamped to that centre; beyond the edge they pass through unchanged.
  bool clamped(std::size_t i) const {
    const double s = raw_source(i), last = static_cast<double>(extent) - 1.0;
    return (s < 0.0 && s >= -0.5) || (s > last && s <= last + 0.5);
  }
  double source(std::size_t i) const {
    const double s = raw_source(i);
    return clamped(i) ? std::clamp(s, 0.0, static_cast<double>(extent) - 1.0) : s;
  }
  /// d source / d lo and d source / d hi.
  double dsource_dlo(std::size_t i) const {
    if (clamped(i)) return 0.0;
    return static_cast<double>(extent) * (1.0 - (static_cast<double>(i) + 0.5) / out);
  }
  double dsource_dhi(std::size_t i) const {
    if (clamped(i)) return 0.0;
    return static_cast<double>(extent) * (static_cast<double>(i) + 0.5) / out;
  }
};

/// Bilinear crop-and-resize of image [N,C,H,W] to [N,C,out_h,out_w] inside
/// the per-item normalized box [N,4]. Differentiable in the image and in the
/// box; samples beyond the image edge read zero.
template <std::floating_point T>
Var<T> crop_resize(Var<T> image, Var<T> box, std::size_t out_h, std::size_t out_w) {
  Tape<T>& tape = detail::same_tape(image, box);
  detail::require_rank4(image, "crop_resize");
  require(out_h >= 2 && out_w >= 2, ErrorCode::OutputTooSmall,
          "crop_resize output must be at least 2x2");
  const Shape is = image.shape();
  const std::size_t n_batch = is[0], channels = is[1], h = is[2], w = is[3];
  require(box.shape() == Shape{n_batch, 4}, ErrorCode::ShapeMismatch,
          "crop_resize box must be [N,4], got " + shape_string(box.shape()));

  Tensor<T> out({n_batch, channels, out_h, out_w});
  const auto& iv = image.value();
  const auto& bv = box.value();
  auto pixel = [&](const T* plane, std::ptrdiff_t r, std::ptrdiff_t c) -> T {
    if (r < 0 || c < 0 || r >= static_cast<std::ptrdiff_t>(h) || c >= static_cast<std::ptrdiff_t>(w)) {
      return T{0};
    }
    return plane[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)];
  };
  for (std::size_t n = 0; n < n_batch; ++n) {
    const auto sb = sanitize_box(std::span<const T>(bv.data() + 4 * n, 4), h, w);
    const SamplingAxis ax(sb.x, h, out_h), ay(sb.y, w, out_w);
    for (std::size_t i = 0; i < out_h; ++i) {
      const double sr = ax.source(i);
      const double r0 = std::floor(sr);
      const T fr = static_cast<T>(sr - r0);
      const auto ri = static_cast<std::ptrdiff_t>(r0);
      for (std::size_t j = 0; j < out_w; ++j) {
        const double sc = ay.source(j);
        const double c0 = std::floor(sc);
        const T fc = static_cast<T>(sc - c0);
        const auto ci = static_cast<std::ptrdiff_t>(c0);
        for (std::size_t c = 0; c < channels; ++c) {
          const T* plane = iv.data() + (n * channels + c) * h * w;
          out[out.offset(n, c, i, j)] = (T{1} - fr) * (T{1} - fc) * pixel(plane, ri, ci) +
                                        (T{1} - fr) * fc * pixel(plane, ri, ci + 1) +
                                        fr * (T{1} - fc) * pixel(plane, ri + 1, ci) +
                                        fr * fc * pixel(plane, ri + 1, ci + 1);
        }
      }
    }
  }

  const std::size_t i_img = image.id(), i_box = box.id();
  return tape.record(std::move(out), {image, box}, [=](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& iv = t.value(i_img);
    const auto& bv = t.value(i_box);
    const bool need_img = t.needs_grad(i_img), need_box = t.needs_grad(i_box);
    auto inside = [&](std::ptrdiff_t r, std::ptrdiff_t c) {
      return r >= 0 && c >= 0 && r < static_cast<std::ptrdiff_t>(h) &&
             c < static_cast<std::ptrdiff_t>(w);
    };
    auto at = [&](const T* plane, std::ptrdiff_t r, std::ptrdiff_t c) -> double {
      return inside(r, c) ? static_cast<double>(plane[static_cast<std::size_t>(r) * w +
                                                      static_cast<std::size_t>(c)])
                          : 0.0;
    };
    for (std::size_t n = 0; n < n_batch; ++n) {
      const auto sb = sanitize_box(std::span<const T>(bv.data() + 4 * n, 4), h, w);
      const SamplingAxis ax(sb.x, h, out_h), ay(sb.y, w, out_w);
      double g_xlo = 0.0, g_xhi = 0.0, g_ylo = 0.0, g_yhi = 0.0;
      for (std::size_t i = 0; i < out_h; ++i) {
        const double sr = ax.source(i);
        const double r0 = std::floor(sr);
        const double fr = sr - r0;
        const auto ri = static_cast<std::ptrdiff_t>(r0);
        double row_dsr = 0.0;
        for (std::size_t j = 0; j < out_w; ++j) {
          const double sc = ay.source(j);
          const double c0 = std::floor(sc);
          const double fc = sc - c0;
          const auto ci = static_cast<std::ptrdiff_t>(c0);
          double col_dsc = 0.0;
          for (std::size_t c = 0; c < channels; ++c) {
            const double go = static_cast<double>(g[((n * channels + c) * out_h + i) * out_w + j]);
            if (go == 0.0) continue;
            const T* plane = iv.data() + (n * channels + c) * h * w;
            if (need_box) {
              const double p00 = at(plane, ri, ci), p01 = at(plane, ri, ci + 1);
              const double p10 = at(plane, ri + 1, ci), p11 = at(plane, ri + 1, ci + 1);
              row_dsr += go * ((1.0 - fc) * (p10 - p00) + fc * (p11 - p01));
              col_dsc += go * ((1.0 - fr) * (p01 - p00) + fr * (p11 - p10));
            }
            if (need_img) {
              T* acc = t.accumulator(i_img).data() + (n * channels + c) * h * w;
              const std::array<std::ptrdiff_t, 4> rr{ri, ri, ri + 1, ri + 1};
              const std::array<std::ptrdiff_t, 4> cc{ci, ci + 1, ci, ci + 1};
              const std::array<double, 4> wt{(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc),
                                             fr * fc};
              for (int k = 0; k < 4; ++k) {
                if (inside(rr[k], cc[k])) {
                  acc[static_cast<std::size_t>(rr[k]) * w + static_cast<std::size_t>(cc[k])] +=
                      static_cast<T>(go * wt[k]);
                }
              }
            }
          }
          if (need_box) {
            g_ylo += col_dsc * ay.dsource_dlo(j);
            g_yhi += col_dsc * ay.dsource_dhi(j);
          }
        }
        if (need_box) {
          g_xlo += row_dsr * ax.dsource_dlo(i);
          g_xhi += row_dsr * ax.dsource_dhi(i);
        }
      }
      if (need_box) {
        auto acc = t.accumulator(i_box);
        acc[4 * n + 0] += static_cast<T>(g_xlo * sb.x.dlo_draw_lo + g_xhi * sb.x.dhi_draw_lo);
        acc[4 * n + 1] += static_cast<T>(g_xlo * sb.x.dlo_draw_hi + g_xhi * sb.x.dhi_draw_hi);
        acc[4 * n + 2] += static_cast<T>(g_ylo * sb.y.dlo_draw_lo + g_yhi * sb.y.dhi_draw_lo);
        acc[4 * n + 3] += static_cast<T>(g_ylo * sb.y.dlo_draw_hi + g_yhi * sb.y.dhi_draw_hi);
      }
    }
  });
}

}  // namespace lunetkit::diffcore
