#pragma once

#include <Eigen/Core>

#include "lunetkit/diffcore/ops.hpp"

namespace lunetkit::diffcore {

namespace detail {

template <class T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapRM = Eigen::Map<RowMajor<T>>;
template <class T>
using ConstMapRM = Eigen::Map<const RowMajor<T>>;

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kernel, stride, pad;
  std::size_t out_h, out_w;

  std::size_t patch() const { return channels * kernel * kernel; }
  std::size_t out_plane() const { return out_h * out_w; }
  bool is_pointwise() const { return kernel == 1 && stride == 1; }
};

/// Output columns q in [first, last) whose source column q*stride + j - pad
/// lies inside [0, width).
inline std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t j) {
  const auto ceil_div = [](std::size_t a, std::size_t b) { return (a + b - 1) / b; };
  const std::size_t first = j >= g.pad ? 0 : ceil_div(g.pad - j, g.stride);
  const std::size_t last = std::min(g.out_w, g.width + g.pad > j ? ceil_div(g.width + g.pad - j, g.stride) : 0);
  return {std::min(first, last), last};
}

/// col[(c*k + i)*k + j][r*out_w + q] = x[c][r*stride + i - pad][q*stride + j - pad]
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* xc = x + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kernel; ++i) {
      for (std::size_t j = 0; j < g.kernel; ++j) {
        T* row = col + ((c * g.kernel + i) * g.kernel + j) * plane;
        const auto [q0, q1] = valid_columns(g, j);
        for (std::size_t r = 0; r < g.out_h; ++r) {
          const std::ptrdiff_t sr = static_cast<std::ptrdiff_t>(r * g.stride + i) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + r * g.out_w;
          if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill_n(dst, g.out_w, T{0});
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(sr) * g.width;
          std::fill(dst, dst + q0, T{0});
          if (g.stride == 1) {
            std::copy(src + (q0 + j - g.pad), src + (q1 + j - g.pad), dst + q0);
          } else {
            for (std::size_t q = q0; q < q1; ++q) dst[q] = src[q * g.stride + j - g.pad];
          }
          std::fill(dst + q1, dst + g.out_w, T{0});
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* xc = dx + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kernel; ++i) {
      for (std::size_t j = 0; j < g.kernel; ++j) {
        const T* row = col + ((c * g.kernel + i) * g.kernel + j) * plane;
        const auto [q0, q1] = valid_columns(g, j);
        for (std::size_t r = 0; r < g.out_h; ++r) {
          const std::ptrdiff_t sr = static_cast<std::ptrdiff_t>(r * g.stride + i) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = xc + static_cast<std::size_t>(sr) * g.width;
          const T* src = row + r * g.out_w;
          for (std::size_t q = q0; q < q1; ++q) dst[q * g.stride + j - g.pad] += src[q];
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation with "same" zero padding (pad = k/2). With stride s
/// the output is ceil(H/s) x ceil(W/s).
template <std::floating_point T>
Var<T> conv2d(Var<T> x, Var<T> kernel, Var<T> bias, std::size_t stride = 1) {
  Tape<T>& tape = detail::same_tape(x, kernel);
  detail::same_tape(x, bias);
  detail::require_rank4(x, "conv2d");
  const Shape xs = x.shape();
  const Shape ks = kernel.shape();
  require(ks.size() == 4 && ks[1] == xs[1] && ks[2] == ks[3], ErrorCode::ShapeMismatch,
          "conv2d kernel " + shape_string(ks) + " incompatible with input " + shape_string(xs));
  require(ks[2] % 2 == 1, ErrorCode::ShapeMismatch, "conv2d kernel size must be odd");
  require(bias.shape() == Shape{ks[0]}, ErrorCode::ShapeMismatch,
          "conv2d bias must have shape [" + std::to_string(ks[0]) + "]");
  require(stride >= 1, ErrorCode::ShapeMismatch, "conv2d stride must be >= 1");

  const std::size_t pad = ks[2] / 2;
  detail::ConvGeometry g{xs[1], xs[2], xs[3], ks[2], stride, pad,
                         (xs[2] + 2 * pad - ks[2]) / stride + 1,
                         (xs[3] + 2 * pad - ks[2]) / stride + 1};
  const std::size_t n_batch = xs[0], filters = ks[0];
  Tensor<T> out({n_batch, filters, g.out_h, g.out_w});

  detail::ConstMapRM<T> w_mat(kernel.value().data(), filters, g.patch());
  const T* bv = bias.value().data();
  Buffer<T> col(g.is_pointwise() ? 0 : g.patch() * g.out_plane());
  for (std::size_t n = 0; n < n_batch; ++n) {
    const T* xn = x.value().data() + n * g.channels * g.height * g.width;
    const T* col_ptr = xn;
    if (!g.is_pointwise()) {
      detail::im2col(xn, g, col.data());
      col_ptr = col.data();
    }
    detail::ConstMapRM<T> col_mat(col_ptr, g.patch(), g.out_plane());
    detail::MapRM<T> out_mat(out.data() + n * filters * g.out_plane(), filters, g.out_plane());
    out_mat.noalias() = w_mat * col_mat;
    for (std::size_t f = 0; f < filters; ++f) out_mat.row(f).array() += bv[f];
  }

  const std::size_t ix = x.id(), ik = kernel.id(), ib = bias.id();
  return tape.record(
      std::move(out), {x, kernel, bias}, [ix, ik, ib, g, n_batch, filters](Tape<T>& t, std::size_t self) {
        auto grad = t.grad(self);
        const auto& xv = t.value(ix);
        detail::ConstMapRM<T> w_mat(t.value(ik).data(), filters, g.patch());
        const bool need_x = t.needs_grad(ix), need_k = t.needs_grad(ik), need_b = t.needs_grad(ib);
        Buffer<T> col(g.is_pointwise() ? 0 : g.patch() * g.out_plane());
        Buffer<T> dcol(need_x && !g.is_pointwise() ? col.size() : 0);
        for (std::size_t n = 0; n < n_batch; ++n) {
          detail::ConstMapRM<T> g_mat(grad.data() + n * filters * g.out_plane(), filters,
                                      g.out_plane());
          if (need_b) {
            auto acc = t.accumulator(ib);
            for (std::size_t f = 0; f < filters; ++f) acc[f] += g_mat.row(f).sum();
          }
          const T* xn = xv.data() + n * g.channels * g.height * g.width;
          if (need_k) {
            const T* col_ptr = xn;
            if (!g.is_pointwise()) {
              detail::im2col(xn, g, col.data());
              col_ptr = col.data();
            }
            detail::ConstMapRM<T> col_mat(col_ptr, g.patch(), g.out_plane());
            detail::MapRM<T> dk(t.accumulator(ik).data(), filters, g.patch());
            dk.noalias() += g_mat * col_mat.transpose();
          }
          if (need_x) {
            T* dxn = t.accumulator(ix).data() + n * g.channels * g.height * g.width;
            if (g.is_pointwise()) {
              detail::MapRM<T> dx_mat(dxn, g.channels, g.out_plane());
              dx_mat.noalias() += w_mat.transpose() * g_mat;
            } else {
              detail::MapRM<T> dcol_mat(dcol.data(), g.patch(), g.out_plane());
              dcol_mat.noalias() = w_mat.transpose() * g_mat;
              detail::col2im_add(dcol.data(), g, dxn);
            }
          }
        }
      });
}

/// Affine map y = x W^T + b for x [N, D_in], W [D_out, D_in], b [D_out].
template <std::floating_point T>
Var<T> dense(Var<T> x, Var<T> weights, Var<T> bias) {
  Tape<T>& tape = detail::same_tape(x, weights);
  detail::same_tape(x, bias);
  const Shape xs = x.shape();
  const Shape ws = weights.shape();
  require(xs.size() == 2 && ws.size() == 2 && ws[1] == xs[1], ErrorCode::ShapeMismatch,
          "dense: input " + shape_string(xs) + " vs weights " + shape_string(ws));
  require(bias.shape() == Shape{ws[0]}, ErrorCode::ShapeMismatch, "dense: bias shape");
  const std::size_t n = xs[0], d_in = xs[1], d_out = ws[0];
  Tensor<T> out({n, d_out});
  detail::ConstMapRM<T> x_mat(x.value().data(), n, d_in);
  detail::ConstMapRM<T> w_mat(weights.value().data(), d_out, d_in);
  detail::MapRM<T> y(out.data(), n, d_out);
  y.noalias() = x_mat * w_mat.transpose();
  const T* bv = bias.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < d_out; ++o) y(i, o) += bv[o];
  }
  const std::size_t ix = x.id(), iw = weights.id(), ib = bias.id();
  return tape.record(std::move(out), {x, weights, bias},
                     [ix, iw, ib, n, d_in, d_out](Tape<T>& t, std::size_t self) {
                       detail::ConstMapRM<T> g(t.grad(self).data(), n, d_out);
                       if (t.needs_grad(ix)) {
                         detail::ConstMapRM<T> w_mat(t.value(iw).data(), d_out, d_in);
                         detail::MapRM<T> dx(t.accumulator(ix).data(), n, d_in);
                         dx.noalias() += g * w_mat;
                       }
                       if (t.needs_grad(iw)) {
                         detail::ConstMapRM<T> x_mat(t.value(ix).data(), n, d_in);
                         detail::MapRM<T> dw(t.accumulator(iw).data(), d_out, d_in);
                         dw.noalias() += g.transpose() * x_mat;
                       }
                       if (t.needs_grad(ib)) {
                         auto acc = t.accumulator(ib);
                         for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t o = 0; o < d_out; ++o) acc[o] += g(i, o);
                         }
                       }
                     });
}

}  // namespace lunetkit::diffcore
