#pragma once

#include <cmath>
#include <limits>

#include "lunetkit/diffcore/tape.hpp"

namespace lunetkit::diffcore {

namespace detail {

template <std::floating_point T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b) {
  require(a.valid() && a.tape() == b.tape(), ErrorCode::InvalidArgument,
          "operands recorded on different tapes");
  return *a.tape();
}

template <std::floating_point T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
          std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

template <std::floating_point T>
void require_rank4(const Var<T>& x, const char* op) {
  require(x.shape().size() == 4, ErrorCode::ShapeMismatch,
          std::string(op) + " expects [N,C,H,W], got " + shape_string(x.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <std::floating_point T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    for (std::size_t in : {ia, ib}) {
      if (!t.needs_grad(in)) continue;
      auto acc = t.accumulator(in);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }
  });
}

template <std::floating_point T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    if (t.needs_grad(ia)) {
      auto acc = t.accumulator(ia);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }
    if (t.needs_grad(ib)) {
      auto acc = t.accumulator(ib);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] -= g[i];
    }
  });
}

template <std::floating_point T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    if (t.needs_grad(ia)) {
      auto acc = t.accumulator(ia);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * bv[i];
    }
    if (t.needs_grad(ib)) {
      auto acc = t.accumulator(ib);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * av[i];
    }
  });
}

template <std::floating_point T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, factor](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    auto acc = t.accumulator(ia);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += factor * g[i];
  });
}

template <std::floating_point T>
Var<T> square(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= v;
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& av = t.value(ia);
    auto acc = t.accumulator(ia);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += T{2} * av[i] * g[i];
  });
}

/// Sum of all elements, shape [1].
template <std::floating_point T>
Var<T> sum(Var<T> a) {
  T total{0};
  for (T v : a.value().values()) total += v;
  const std::size_t ia = a.id();
  return a.tape()->record(Tensor<T>({1}, total), {a}, [ia](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (auto& v : t.accumulator(ia)) v += g;
  });
}

template <std::floating_point T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T{1} / static_cast<T>(a.value().size()));
}

// ---------------------------------------------------------------------------
// Activations

template <std::floating_point T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& av = t.value(ia);
    auto acc = t.accumulator(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] > T{0}) acc[i] += g[i];
    }
  });
}

template <std::floating_point T>
Var<T> sigmoid(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = T{1} / (T{1} + std::exp(-v));
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& y = t.value(self);
    auto acc = t.accumulator(ia);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * y[i] * (T{1} - y[i]);
  });
}

/// Softmax over axis 1 of [N, C, H, W]; per-pixel class values sum to 1.
template <std::floating_point T>
Var<T> channel_softmax(Var<T> x) {
  detail::require_rank4(x, "channel_softmax");
  const auto& s = x.shape();
  const std::size_t n_batch = s[0], channels = s[1], plane = s[2] * s[3];
  Tensor<T> out = x.value();
  for (std::size_t n = 0; n < n_batch; ++n) {
    T* base = out.data() + n * channels * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t c = 0; c < channels; ++c) mx = std::max(mx, base[c * plane + p]);
      T denom{0};
      for (std::size_t c = 0; c < channels; ++c) {
        T e = std::exp(base[c * plane + p] - mx);
        base[c * plane + p] = e;
        denom += e;
      }
      for (std::size_t c = 0; c < channels; ++c) base[c * plane + p] /= denom;
    }
  }
  const std::size_t ix = x.id();
  return x.tape()->record(
      std::move(out), {x}, [ix, n_batch, channels, plane](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        const auto& y = t.value(self);
        auto acc = t.accumulator(ix);
        for (std::size_t n = 0; n < n_batch; ++n) {
          const std::size_t base = n * channels * plane;
          for (std::size_t p = 0; p < plane; ++p) {
            T dot{0};
            for (std::size_t c = 0; c < channels; ++c) {
              dot += y[base + c * plane + p] * g[base + c * plane + p];
            }
            for (std::size_t c = 0; c < channels; ++c) {
              const std::size_t k = base + c * plane + p;
              acc[k] += y[k] * (g[k] - dot);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Structure

template <std::floating_point T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value();
  out.reshape(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    auto acc = t.accumulator(ia);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
  });
}

/// [N, ...] -> [N, prod(...)]
template <std::floating_point T>
Var<T> flatten(Var<T> a) {
  const auto& s = a.shape();
  require(!s.empty(), ErrorCode::ShapeMismatch, "flatten of a rank-0 tensor");
  return reshape(a, Shape{s[0], a.value().size() / std::max<std::size_t>(1, s[0])});
}

/// Concatenates two [N, C, H, W] tensors along the channel axis.
template <std::floating_point T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  detail::require_rank4(a, "concat_channels");
  detail::require_rank4(b, "concat_channels");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  require(sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3], ErrorCode::ShapeMismatch,
          "concat_channels: " + shape_string(sa) + " vs " + shape_string(sb));
  const std::size_t n_batch = sa[0], ca = sa[1], cb = sb[1], plane = sa[2] * sa[3];
  Tensor<T> out({n_batch, ca + cb, sa[2], sa[3]});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t n = 0; n < n_batch; ++n) {
    std::copy_n(av.data() + n * ca * plane, ca * plane, out.data() + n * (ca + cb) * plane);
    std::copy_n(bv.data() + n * cb * plane, cb * plane,
                out.data() + n * (ca + cb) * plane + ca * plane);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b},
                     [ia, ib, n_batch, ca, cb, plane](Tape<T>& t, std::size_t self) {
                       auto g = t.grad(self);
                       for (std::size_t n = 0; n < n_batch; ++n) {
                         const T* src = g.data() + n * (ca + cb) * plane;
                         if (t.needs_grad(ia)) {
                           T* dst = t.accumulator(ia).data() + n * ca * plane;
                           for (std::size_t k = 0; k < ca * plane; ++k) dst[k] += src[k];
                         }
                         if (t.needs_grad(ib)) {
                           T* dst = t.accumulator(ib).data() + n * cb * plane;
                           for (std::size_t k = 0; k < cb * plane; ++k) dst[k] += src[ca * plane + k];
                         }
                       }
                     });
}

/// Replicates each pixel into a 2x2 block.
template <std::floating_point T>
Var<T> nearest_upsample2x(Var<T> x) {
  detail::require_rank4(x, "nearest_upsample2x");
  const auto s = x.shape();
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  Tensor<T> out({s[0], s[1], 2 * h, 2 * w});
  const auto& xv = x.value();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xv.data() + p * h * w;
    T* dst = out.data() + p * 4 * h * w;
    for (std::size_t r = 0; r < 2 * h; ++r) {
      for (std::size_t c = 0; c < 2 * w; ++c) dst[r * 2 * w + c] = src[(r / 2) * w + c / 2];
    }
  }
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix, planes, h, w](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    auto acc = t.accumulator(ix);
    for (std::size_t p = 0; p < planes; ++p) {
      const T* src = g.data() + p * 4 * h * w;
      T* dst = acc.data() + p * h * w;
      for (std::size_t r = 0; r < 2 * h; ++r) {
        for (std::size_t c = 0; c < 2 * w; ++c) dst[(r / 2) * w + c / 2] += src[r * 2 * w + c];
      }
    }
  });
}

/// 2x2 max pooling with stride 2; the adjoint goes to the first maximal
/// element of each window in raster order.
template <std::floating_point T>
Var<T> maxpool2d(Var<T> x) {
  detail::require_rank4(x, "maxpool2d");
  const auto s = x.shape();
  require(s[2] % 2 == 0 && s[3] % 2 == 0, ErrorCode::OddSpatialDim,
          "maxpool2d needs even spatial dims, got " + shape_string(s));
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3], oh = h / 2, ow = w / 2;
  Tensor<T> out({s[0], s[1], oh, ow});
  std::vector<std::uint32_t> argmax(out.size());
  const auto& xv = x.value();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xv.data() + p * h * w;
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t c = 0; c < ow; ++c) {
        std::size_t best = (2 * r) * w + 2 * c;
        for (std::size_t k : {(2 * r) * w + 2 * c + 1, (2 * r + 1) * w + 2 * c,
                              (2 * r + 1) * w + 2 * c + 1}) {
          if (src[k] > src[best]) best = k;
        }
        const std::size_t o = p * oh * ow + r * ow + c;
        out[o] = src[best];
        argmax[o] = static_cast<std::uint32_t>(p * h * w + best);
      }
    }
  }
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x},
                          [ix, argmax = std::move(argmax)](Tape<T>& t, std::size_t self) {
                            auto g = t.grad(self);
                            auto acc = t.accumulator(ix);
                            for (std::size_t o = 0; o < g.size(); ++o) acc[argmax[o]] += g[o];
                          });
}

}  // namespace lunetkit::diffcore
