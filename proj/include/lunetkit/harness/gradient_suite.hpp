#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lunetkit/diffcore.hpp"
#include "lunetkit/diffcore/gradcheck.hpp"
#include "lunetkit/grid/bbox.hpp"
#include "lunetkit/losses/losses.hpp"
#include "lunetkit/nets/lunet.hpp"

namespace lunetkit::harness {

using diffcore::Shape;
using diffcore::Tape;
using diffcore::Var;
using TensorD = diffcore::Tensor<double>;

struct GradCheckResult {
  std::string op;
  std::size_t configs = 0;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return std::isfinite(max_error) && max_error <= tolerance; }
};

namespace gradsuite {

using Rng = std::mt19937_64;
using VarSpan = std::span<const Var<double>>;

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Uniform values in [-1, 1] kept at least `gap` away from zero.
inline TensorD random_tensor(Rng& rng, Shape shape, double gap = 0.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.values()) {
    const double mag = uniform(rng, gap, 1.0);
    v = uniform(rng, 0.0, 1.0) < 0.5 ? -mag : mag;
  }
  return t;
}

/// Distinct values (shuffled ramp plus small noise), so every 2x2 window
/// has a strict maximum.
inline TensorD distinct_tensor(Rng& rng, Shape shape) {
  TensorD t(std::move(shape));
  std::vector<std::size_t> order(t.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<double>(order[i]) / static_cast<double>(t.size()) + uniform(rng, 0.0, 0.1 / t.size());
  }
  return t;
}

/// Random linear functional of an op output, which makes every output
/// element contribute with its own weight.
inline Var<double> project(Tape<double>& tape, Var<double> out, const TensorD& weights) {
  return diffcore::sum(diffcore::mul(out, tape.constant(weights)));
}

struct Case {
  std::vector<TensorD> inputs;
  std::vector<TensorD*> external;  ///< checked in place instead of inputs when set
  std::shared_ptr<void> owner;
  std::function<Var<double>(Tape<double>&, VarSpan)> fn;
  std::size_t max_elements = 0;
};

using CaseFactory = std::function<Case(Rng&)>;

inline Shape random_shape(Rng& rng, std::size_t rank, std::size_t max_dim = 4) {
  Shape s;
  for (std::size_t k = 0; k < rank; ++k) s.push_back(pick(rng, 1, max_dim));
  return s;
}

template <class Op>
Case unary(Rng& rng, Op op, double gap = 0.0, std::size_t rank = 0) {
  const Shape s = random_shape(rng, rank == 0 ? pick(rng, 1, 4) : rank);
  auto w = std::make_shared<TensorD>(random_tensor(rng, s));
  Case c;
  c.inputs.push_back(random_tensor(rng, s, gap));
  c.fn = [op, w](Tape<double>& t, VarSpan v) { return project(t, op(v[0]), *w); };
  return c;
}

/// Reductions are squared so that the gradient depends on the input.
template <class Op>
Case reduction(Rng& rng, Op op) {
  const Shape s = random_shape(rng, pick(rng, 1, 4));
  Case c;
  c.inputs.push_back(random_tensor(rng, s));
  c.fn = [op](Tape<double>&, VarSpan v) {
    auto r = op(v[0]);
    return diffcore::mul(r, r);
  };
  return c;
}

template <class Op>
Case binary(Rng& rng, Op op) {
  const Shape s = random_shape(rng, pick(rng, 1, 4));
  auto w = std::make_shared<TensorD>(random_tensor(rng, s));
  Case c;
  c.inputs.push_back(random_tensor(rng, s));
  c.inputs.push_back(random_tensor(rng, s));
  c.fn = [op, w](Tape<double>& t, VarSpan v) { return project(t, op(v[0], v[1]), *w); };
  return c;
}

inline Case conv_case(Rng& rng) {
  const std::size_t n = pick(rng, 1, 2), ch = pick(rng, 1, 3), f = pick(rng, 1, 3);
  const std::size_t h = pick(rng, 3, 7), w = pick(rng, 3, 7);
  const std::size_t k = std::array<std::size_t, 3>{1, 3, 5}[pick(rng, 0, 2)];
  const std::size_t stride = pick(rng, 1, 2);
  const std::size_t pad = k / 2;
  const Shape out{n, f, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1};
  auto wt = std::make_shared<TensorD>(random_tensor(rng, out));
  Case c;
  c.inputs.push_back(random_tensor(rng, {n, ch, h, w}));
  c.inputs.push_back(random_tensor(rng, {f, ch, k, k}));
  c.inputs.push_back(random_tensor(rng, {f}));
  c.fn = [wt, stride](Tape<double>& t, VarSpan v) {
    return project(t, diffcore::conv2d(v[0], v[1], v[2], stride), *wt);
  };
  return c;
}

inline Case dense_case(Rng& rng) {
  const std::size_t n = pick(rng, 1, 3), din = pick(rng, 1, 6), dout = pick(rng, 1, 5);
  auto wt = std::make_shared<TensorD>(random_tensor(rng, {n, dout}));
  Case c;
  c.inputs.push_back(random_tensor(rng, {n, din}));
  c.inputs.push_back(random_tensor(rng, {dout, din}));
  c.inputs.push_back(random_tensor(rng, {dout}));
  c.fn = [wt](Tape<double>& t, VarSpan v) { return project(t, diffcore::dense(v[0], v[1], v[2]), *wt); };
  return c;
}

inline Case concat_case(Rng& rng) {
  const std::size_t n = pick(rng, 1, 2), ca = pick(rng, 1, 3), cb = pick(rng, 1, 3);
  const std::size_t h = pick(rng, 1, 4), w = pick(rng, 1, 4);
  auto wt = std::make_shared<TensorD>(random_tensor(rng, {n, ca + cb, h, w}));
  Case c;
  c.inputs.push_back(random_tensor(rng, {n, ca, h, w}));
  c.inputs.push_back(random_tensor(rng, {n, cb, h, w}));
  c.fn = [wt](Tape<double>& t, VarSpan v) { return project(t, diffcore::concat_channels(v[0], v[1]), *wt); };
  return c;
}

inline Case rank4_case(Rng& rng, std::function<Var<double>(Var<double>)> op, Shape out_of_in(const Shape&),
                       bool distinct, bool even) {
  const std::size_t n = pick(rng, 1, 2), ch = pick(rng, 1, 3);
  std::size_t h = pick(rng, 1, 4), w = pick(rng, 1, 4);
  if (even) {
    h *= 2;
    w *= 2;
  }
  const Shape in{n, ch, h, w};
  auto wt = std::make_shared<TensorD>(random_tensor(rng, out_of_in(in)));
  Case c;
  c.inputs.push_back(distinct ? distinct_tensor(rng, in) : random_tensor(rng, in));
  c.fn = [wt, op](Tape<double>& t, VarSpan v) { return project(t, op(v[0]), *wt); };
  return c;
}

/// Box whose sampling positions stay clear of pixel-cell boundaries and
/// whose corners stay clear of the clamp and minimum-extent kinks.
inline std::array<double, 4> crop_box(Rng& rng, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow) {
  auto clear = [](double lo, double hi, std::size_t extent, std::size_t out) {
    if (hi - lo < 2.0 / static_cast<double>(extent) + 0.05) return false;
    const double step = (hi - lo) * static_cast<double>(extent) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      const double s = lo * static_cast<double>(extent) + (static_cast<double>(i) + 0.5) * step - 0.5;
      if (std::abs(s - std::round(s)) < 1e-3) return false;
    }
    return true;
  };
  for (;;) {
    std::array<double, 4> b{uniform(rng, 0.02, 0.5), uniform(rng, 0.5, 0.98), uniform(rng, 0.02, 0.5),
                            uniform(rng, 0.5, 0.98)};
    if (clear(b[0], b[1], h, oh) && clear(b[2], b[3], w, ow)) return b;
  }
}

inline Case crop_case(Rng& rng) {
  const std::size_t n = pick(rng, 1, 2), ch = pick(rng, 1, 2);
  const std::size_t h = pick(rng, 3, 8), w = pick(rng, 3, 8), oh = pick(rng, 2, 6), ow = pick(rng, 2, 6);
  TensorD box({n, 4});
  for (std::size_t i = 0; i < n; ++i) {
    const auto b = crop_box(rng, h, w, oh, ow);
    std::copy(b.begin(), b.end(), box.data() + 4 * i);
  }
  auto wt = std::make_shared<TensorD>(random_tensor(rng, {n, ch, oh, ow}));
  Case c;
  c.inputs.push_back(random_tensor(rng, {n, ch, h, w}));
  c.inputs.push_back(std::move(box));
  c.fn = [wt, oh, ow](Tape<double>& t, VarSpan v) {
    return project(t, diffcore::crop_resize(v[0], v[1], oh, ow), *wt);
  };
  return c;
}

inline Case clipped_l1_case(Rng& rng, losses::ClipMode mode) {
  const std::size_t n = pick(rng, 1, 3);
  const double clip = 0.99;
  TensorD pred({n, 4}), ref({n, 4});
  for (std::size_t i = 0; i < n; ++i) {
    for (;;) {
      double total = 0.0;
      bool ok = true;
      for (std::size_t k = 0; k < 4; ++k) {
        pred[4 * i + k] = uniform(rng, -0.3, 1.3);
        ref[4 * i + k] = uniform(rng, 0.0, 1.0);
        const double e = std::abs(pred[4 * i + k] - ref[4 * i + k]);
        ok = ok && e > 1e-3 && std::abs(e - clip) > 1e-3;
        total += e;
      }
      if (mode == losses::ClipMode::summed) ok = ok && std::abs(total - clip) > 1e-3 && total < clip;
      if (ok) break;
    }
  }
  Case c;
  c.inputs.push_back(std::move(pred));
  auto r = std::make_shared<TensorD>(std::move(ref));
  c.fn = [r, clip, mode](Tape<double>&, VarSpan v) { return losses::clipped_l1_loss(v[0], *r, clip, mode); };
  return c;
}

inline Case dice_case(Rng& rng) {
  const std::size_t n = pick(rng, 1, 2), h = pick(rng, 2, 6), w = pick(rng, 2, 6);
  auto refs = std::make_shared<std::vector<grid::LabelMask>>();
  for (std::size_t i = 0; i < n; ++i) {
    grid::LabelMask m(h, w);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t col = 0; col < w; ++col) m.set(r, col, static_cast<std::uint8_t>(pick(rng, 0, 2)));
    }
    refs->push_back(std::move(m));
  }
  const double smooth = uniform(rng, 0.5, 2.0);
  Case c;
  c.inputs.push_back(random_tensor(rng, {n, 3, h, w}));
  c.fn = [refs, smooth](Tape<double>&, VarSpan v) {
    return losses::multiclass_dice_loss(diffcore::channel_softmax(v[0]), std::span<const grid::LabelMask>(*refs),
                                        smooth);
  };
  return c;
}

/// Multi-task loss of a small LU-Net with jittered biases, checked on a
/// sample of parameters from both networks.
inline Case composite_case(Rng& rng) {
  nets::LUNetConfig cfg;
  cfg.localizer.backbone = {2, 4, 16, 16, 1, 3};
  cfg.localizer.head_units = {8, 4};
  cfg.localizer.branch_filters = 4;
  cfg.localizer.branch_max_filters = 8;
  cfg.segmenter = {2, 4, 8, 8, 1, 3};
  cfg.crop_height = 8;
  cfg.crop_width = 8;
  cfg.margin = uniform(rng, 0.0, 0.2);
  auto model = std::make_shared<nets::LUNetModel<double>>(nets::build_lunet<double>(cfg, rng()));
  for (auto* store : {&model->localizer.params, &model->segmenter.params}) {
    for (std::size_t i = 0; i < store->size(); ++i) {
      if (store->tensor(i).rank() == 1) {
        for (auto& v : store->tensor(i).values()) v = uniform(rng, -0.1, 0.1);
      }
    }
  }
  const std::size_t n = pick(rng, 1, 2);
  auto images = std::make_shared<TensorD>(Shape{n, 1, 16, 16});
  for (auto& v : images->values()) v = uniform(rng, 0.0, 1.0);
  auto refs = std::make_shared<std::vector<grid::LabelMask>>();
  auto ref_box = std::make_shared<TensorD>(Shape{n, 4});
  for (std::size_t i = 0; i < n; ++i) {
    grid::LabelMask m(16, 16);
    const std::size_t r0 = pick(rng, 1, 5), r1 = pick(rng, 10, 15), c0 = pick(rng, 1, 5), c1 = pick(rng, 10, 15);
    for (std::size_t r = r0; r < r1; ++r) {
      for (std::size_t c = c0; c < c1; ++c) {
        m.set(r, c, (r > r0 + 1 && r + 2 < r1 && c > c0 + 1 && c + 2 < c1) ? 1 : 2);
      }
    }
    const auto b = grid::expand_bbox(grid::tight_bbox(m, grid::Structure::epi), cfg.margin, {16, 16});
    (*ref_box)[4 * i + 0] = b.x_min / 16.0;
    (*ref_box)[4 * i + 1] = b.x_max / 16.0;
    (*ref_box)[4 * i + 2] = b.y_min / 16.0;
    (*ref_box)[4 * i + 3] = b.y_max / 16.0;
    refs->push_back(std::move(m));
  }
  Case c;
  c.max_elements = 3;
  c.owner = model;
  for (auto* store : {&model->localizer.params, &model->segmenter.params}) {
    for (std::size_t i = 0; i < store->size(); ++i) c.external.push_back(&store->tensor(i));
  }
  c.fn = [model, images, refs, ref_box](Tape<double>& tape, VarSpan) {
    nets::Binder<double> lb(tape, model->localizer.params), sb(tape, model->segmenter.params);
    auto g = nets::lunet_graph(*model, lb, sb, tape.input(*images));
    std::vector<grid::LabelMask> roi_refs;
    for (std::size_t i = 0; i < refs->size(); ++i) {
      roi_refs.push_back(losses::dynamic_roi_reference(
          (*refs)[i], std::span<const double>(g.box.value().data() + 4 * i, 4), 8, 8));
    }
    const losses::LossWeights w;
    auto loc = losses::clipped_l1_loss(g.box, *ref_box, w.clip);
    auto seg = losses::multiclass_dice_loss(g.roi_probs, std::span<const grid::LabelMask>(roi_refs), w.smooth);
    return losses::multitask_loss(loc, seg, w);
  };
  return c;
}

inline Shape same_shape(const Shape& s) { return s; }
inline Shape half_shape(const Shape& s) { return {s[0], s[1], s[2] / 2, s[3] / 2}; }
inline Shape double_shape(const Shape& s) { return {s[0], s[1], s[2] * 2, s[3] * 2}; }

inline const std::map<std::string, std::pair<CaseFactory, double>>& registry() {
  using diffcore::Var;
  using V = Var<double>;
  static const std::map<std::string, std::pair<CaseFactory, double>> r{
      {"add", {[](Rng& g) { return binary(g, [](V a, V b) { return diffcore::add(a, b); }); }, 1e-4}},
      {"sub", {[](Rng& g) { return binary(g, [](V a, V b) { return diffcore::sub(a, b); }); }, 1e-4}},
      {"mul", {[](Rng& g) { return binary(g, [](V a, V b) { return diffcore::mul(a, b); }); }, 1e-4}},
      {"scale",
       {[](Rng& g) {
          const double f = uniform(g, -2.0, 2.0);
          return unary(g, [f](V a) { return diffcore::scale(a, f); });
        },
        1e-4}},
      {"square", {[](Rng& g) { return unary(g, [](V a) { return diffcore::square(a); }); }, 1e-4}},
      {"sum", {[](Rng& g) { return reduction(g, [](V a) { return diffcore::sum(a); }); }, 1e-4}},
      {"mean", {[](Rng& g) { return reduction(g, [](V a) { return diffcore::mean(a); }); }, 1e-4}},
      {"relu", {[](Rng& g) { return unary(g, [](V a) { return diffcore::relu(a); }, 0.05); }, 1e-4}},
      {"sigmoid", {[](Rng& g) { return unary(g, [](V a) { return diffcore::sigmoid(a); }); }, 1e-4}},
      {"channel_softmax",
       {[](Rng& g) { return rank4_case(g, [](V a) { return diffcore::channel_softmax(a); }, same_shape, false, false); },
        1e-4}},
      {"reshape",
       {[](Rng& g) {
          const std::size_t a = pick(g, 1, 4), b = pick(g, 1, 4), c = pick(g, 1, 4);
          auto w = std::make_shared<TensorD>(random_tensor(g, {a * b, c}));
          Case cs;
          cs.inputs.push_back(random_tensor(g, {a, b, c}));
          cs.fn = [w, a, b, c](Tape<double>& t, VarSpan v) {
            return project(t, diffcore::reshape(v[0], {a * b, c}), *w);
          };
          return cs;
        },
        1e-4}},
      {"flatten",
       {[](Rng& g) {
          return rank4_case(
              g, [](V a) { return diffcore::flatten(a); },
              [](const Shape& s) { return Shape{s[0], s[1] * s[2] * s[3]}; }, false, false);
        },
        1e-4}},
      {"concat_channels", {[](Rng& g) { return concat_case(g); }, 1e-4}},
      {"nearest_upsample2x",
       {[](Rng& g) { return rank4_case(g, [](V a) { return diffcore::nearest_upsample2x(a); }, double_shape, false, false); },
        1e-4}},
      {"maxpool2d",
       {[](Rng& g) { return rank4_case(g, [](V a) { return diffcore::maxpool2d(a); }, half_shape, true, true); }, 1e-4}},
      {"conv2d", {[](Rng& g) { return conv_case(g); }, 1e-4}},
      {"dense", {[](Rng& g) { return dense_case(g); }, 1e-4}},
      {"crop_resize", {[](Rng& g) { return crop_case(g); }, 1e-4}},
      {"clipped_l1_loss", {[](Rng& g) { return clipped_l1_case(g, losses::ClipMode::per_coordinate); }, 1e-4}},
      {"clipped_l1_loss_summed", {[](Rng& g) { return clipped_l1_case(g, losses::ClipMode::summed); }, 1e-4}},
      {"multiclass_dice_loss", {[](Rng& g) { return dice_case(g); }, 1e-4}},
      {"lunet_multitask", {[](Rng& g) { return composite_case(g); }, 1e-3}},
  };
  return r;
}

}  // namespace gradsuite

/// Names accepted by run_gradient_check.
inline std::vector<std::string> gradient_suite_ops() {
  std::vector<std::string> out;
  for (const auto& [name, entry] : gradsuite::registry()) out.push_back(name);
  return out;
}

/// Central-difference check of one op over `configs` random jittered
/// configurations at double precision.
inline GradCheckResult run_gradient_check(const std::string& op, std::size_t configs = 20,
                                          std::uint64_t seed = 0) {
  const auto& reg = gradsuite::registry();
  const auto it = reg.find(op);
  require(it != reg.end(), ErrorCode::InvalidArgument, "unknown op for gradient check: " + op);
  require(configs >= 1, ErrorCode::InvalidArgument, "at least one configuration is needed");
  GradCheckResult res{op, configs, 0.0, it->second.second};
  gradsuite::Rng rng(seed);
  for (std::size_t k = 0; k < configs; ++k) {
    gradsuite::Case c = it->second.first(rng);
    std::vector<TensorD*> inputs = c.external;
    if (inputs.empty()) {
      for (auto& t : c.inputs) inputs.push_back(&t);
    }
    diffcore::GradCheckOptions opt;
    opt.max_elements_per_input = c.max_elements;
    opt.seed = rng();
    const double err = diffcore::check_gradients(c.fn, inputs, 1e-6, opt);
    res.max_error = std::max(res.max_error, std::isfinite(err) ? err : INFINITY);
  }
  return res;
}

}  // namespace lunetkit::harness
