#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "lunetkit/diffcore/gradcheck.hpp"
#include "lunetkit/grid/bbox.hpp"
#include "lunetkit/losses/losses.hpp"

using namespace lunetkit;
using namespace lunetkit::losses;
using diffcore::Tape;
using diffcore::Tensor;

namespace {

double l1_value(std::vector<double> pred, std::vector<double> ref, double clip,
                ClipMode mode = ClipMode::per_coordinate) {
  const std::size_t n = pred.size() / 4;
  Tape<double> tape;
  Tensor<double> p({n, 4}, std::move(pred));
  Tensor<double> r({n, 4}, std::move(ref));
  return clipped_l1_loss(tape.input(p), r, clip, mode).value()[0];
}

Tensor<double> one_hot(const grid::LabelMask& m) {
  const std::size_t h = m.height(), w = m.width();
  Tensor<double> t({1, 3, h, w});
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) t[t.offset(0, m.at(r, c), r, c)] = 1.0;
  }
  return t;
}

double dice_value(const Tensor<double>& probs, const std::vector<grid::LabelMask>& refs,
                  double smooth) {
  Tape<double> tape;
  return multiclass_dice_loss(tape.input(probs), std::span<const grid::LabelMask>(refs), smooth)
      .value()[0];
}

// Counting oracle for hard predictions.
double dice_counting(const grid::LabelMask& pred, const grid::LabelMask& ref, double smooth) {
  double total = 0.0;
  for (std::uint8_t cls = 1; cls <= 2; ++cls) {
    double inter = 0, np = 0, nr = 0;
    for (std::size_t k = 0; k < pred.labels().size(); ++k) {
      const bool p = pred.labels()[k] == cls, r = ref.labels()[k] == cls;
      inter += p && r;
      np += p;
      nr += r;
    }
    total += (2 * inter + smooth) / (np + nr + smooth);
  }
  return 1.0 - total / 2.0;
}

grid::LabelMask random_mask(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  grid::LabelMask m(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) m.set(r, c, static_cast<std::uint8_t>(rng() % 3));
  }
  return m;
}

}  // namespace

TEST(ClippedL1, EqualBoxesGiveZero) {
  EXPECT_DOUBLE_EQ(l1_value({0.1, 0.7, 0.2, 0.9}, {0.1, 0.7, 0.2, 0.9}, 0.99), 0.0);
}

TEST(ClippedL1, HandArithmetic) {
  EXPECT_NEAR(l1_value({0.5, 2.0, 0.1, 0.0}, {0, 0, 0, 0}, 0.99), 1.59, 1e-12);
}

TEST(ClippedL1, Saturation) {
  EXPECT_NEAR(l1_value({1.0, -1.0, 2.0, 5.0}, {0, 0, 0, 0}, 0.99), 3.96, 1e-12);
}

TEST(ClippedL1, SummedModeClipsTheTotal) {
  EXPECT_NEAR(l1_value({0.5, 0.4, 0.0, 0.0}, {0, 0, 0, 0}, 0.99, ClipMode::summed), 0.9, 1e-12);
  EXPECT_NEAR(l1_value({0.5, 2.0, 0.1, 0.0}, {0, 0, 0, 0}, 0.99, ClipMode::summed), 0.99, 1e-12);
}

TEST(ClippedL1, BatchIsAveraged) {
  EXPECT_NEAR(l1_value({0.5, 2.0, 0.1, 0.0, 0, 0, 0, 0}, {0, 0, 0, 0, 0, 0, 0, 0}, 0.99), 0.795,
              1e-12);
}

TEST(ClippedL1, RangeAndMonotone) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> e(4);
    for (auto& v : e) v = u(rng);
    const double base = l1_value(e, {0, 0, 0, 0}, 0.99);
    EXPECT_GE(base, 0.0);
    EXPECT_LE(base, 4 * 0.99 + 1e-12);
    auto bigger = e;
    const std::size_t k = rng() % 4;
    bigger[k] += (bigger[k] >= 0 ? 0.1 : -0.1);
    EXPECT_GE(l1_value(bigger, {0, 0, 0, 0}, 0.99), base - 1e-12);
  }
}

TEST(ClippedL1, GradientCheckAwayFromClip) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    Tensor<double> pred({3, 4}), ref({3, 4});
    for (auto& v : ref.values()) v = u(rng);
    for (std::size_t k = 0; k < 12; ++k) {
      double e;
      do {
        e = 2.4 * u(rng) - 1.2;
      } while (std::abs(std::abs(e) - 0.99) < 0.01 || std::abs(e) < 0.01);
      pred[k] = ref[k] + e;
    }
    for (ClipMode mode : {ClipMode::per_coordinate, ClipMode::summed}) {
      const double err = diffcore::check_gradients(
          [&](Tape<double>&, std::span<const diffcore::Var<double>> v) {
            return clipped_l1_loss(v[0], ref, 0.99, mode);
          },
          {&pred}, 1e-7);
      EXPECT_LE(err, 1e-5);
    }
  }
}

TEST(ClippedL1, ShapeMismatchThrows) {
  Tape<double> tape;
  Tensor<double> p({1, 4}), r({2, 4});
  EXPECT_THROW(clipped_l1_loss(tape.input(p), r, 0.99), Error);
}

TEST(Dice, PerfectPredictionNearZero) {
  std::mt19937_64 rng(3);
  auto ref = random_mask(8, 8, rng);
  const double loss = dice_value(one_hot(ref), {ref}, 1.0);
  EXPECT_GE(loss, 0.0);
  EXPECT_LE(loss, 1.0 / (2.0 * 64 + 1.0));
}

TEST(Dice, DisjointPredictionNearOne) {
  grid::LabelMask ref(10, 10), pred(10, 10);
  for (std::size_t r = 0; r < 10; ++r) {
    for (std::size_t c = 0; c < 10; ++c) {
      if (r < 5) ref.set(r, c, c < 5 ? 1 : 2);
      else pred.set(r, c, c < 5 ? 1 : 2);
    }
  }
  EXPECT_NEAR(dice_value(one_hot(pred), {ref}, 1.0), 1.0, 0.02);
  EXPECT_NEAR(dice_value(one_hot(pred), {ref}, 1e-9), 1.0, 1e-9);
}

TEST(Dice, HalfOverlapHandArithmetic) {
  // class 1: |pred| = |ref| = 100 with 50 overlapping, class 2 identical
  grid::LabelMask ref(20, 20), pred(20, 20);
  for (std::size_t r = 0; r < 10; ++r) {
    for (std::size_t c = 0; c < 10; ++c) ref.set(r, c, 1);
    for (std::size_t c = 5; c < 15; ++c) pred.set(r, c, 1);
  }
  for (std::size_t r = 15; r < 20; ++r) {
    for (std::size_t c = 0; c < 20; ++c) {
      ref.set(r, c, 2);
      pred.set(r, c, 2);
    }
  }
  EXPECT_NEAR(dice_value(one_hot(pred), {ref}, 1e-9), 0.25, 1e-9);
}

TEST(Dice, MatchesCountingOracleOnHardInputs) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 30; ++t) {
    auto ref = random_mask(6, 7, rng);
    auto pred = random_mask(6, 7, rng);
    EXPECT_NEAR(dice_value(one_hot(pred), {ref}, 1.0), dice_counting(pred, ref, 1.0), 1e-12);
  }
}

TEST(Dice, RangeAndPermutationInvariance) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    auto ref = random_mask(5, 6, rng);
    Tensor<double> p({1, 3, 5, 6});
    for (std::size_t k = 0; k < 30; ++k) {
      double a = u(rng), b = u(rng), c = u(rng), s = a + b + c;
      p[k] = a / s;
      p[30 + k] = b / s;
      p[60 + k] = c / s;
    }
    const double loss = dice_value(p, {ref}, 1.0);
    EXPECT_GE(loss, 0.0);
    EXPECT_LE(loss, 1.0);

    std::vector<std::size_t> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor<double> pp({1, 3, 5, 6});
    grid::LabelMask rp(5, 6);
    for (std::size_t k = 0; k < 30; ++k) {
      for (std::size_t cls = 0; cls < 3; ++cls) pp[cls * 30 + k] = p[cls * 30 + perm[k]];
      rp.set(k / 6, k % 6, ref.labels()[perm[k]]);
    }
    EXPECT_NEAR(dice_value(pp, {rp}, 1.0), loss, 1e-12);
  }
}

TEST(Dice, GradientCheck) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int t = 0; t < 20; ++t) {
    std::vector<grid::LabelMask> refs{random_mask(4, 5, rng), random_mask(4, 5, rng)};
    Tensor<double> p({2, 3, 4, 5});
    for (auto& v : p.values()) v = u(rng);
    const double err = diffcore::check_gradients(
        [&](Tape<double>&, std::span<const diffcore::Var<double>> v) {
          return multiclass_dice_loss(v[0], std::span<const grid::LabelMask>(refs), 1.0);
        },
        {&p}, 1e-6);
    EXPECT_LE(err, 1e-5);
  }
}

TEST(Dice, ShapeMismatchThrows) {
  Tape<double> tape;
  Tensor<double> p({1, 3, 4, 4});
  std::vector<grid::LabelMask> refs{grid::LabelMask(4, 5)};
  try {
    multiclass_dice_loss(tape.input(p), std::span<const grid::LabelMask>(refs), 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(DynamicReference, FullBoxSameSizeIsUnchanged) {
  std::mt19937_64 rng(7);
  auto ref = random_mask(12, 9, rng);
  const std::vector<double> box{0.0, 1.0, 0.0, 1.0};
  auto out = dynamic_roi_reference(ref, std::span<const double>(box), 12, 9);
  EXPECT_EQ(out.labels(), ref.labels());
}

TEST(DynamicReference, BackgroundBoxGivesBackground) {
  grid::LabelMask ref(32, 32);
  for (std::size_t r = 16; r < 30; ++r) {
    for (std::size_t c = 16; c < 30; ++c) ref.set(r, c, 2);
  }
  const std::vector<double> box{0.05, 0.4, 0.1, 0.45};
  auto out = dynamic_roi_reference(ref, std::span<const double>(box), 20, 20);
  EXPECT_EQ(out.count(grid::Structure::epi), 0u);
}

TEST(DynamicReference, ExpandedBoxContainsEveryEndoPixelImage) {
  grid::LabelMask ref(96, 80);
  for (std::size_t r = 0; r < 96; ++r) {
    for (std::size_t c = 0; c < 80; ++c) {
      const double u = (r + 0.5 - 50.0) / 30.0, v = (c + 0.5 - 37.0) / 18.0;
      const double q = u * u + v * v;
      ref.set(r, c, q < 0.6 ? 1 : (q < 1.0 ? 2 : 0));
    }
  }
  const auto bb = grid::expand_bbox(grid::tight_bbox(ref, grid::Structure::epi), 0.05, {96, 80});
  const std::vector<double> box{bb.x_min / 96, bb.x_max / 96, bb.y_min / 80, bb.y_max / 80};
  auto roi = dynamic_roi_reference(ref, std::span<const double>(box), 128, 128);
  const double step_x = bb.height() / 128.0, step_y = bb.width() / 128.0;
  for (std::size_t r = 0; r < 96; ++r) {
    for (std::size_t c = 0; c < 80; ++c) {
      if (ref.at(r, c) != 1) continue;
      const double i = std::floor((r + 0.5 - bb.x_min) / step_x);
      const double j = std::floor((c + 0.5 - bb.y_min) / step_y);
      ASSERT_GE(i, 0.0);
      ASSERT_GE(j, 0.0);
      ASSERT_LT(i, 128.0);
      ASSERT_LT(j, 128.0);
      EXPECT_EQ(roi.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)), 1);
    }
  }
}

TEST(Multitask, ValuesAndLinearity) {
  auto eval = [](double loc, double seg) {
    Tape<double> tape;
    return multitask_loss(tape.constant(Tensor<double>({1}, loc)),
                          tape.constant(Tensor<double>({1}, seg)), LossWeights{})
        .value()[0];
  };
  EXPECT_DOUBLE_EQ(eval(0, 0), 0.0);
  EXPECT_NEAR(eval(0.2, 0.3), 2.3, 1e-12);
  const double a = eval(0.1, 0.4), b = eval(0.7, 0.2);
  EXPECT_NEAR(eval(0.4, 0.3), 0.5 * a + 0.5 * b, 1e-12);
}

TEST(Multitask, GradientIsWeightedSum) {
  Tensor<double> x({1}, 0.3);
  x.set_requires_grad(true);
  Tape<double> tape;
  auto v = tape.leaf(x);
  auto loc = diffcore::square(v);              // d/dx = 0.6
  auto seg = diffcore::scale(v, 2.0);          // d/dx = 2
  tape.backward(multitask_loss(loc, seg, LossWeights{}));
  EXPECT_NEAR(x.grad()[0], 10 * 0.6 + 2.0, 1e-12);
}

TEST(LossWeights, ValidationAndJson) {
  LossWeights w;
  EXPECT_NO_THROW(w.validate());
  EXPECT_DOUBLE_EQ(w.localization_weight, 10.0);
  EXPECT_DOUBLE_EQ(w.clip, 0.99);
  nlohmann::json j = w;
  EXPECT_EQ(j.get<LossWeights>(), w);
  w.clip = 1.5;
  EXPECT_THROW(w.validate(), Error);
  w = LossWeights{};
  w.smooth = 0.0;
  EXPECT_THROW(w.validate(), Error);
}
