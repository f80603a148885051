#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "lunetkit/clinical/volumetry.hpp"
#include "support/oracles.hpp"

using namespace lunetkit;
using namespace lunetkit::clinical;
using grid::LabelMask;
using grid::PixelSpacing;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

using oracle::ellipse;

}  // namespace

TEST(LongAxis, AxisAlignedEllipse) {
  auto m = ellipse(128, 64, 64, 40, 20);
  auto ax = long_axis(m);
  EXPECT_NEAR(ax.length_mm, 80.0, 1.0);
  EXPECT_NEAR(ax.ux, 1.0, 1e-9);
  EXPECT_NEAR(ax.apex({1, 1}).x, 24.0, 1.0);
  EXPECT_NEAR(ax.base({1, 1}).x, 104.0, 1.0);
}

TEST(LongAxis, RotatedEllipse) {
  auto m = ellipse(160, 80, 80, 40, 20, 30 * kDeg);
  auto ax = long_axis(m);
  EXPECT_NEAR(ax.length_mm, 80.0, 1.0);
  EXPECT_NEAR(std::atan2(ax.uy, ax.ux) / kDeg, 30.0, 2.0);
}

TEST(LongAxis, CircleTiesTowardPlusX) {
  auto m = ellipse(100, 50, 50, 30, 30);
  auto ax = long_axis(m);
  EXPECT_DOUBLE_EQ(ax.ux, 1.0);
  EXPECT_DOUBLE_EQ(ax.uy, 0.0);
  EXPECT_NEAR(ax.length_mm, 60.0, 1.0);
}

TEST(LongAxis, Errors) {
  try {
    long_axis(LabelMask(8, 8));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyStructure);
  }
  LabelMask two(8, 8);
  two.set(1, 1, 1);
  two.set(1, 2, 1);
  try {
    long_axis(two);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateRegion);
  }
}

TEST(Discs, RectangleGivesConstantWidth) {
  LabelMask m(80, 80, {0.5, 0.8});
  for (std::size_t r = 10; r < 70; ++r) {
    for (std::size_t c = 30; c < 44; ++c) m.set(r, c, 1);
  }
  auto ax = long_axis(m);
  EXPECT_NEAR(ax.length_mm, 60 * 0.5, 1e-9);
  for (double d : disc_diameters(m, ax, 20)) EXPECT_NEAR(d, 14 * 0.8, 1e-9);
}

TEST(Discs, EllipseMatchesAnalyticChords) {
  const double a = 50, b = 22;
  auto m = ellipse(128, 64, 64, a, b);
  auto ax = long_axis(m);
  const std::size_t n = 20;
  auto d = disc_diameters(m, ax, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double f = 2.0 * i / n - 1.0 + 1.0 / n;
    EXPECT_NEAR(d[i], 2 * b * std::sqrt(1 - f * f), 2.0) << i;
  }
}

TEST(Discs, FourSlabPiecewiseShape) {
  LabelMask m(64, 64);
  const std::array<int, 4> widths{8, 16, 12, 6};
  for (int slab = 0; slab < 4; ++slab) {
    for (int r = 12 + 10 * slab; r < 22 + 10 * slab; ++r) {
      for (int c = 32 - widths[slab] / 2; c < 32 + widths[slab] / 2; ++c) m.set(r, c, 1);
    }
  }
  auto ax = long_axis(m);
  ASSERT_NEAR(ax.ux, 1.0, 1e-12);
  EXPECT_NEAR(ax.length_mm, 40.0, 1e-12);
  auto d = disc_diameters(m, ax, 4);
  for (int slab = 0; slab < 4; ++slab) EXPECT_NEAR(d[slab], widths[slab], 1e-9);
  EXPECT_THROW(disc_diameters(m, ax, 3), Error);
}

TEST(Simpson, AnalyticEllipsoid) {
  // D1 = 40 mm, D2 = 30 mm, L = 80 mm at 256^2 with 0.4 mm pixels
  const PixelSpacing sp{0.4, 0.4};
  auto v2 = ellipse(256, 128, 128, 100, 50, 0, sp);
  auto v4 = ellipse(256, 128, 128, 100, 37.5, 0, sp);
  const double expected = std::numbers::pi / 6 * 4 * 3 * 8;
  EXPECT_NEAR(expected, 50.27, 0.01);
  EXPECT_NEAR(simpson_biplane(v2, v4, 20), expected, 0.02 * expected);
}

TEST(Simpson, AnalyticSphere) {
  const PixelSpacing sp{0.25, 0.25};
  auto c = ellipse(256, 128, 128, 100, 100, 0, sp);
  const double expected = std::numbers::pi / 6 * 125;
  EXPECT_NEAR(expected, 65.45, 0.01);
  EXPECT_NEAR(simpson_biplane(c, c, 20), expected, 0.02 * expected);
}

TEST(Simpson, CubicSpacingScaling) {
  auto v2 = ellipse(96, 48, 48, 36, 15, 0, {0.7, 0.7});
  auto v4 = ellipse(96, 48, 48, 34, 18, 0, {0.7, 0.7});
  const double base = simpson_biplane(v2, v4);
  v2.set_spacing({1.4, 1.4});
  v4.set_spacing({1.4, 1.4});
  EXPECT_NEAR(simpson_biplane(v2, v4), 8 * base, 1e-9 * base);
}

TEST(Simpson, ConvergesWithResolution) {
  const double expected = std::numbers::pi / 6 * 4 * 3 * 8;
  std::vector<double> errors;
  for (std::size_t size : {64u, 128u, 256u}) {
    const double px = 102.4 / size;  // same field of view
    auto v2 = ellipse(size, size / 2.0, size / 2.0, 40 / px, 20 / px, 0, {px, px});
    auto v4 = ellipse(size, size / 2.0, size / 2.0, 40 / px, 15 / px, 0, {px, px});
    errors.push_back(std::abs(simpson_biplane(v2, v4) - expected) / expected);
  }
  EXPECT_LT(errors[2], errors[0]);
  EXPECT_LT(errors[2], 0.02);
}

TEST(Simpson, RotationRobust) {
  const PixelSpacing sp{0.4, 0.4};
  const double base = simpson_biplane(ellipse(256, 128, 128, 100, 50, 0, sp),
                                      ellipse(256, 128, 128, 100, 37.5, 0, sp));
  for (double deg : {15.0, 30.0, 60.0, 110.0}) {
    const double rotated = simpson_biplane(ellipse(256, 128, 128, 100, 50, deg * kDeg, sp),
                                           ellipse(256, 128, 128, 100, 37.5, -deg * kDeg, sp));
    EXPECT_NEAR(rotated, base, 0.03 * base) << deg;
  }
}

TEST(Simpson, EmptyMaskThrows) {
  auto v = ellipse(64, 32, 32, 20, 10);
  EXPECT_THROW(simpson_biplane(v, LabelMask(64, 64)), Error);
}

TEST(EjectionFraction, Examples) {
  EXPECT_DOUBLE_EQ(ejection_fraction(100, 50), 50.0);
  EXPECT_DOUBLE_EQ(ejection_fraction(80, 80), 0.0);
  EXPECT_NEAR(ejection_fraction(120, 40.8), 66.0, 1e-12);
  try {
    ejection_fraction(0.0, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonPositiveEDV);
  }
  auto ed = ellipse(96, 48, 48, 36, 15);
  auto ed4 = ellipse(96, 48, 48, 35, 17);
  EXPECT_EQ(patient_indices(ed, ed4, ed, ed4).ef, 0.0);
}

TEST(Agreement, Examples) {
  const std::vector<double> ref{10, 20, 35, 41, 50};
  auto same = agreement_stats(ref, ref);
  EXPECT_DOUBLE_EQ(same.corr, 1.0);
  EXPECT_DOUBLE_EQ(same.bias, 0.0);
  EXPECT_DOUBLE_EQ(same.loa, 0.0);
  EXPECT_DOUBLE_EQ(same.mae, 0.0);
  std::vector<double> plus5;
  for (double v : ref) plus5.push_back(v + 5);
  auto off = agreement_stats(plus5, ref);
  EXPECT_NEAR(off.corr, 1.0, 1e-12);
  EXPECT_NEAR(off.bias, 5.0, 1e-12);
  EXPECT_NEAR(off.loa, 0.0, 1e-12);
  EXPECT_NEAR(off.mae, 5.0, 1e-12);
  const std::vector<double> centred{-2, -1, 0, 1, 2}, negated{2, 1, 0, -1, -2};
  EXPECT_NEAR(agreement_stats(negated, centred).corr, -1.0, 1e-12);
}

TEST(Agreement, Errors) {
  const std::vector<double> a{1, 2, 3}, b{1, 2}, c{4, 4, 4};
  try {
    agreement_stats(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
  }
  try {
    agreement_stats(a, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateSeries);
  }
  EXPECT_THROW(agreement_stats(std::vector<double>{1, 2}, std::vector<double>{2, 3}), Error);
}

TEST(Agreement, MatchesStatisticsOracle) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(60.0, 20.0), noise(0.0, 8.0);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 3 + rng() % 60;
    std::vector<double> ref(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      ref[i] = g(rng);
      pred[i] = 0.9 * ref[i] + noise(rng) + 3.0;
    }
    const auto o = oracle::agreement(pred, ref);
    auto s = agreement_stats(pred, ref);
    EXPECT_NEAR(s.corr, o.corr, 1e-12);
    EXPECT_NEAR(s.bias, o.bias, 1e-12);
    EXPECT_NEAR(s.loa, o.loa, 1e-12);
    EXPECT_NEAR(s.mae, o.mae, 1e-12);
  }
}
