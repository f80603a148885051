#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "lunetkit/diffcore.hpp"
#include "lunetkit/diffcore/gradcheck.hpp"
#include "lunetkit/harness/gradient_suite.hpp"

using namespace lunetkit;
using namespace lunetkit::diffcore;

namespace {

Tensor<double> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(s));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

template <class Fn>
Tensor<double> eval(Fn fn) {
  Tape<double> tape;
  return fn(tape).value();
}

}  // namespace

TEST(Tensor, ShapeAndValueCount) {
  Tensor<double> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3}), Error);
}

TEST(Tensor, AlignedStorage) {
  for (std::size_t n : {1u, 3u, 17u, 1000u}) {
    Tensor<float> t({n});
    EXPECT_EQ(reinterpret_cast<std::uintptr_t>(t.data()) % 64, 0u);
  }
}

TEST(Conv2d, IdentityKernel) {
  auto x = random_tensor({2, 3, 5, 4}, 1);
  Tensor<double> k({3, 3, 1, 1});
  for (std::size_t f = 0; f < 3; ++f) k[f * 3 + f] = 1.0;
  Tensor<double> b({3});
  auto y = eval([&](Tape<double>& t) { return conv2d(t.input(x), t.input(k), t.input(b)); });
  EXPECT_EQ(y, x);
}

TEST(Conv2d, OnesKernelOnConstantImage) {
  const double v = 0.7;
  Tensor<double> x({1, 1, 5, 6}, v);
  Tensor<double> k({1, 1, 3, 3}, 1.0);
  Tensor<double> b({1});
  auto y = eval([&](Tape<double>& t) { return conv2d(t.input(x), t.input(k), t.input(b)); });
  ASSERT_EQ(y.shape(), (Shape{1, 1, 5, 6}));
  for (std::size_t r = 1; r < 4; ++r) {
    for (std::size_t c = 1; c < 5; ++c) EXPECT_NEAR(y[y.offset(0, 0, r, c)], 9 * v, 1e-12);
  }
  EXPECT_NEAR(y[y.offset(0, 0, 0, 0)], 4 * v, 1e-12);
  EXPECT_NEAR(y[y.offset(0, 0, 0, 2)], 6 * v, 1e-12);
}

TEST(Conv2d, ZeroInputGivesBias) {
  Tensor<double> x({2, 2, 4, 4});
  auto k = random_tensor({3, 2, 3, 3}, 2);
  Tensor<double> b({3}, std::vector<double>{0.5, -1.0, 2.0});
  auto y = eval([&](Tape<double>& t) { return conv2d(t.input(x), t.input(k), t.input(b)); });
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t f = 0; f < 3; ++f) {
      for (std::size_t p = 0; p < 16; ++p) EXPECT_EQ(y[y.offset(n, f, 0, 0) + p], b[f]);
    }
  }
}

TEST(Conv2d, BruteForceOracle) {
  auto x = random_tensor({2, 2, 6, 5}, 3);
  auto k = random_tensor({3, 2, 3, 3}, 4);
  auto b = random_tensor({3}, 5);
  for (std::size_t stride : {1u, 2u}) {
    auto y = eval([&](Tape<double>& t) { return conv2d(t.input(x), t.input(k), t.input(b), stride); });
    const std::size_t oh = (6 - 1) / stride + 1, ow = (5 - 1) / stride + 1;
    ASSERT_EQ(y.shape(), (Shape{2, 3, oh, ow}));
    for (std::size_t n = 0; n < 2; ++n) {
      for (std::size_t f = 0; f < 3; ++f) {
        for (std::size_t i = 0; i < oh; ++i) {
          for (std::size_t j = 0; j < ow; ++j) {
            double s = b[f];
            for (std::size_t c = 0; c < 2; ++c) {
              for (int di = -1; di <= 1; ++di) {
                for (int dj = -1; dj <= 1; ++dj) {
                  const int r = static_cast<int>(i * stride) + di, q = static_cast<int>(j * stride) + dj;
                  if (r < 0 || r >= 6 || q < 0 || q >= 5) continue;
                  s += x[x.offset(n, c, r, q)] * k[k.offset(f, c, di + 1, dj + 1)];
                }
              }
            }
            EXPECT_NEAR(y[y.offset(n, f, i, j)], s, 1e-12);
          }
        }
      }
    }
  }
}

TEST(Conv2d, ShapeErrors) {
  Tape<double> t;
  Tensor<double> x({1, 2, 4, 4}), k({1, 3, 3, 3}), even({1, 2, 2, 2}), b({1});
  EXPECT_THROW(conv2d(t.input(x), t.input(k), t.input(b)), Error);
  EXPECT_THROW(conv2d(t.input(x), t.input(even), t.input(b)), Error);
}

TEST(Maxpool, ConstantImage) {
  Tensor<double> x({1, 2, 4, 6}, 3.5);
  auto y = eval([&](Tape<double>& t) { return maxpool2d(t.input(x)); });
  EXPECT_EQ(y, Tensor<double>({1, 2, 2, 3}, 3.5));
}

TEST(Maxpool, WindowMaximum) {
  Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  auto y = eval([&](Tape<double>& t) { return maxpool2d(t.input(x)); });
  EXPECT_EQ(y.size(), 1u);
  EXPECT_EQ(y[0], 4.0);
}

TEST(Maxpool, OddSpatialDim) {
  Tape<double> t;
  Tensor<double> x({1, 1, 3, 4});
  try {
    maxpool2d(t.input(x));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OddSpatialDim);
  }
}

TEST(Maxpool, GradientRoutesToArgmax) {
  Tensor<double> x({1, 1, 2, 4}, std::vector<double>{1, 5, 2, 2, 3, 0, 2, 2});
  x.set_requires_grad(true);
  Tape<double> t;
  t.backward(sum(maxpool2d(t.leaf(x))));
  const std::vector<double> expect{0, 1, 1, 0, 0, 0, 0, 0};
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(x.grad()[i], expect[i]) << i;
}

TEST(Dense, HandExamples) {
  Tensor<double> x({1, 2}, std::vector<double>{1, 2});
  Tensor<double> w({2, 2}, std::vector<double>{1, 1, 0, 1});
  Tensor<double> b({2});
  auto y = eval([&](Tape<double>& t) { return dense(t.input(x), t.input(w), t.input(b)); });
  EXPECT_EQ(y, Tensor<double>({1, 2}, std::vector<double>{3, 2}));

  Tensor<double> eye({2, 2}, std::vector<double>{1, 0, 0, 1});
  EXPECT_EQ(eval([&](Tape<double>& t) { return dense(t.input(x), t.input(eye), t.input(b)); }), x);

  Tensor<double> zero({3, 2}), bias({3}, std::vector<double>{4, 5, 6});
  EXPECT_EQ(eval([&](Tape<double>& t) { return dense(t.input(x), t.input(zero), t.input(bias)); }),
            Tensor<double>({1, 3}, std::vector<double>{4, 5, 6}));

  Tape<double> t;
  EXPECT_THROW(dense(t.input(x), t.input(Tensor<double>({2, 3})), t.input(b)), Error);
}

TEST(Activations, Relu) {
  Tensor<double> x({2}, std::vector<double>{-1, 2});
  EXPECT_EQ(eval([&](Tape<double>& t) { return relu(t.input(x)); }),
            Tensor<double>({2}, std::vector<double>{0, 2}));
}

TEST(Activations, SigmoidValues) {
  Tensor<double> x({3}, std::vector<double>{0, 2, -2});
  auto y = eval([&](Tape<double>& t) { return sigmoid(t.input(x)); });
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_NEAR(y[1], 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
  EXPECT_NEAR(y[1] + y[2], 1.0, 1e-15);
}

TEST(Activations, SoftmaxEqualLogits) {
  Tensor<double> x({1, 3, 2, 2}, 0.4);
  auto y = eval([&](Tape<double>& t) { return channel_softmax(t.input(x)); });
  for (double v : y.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Activations, SoftmaxSumsToOneProperty) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto x = random_tensor({2, 3, 3, 4}, seed, -30.0, 30.0);
    auto y = eval([&](Tape<double>& t) { return channel_softmax(t.input(x)); });
    for (std::size_t n = 0; n < 2; ++n) {
      for (std::size_t p = 0; p < 12; ++p) {
        double s = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = y[y.offset(n, c, 0, 0) + p];
          EXPECT_GE(v, 0.0);
          s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
    }
  }
}

TEST(Activations, UpsampleBlocks) {
  Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  auto y = eval([&](Tape<double>& t) { return nearest_upsample2x(t.input(x)); });
  EXPECT_EQ(y, Tensor<double>({1, 1, 4, 4}, std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
}

TEST(Activations, ConcatChannels) {
  Tensor<double> a({1, 1, 1, 2}, std::vector<double>{1, 2}), b({1, 2, 1, 2}, std::vector<double>{3, 4, 5, 6});
  auto y = eval([&](Tape<double>& t) { return concat_channels(t.input(a), t.input(b)); });
  EXPECT_EQ(y, Tensor<double>({1, 3, 1, 2}, std::vector<double>{1, 2, 3, 4, 5, 6}));
  Tape<double> t;
  EXPECT_THROW(concat_channels(t.input(a), t.input(Tensor<double>({1, 1, 2, 2}))), Error);
}

TEST(CropResize, FullBoxIsIdentity) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto x = random_tensor({2, 2, 5 + seed % 3, 7}, seed);
    Tensor<double> box({2, 4}, std::vector<double>{0, 1, 0, 1, 0, 1, 0, 1});
    auto y = eval([&](Tape<double>& t) {
      return crop_resize(t.input(x), t.input(box), x.dim(2), x.dim(3));
    });
    EXPECT_EQ(y, x);
  }
}

TEST(CropResize, MidpointIsHalf) {
  Tensor<double> x({1, 1, 4, 4});
  for (std::size_t r = 2; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) x[x.offset(0, 0, r, c)] = 1.0;
  }
  // Rows sampled at 1.5 and 2.5, columns at 1.5 and 2.5.
  Tensor<double> box({1, 4}, std::vector<double>{0.375, 0.875, 0.375, 0.875});
  auto y = eval([&](Tape<double>& t) { return crop_resize(t.input(x), t.input(box), 2, 2); });
  EXPECT_NEAR(y[0], 0.5, 1e-15);
  EXPECT_NEAR(y[1], 0.5, 1e-15);
  EXPECT_NEAR(y[2], 1.0, 1e-15);
}

TEST(CropResize, ConstantImageAnyBox) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor<double> x({1, 1, 8, 8}, 0.25);
  for (int k = 0; k < 50; ++k) {
    const double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    Tensor<double> box({1, 4}, std::vector<double>{a, b, c, d});
    auto y = eval([&](Tape<double>& t) { return crop_resize(t.input(x), t.input(box), 5, 3); });
    for (double v : y.values()) EXPECT_NEAR(v, 0.25, 1e-12);
  }
}

TEST(CropResize, SanitizeBox) {
  auto a = sanitize_axis(0.8, 0.2, 10);
  EXPECT_DOUBLE_EQ(a.lo, 0.2);
  EXPECT_DOUBLE_EQ(a.hi, 0.8);
  auto c = sanitize_axis(-0.5, 1.5, 10);
  EXPECT_DOUBLE_EQ(c.lo, 0.0);
  EXPECT_DOUBLE_EQ(c.hi, 1.0);
  EXPECT_EQ(c.dlo_draw_lo, 0.0);
  EXPECT_EQ(c.dhi_draw_hi, 0.0);
  auto d = sanitize_axis(0.5, 0.5, 10);
  EXPECT_NEAR(d.hi - d.lo, 0.2, 1e-15);
  EXPECT_NEAR(0.5 * (d.lo + d.hi), 0.5, 1e-15);
}

TEST(CropResize, InflatedBoxStaysInside) {
  auto a = sanitize_axis(0.02, 0.03, 10);
  EXPECT_DOUBLE_EQ(a.lo, 0.0);
  EXPECT_NEAR(a.hi, 0.2, 1e-15);
  auto b = sanitize_axis(1.0, 0.99, 10);
  EXPECT_NEAR(b.lo, 0.8, 1e-15);
  EXPECT_DOUBLE_EQ(b.hi, 1.0);
}

TEST(CropResize, EdgeSamplesReplicateBorder) {
  Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor<double> box({1, 4}, std::vector<double>{0, 1, 0, 1});
  auto y = eval([&](Tape<double>& t) { return crop_resize(t.input(x), t.input(box), 4, 4); });
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[3], 2.0);
  EXPECT_DOUBLE_EQ(y[12], 3.0);
  EXPECT_DOUBLE_EQ(y[15], 4.0);
  EXPECT_DOUBLE_EQ(y[5], 0.75 * 0.75 * 1 + 0.75 * 0.25 * 2 + 0.25 * 0.75 * 3 + 0.25 * 0.25 * 4);
}

TEST(CropResize, DegenerateBoxGradientsFinite) {
  auto x = random_tensor({1, 1, 6, 6}, 4);
  Tensor<double> box({1, 4}, std::vector<double>{0.7, 0.3, 1.4, -0.2});
  box.set_requires_grad(true);
  x.set_requires_grad(true);
  Tape<double> t;
  t.backward(sum(square(crop_resize(t.leaf(x), t.leaf(box), 4, 4))));
  for (double g : box.grad()) EXPECT_TRUE(std::isfinite(g));
  for (double g : x.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(CropResize, OutputTooSmall) {
  Tape<double> t;
  Tensor<double> x({1, 1, 4, 4}), box({1, 4}, std::vector<double>{0, 1, 0, 1});
  try {
    crop_resize(t.input(x), t.input(box), 1, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutputTooSmall);
  }
}

TEST(Backward, SumGivesOnes) {
  auto x = random_tensor({3, 2}, 1);
  x.set_requires_grad(true);
  Tape<double> t;
  t.backward(sum(t.leaf(x)));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SumOfSquares) {
  Tensor<double> x({3}, std::vector<double>{1, 2, 3});
  x.set_requires_grad(true);
  Tape<double> t;
  t.backward(sum(square(t.leaf(x))));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, NotScalarLoss) {
  Tensor<double> x({3});
  Tape<double> t;
  try {
    t.backward(t.input(x));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotScalarLoss);
  }
}

TEST(Backward, IdempotentAfterZeroing) {
  auto x = random_tensor({1, 2, 4, 4}, 2);
  auto k = random_tensor({3, 2, 3, 3}, 3);
  Tensor<double> b({3});
  k.set_requires_grad(true);
  Tape<double> t;
  auto loss = sum(square(relu(conv2d(t.input(x), t.leaf(k), t.input(b)))));
  t.backward(loss);
  const std::vector<double> first(k.grad().begin(), k.grad().end());
  k.zero_grad();
  t.backward(loss);
  EXPECT_EQ(std::vector<double>(k.grad().begin(), k.grad().end()), first);
}

TEST(Backward, DeterministicReplay) {
  auto run = [] {
    auto x = random_tensor({2, 3, 8, 8}, 7);
    auto k = random_tensor({4, 3, 3, 3}, 8);
    auto b = random_tensor({4}, 9);
    k.set_requires_grad(true);
    b.set_requires_grad(true);
    Tape<double> t;
    t.backward(mean(square(maxpool2d(relu(conv2d(t.input(x), t.leaf(k), t.leaf(b)))))));
    std::vector<double> g(k.grad().begin(), k.grad().end());
    g.insert(g.end(), b.grad().begin(), b.grad().end());
    return g;
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, ConvReluSumMatchesFiniteDifferences) {
  auto x = random_tensor({1, 2, 5, 5}, 11);
  auto k = random_tensor({2, 2, 3, 3}, 12);
  auto b = random_tensor({2}, 13);
  const double err = check_gradients(
      [](Tape<double>&, std::span<const Var<double>> v) { return sum(relu(conv2d(v[0], v[1], v[2]))); },
      {&x, &k, &b}, 1e-6);
  EXPECT_LE(err, 1e-4);
}

TEST(GradCheck, LinearFunctionExact) {
  auto x = random_tensor({4, 3}, 21);
  auto w = random_tensor({4, 3}, 22);
  const double err = check_gradients(
      [&](Tape<double>& t, std::span<const Var<double>> v) { return sum(mul(v[0], t.constant(w))); }, {&x},
      1e-6);
  EXPECT_LE(err, 1e-10);
}

TEST(GradCheck, CropResizeBoxCoordinates) {
  auto x = random_tensor({1, 1, 7, 7}, 31);
  Tensor<double> box({1, 4}, std::vector<double>{0.21, 0.77, 0.13, 0.69});
  const double err = check_gradients(
      [&](Tape<double>& t, std::span<const Var<double>> v) {
        return sum(square(crop_resize(t.input(x), v[0], 5, 4)));
      },
      {&box}, 1e-6);
  EXPECT_LE(err, 1e-4);
}

TEST(GradCheck, MaxpoolStrictArgmax) {
  Tensor<double> x({1, 1, 4, 4}, std::vector<double>{1, 2, 9, 3, 4, 0, 5, 6, 8, 7, 10, 15, 11, 12, 14, 13});
  const double err = check_gradients(
      [](Tape<double>&, std::span<const Var<double>> v) { return sum(square(maxpool2d(v[0]))); }, {&x}, 1e-6);
  EXPECT_LE(err, 1e-6);
}

class GradientSuite : public ::testing::TestWithParam<std::string> {};

TEST_P(GradientSuite, JitteredConfigurations) {
  const auto r = harness::run_gradient_check(GetParam(), 20, 3);
  EXPECT_EQ(r.configs, 20u);
  EXPECT_TRUE(r.passed()) << r.op << " error " << r.max_error << " > " << r.tolerance;
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradientSuite, ::testing::ValuesIn(harness::gradient_suite_ops()),
                         [](const auto& info) { return info.param; });

TEST(GradientSuite, UnknownOp) { EXPECT_THROW(harness::run_gradient_check("nope"), Error); }

TEST(Serialize, RoundTripIsFloat32) {
  std::vector<NamedTensor<double>> params{{"a.w", random_tensor({2, 3, 3, 3}, 1)},
                                          {"b", random_tensor({5}, 2)}};
  std::stringstream ss;
  write_parameters(ss, params);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 4), "LUNK");
  auto back = read_parameters<double>(ss);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].name, params[i].name);
    ASSERT_EQ(back[i].tensor.shape(), params[i].tensor.shape());
    for (std::size_t k = 0; k < back[i].tensor.size(); ++k) {
      EXPECT_EQ(back[i].tensor[k], static_cast<double>(static_cast<float>(params[i].tensor[k])));
    }
  }
  // Trailing payload is 59 little-endian floats.
  const std::size_t payload = 4 * (54 + 5);
  float first{};
  std::memcpy(&first, bytes.data() + bytes.size() - payload, 4);
  EXPECT_EQ(first, static_cast<float>(params[0].tensor[0]));
}

TEST(Serialize, RejectsBadInput) {
  std::stringstream bad("NOPE");
  EXPECT_THROW(read_parameters<float>(bad), Error);
  std::vector<NamedTensor<float>> params{{"x", Tensor<float>({4}, 1.0f)}};
  std::stringstream ss;
  write_parameters(ss, params);
  std::string s = ss.str();
  std::stringstream truncated(s.substr(0, s.size() - 2));
  try {
    read_parameters<float>(truncated);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoFailure);
  }
}
