#include <gtest/gtest.h>

#include <random>

#include "cdn/errors.hpp"
#include "cdn/ops.hpp"
#include "test_support.hpp"

namespace cdn {
namespace {

using testing::gradient_check;
using testing::random_tensor;
using testing::styled_tensor;

constexpr double kTol = 1e-6;

// Projects any op output onto a fixed random direction so every output
// element contributes to the scalar being differentiated.
ad::Var probe(const ad::Var& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Tensor w = random_tensor(y.shape(), rng);
  const Tensor zero(y.shape(), 0.0);
  // sum(w * y) up to a constant: ||y + w||^2 - ||y||^2 = 2 w.y + ||w||^2.
  ad::Var a = ad::batch_squared_distance(y, ad::scale(ad::constant(w), -1.0));
  ad::Var b = ad::batch_squared_distance(y, ad::constant(zero));
  return ad::sub(a, b);
}

TEST(OpsGrad, Conv2dAllInputs) {
  std::mt19937_64 rng(1);
  for (std::size_t stride : {1u, 2u}) {
    ad::Var x = ad::parameter(random_tensor({2, 2, 5, 5}, rng));
    ad::Var w = ad::parameter(random_tensor({3, 2, 3, 3}, rng));
    ad::Var b = ad::parameter(random_tensor({3}, rng));
    auto f = [&] { return probe(ad::conv2d(x, w, b, stride, 1), 7); };
    EXPECT_LT(gradient_check(f, {x, w, b}), kTol) << "stride " << stride;
  }
}

TEST(OpsGrad, Conv2dShape) {
  std::mt19937_64 rng(2);
  ad::Var x = ad::constant(random_tensor({2, 3, 8, 8}, rng));
  ad::Var w = ad::constant(random_tensor({4, 3, 3, 3}, rng));
  ad::Var b = ad::constant(random_tensor({4}, rng));
  EXPECT_EQ(ad::conv2d(x, w, b, 2, 1).shape(), (Shape{2, 4, 4, 4}));
  EXPECT_EQ(ad::conv2d(x, w, b, 1, 1).shape(), (Shape{2, 4, 8, 8}));
}

TEST(OpsGrad, Conv2dMatchesDirectSum) {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({1, 2, 4, 4}, rng);
  const Tensor w = random_tensor({1, 2, 3, 3}, rng);
  const Tensor y = ad::conv2d(ad::constant(x), ad::constant(w), ad::constant(Tensor({1}, 0.25)), 1, 1).value();
  for (int oy = 0; oy < 4; ++oy)
    for (int ox = 0; ox < 4; ++ox) {
      double s = 0.25;
      for (int c = 0; c < 2; ++c)
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int iy = oy + ky - 1, ix = ox + kx - 1;
            if (iy < 0 || ix < 0 || iy >= 4 || ix >= 4) continue;
            s += x.at(0, c, iy, ix) * w.at(0, c, ky, kx);
          }
      EXPECT_NEAR(y.at(0, 0, oy, ox), s, 1e-12);
    }
}

TEST(OpsGrad, Pointwise) {
  std::mt19937_64 rng(4);
  ad::Var x = ad::parameter(random_tensor({2, 2, 3, 3}, rng));
  ad::Var y = ad::parameter(random_tensor({2, 2, 3, 3}, rng));
  EXPECT_LT(gradient_check([&] { return probe(ad::silu(x), 1); }, {x}), kTol);
  EXPECT_LT(gradient_check([&] { return probe(ad::sigmoid(x), 2); }, {x}), kTol);
  EXPECT_LT(gradient_check([&] { return probe(ad::leaky_relu(x, 0.1), 3); }, {x}), kTol);
  EXPECT_LT(gradient_check([&] { return probe(ad::sub(ad::add(x, y), ad::scale(y, 3.0)), 4); }, {x, y}), kTol);
  EXPECT_LT(gradient_check([&] { return probe(ad::upsample2x(x), 5); }, {x}), kTol);
}

TEST(OpsGrad, ChannelStatistics) {
  std::mt19937_64 rng(5);
  ad::Var x = ad::parameter(styled_tensor({2, 3, 4, 4}, rng));
  ad::Var s = ad::parameter(random_tensor({2, 3}, rng));
  ad::Var t = ad::parameter(random_tensor({2, 3}, rng));
  EXPECT_LT(gradient_check([&] { return probe(ad::channel_mean(x), 1); }, {x}), kTol);
  EXPECT_LT(gradient_check([&] { return probe(ad::channel_std(x, 1e-5), 2); }, {x}), kTol);
  EXPECT_LT(gradient_check([&] { return probe(ad::instance_normalize(x, 1e-5), 3); }, {x}), kTol);
  EXPECT_LT(gradient_check([&] { return probe(ad::scale_shift(x, s, t), 4); }, {x, s, t}), kTol);
}

TEST(OpsGrad, BatchPlumbing) {
  std::mt19937_64 rng(6);
  ad::Var x = ad::parameter(random_tensor({3, 2, 2, 2}, rng));
  ad::Var y = ad::parameter(random_tensor({3, 2, 2, 2}, rng));
  EXPECT_LT(gradient_check([&] { return probe(ad::gather_batch(x, {2, 0, 2, 1}), 1); }, {x}), kTol);
  EXPECT_LT(gradient_check([&] { return probe(ad::select_batch({true, false, true}, x, y), 2); }, {x, y}), kTol);
  EXPECT_LT(gradient_check([&] { return probe(ad::concat_batch({x, y}), 3); }, {x, y}), kTol);
  EXPECT_LT(gradient_check([&] { return probe(ad::slice_batch(x, 1, 2), 4); }, {x}), kTol);
}

TEST(OpsGrad, DenseAndFeatureConcat) {
  std::mt19937_64 rng(7);
  ad::Var a = ad::parameter(random_tensor({3, 4}, rng));
  ad::Var b = ad::parameter(random_tensor({3, 2}, rng));
  ad::Var w = ad::parameter(random_tensor({5, 6}, rng));
  ad::Var bias = ad::parameter(random_tensor({5}, rng));
  auto f = [&] { return probe(ad::linear(ad::concat_features({a, b}), w, bias), 8); };
  EXPECT_LT(gradient_check(f, {a, b, w, bias}), kTol);
}

TEST(OpsGrad, ScalarReductions) {
  std::mt19937_64 rng(8);
  ad::Var a = ad::parameter(random_tensor({3, 2, 2, 2}, rng));
  ad::Var b = ad::parameter(random_tensor({3, 2, 2, 2}, rng));
  EXPECT_LT(gradient_check([&] { return ad::mean_squared_error(a, b); }, {a, b}), kTol);
  EXPECT_LT(gradient_check([&] { return ad::batch_squared_distance(a, b); }, {a, b}), kTol);
  ad::Var p = ad::parameter(random_tensor({6, 1}, rng, 0.05, 0.95));
  const std::vector<double> labels{0, 1, 1, 0, 1, 0};
  EXPECT_LT(gradient_check([&] { return ad::binary_cross_entropy(p, labels, 1e-7); }, {p}), kTol);
  ad::Var r = ad::parameter(random_tensor({4, 3}, rng));
  ad::Var f = ad::parameter(random_tensor({3, 3}, rng));
  EXPECT_LT(gradient_check([&] { return ad::boundary_contrast(r, f); }, {r, f}), kTol);
}

TEST(Ops, MeanSquaredErrorValue) {
  const Tensor a({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor b({1, 1, 2, 2}, std::vector<double>{0, 2, 5, 4});
  EXPECT_DOUBLE_EQ(ad::mean_squared_error(ad::constant(a), ad::constant(b)).value().item(), 5.0 / 4.0);
  const Tensor c({2, 1, 1, 2}, std::vector<double>{1, 1, 0, 2});
  const Tensor z({2, 1, 1, 2}, 0.0);
  EXPECT_DOUBLE_EQ(ad::batch_squared_distance(ad::constant(c), ad::constant(z)).value().item(), 3.0);
}

TEST(Ops, BoundaryContrastRejectsDegenerateInput) {
  const ad::Var one = ad::constant(Tensor({1, 2}, 1.0));
  const ad::Var two = ad::constant(Tensor({2, 2}, 1.0));
  EXPECT_THROW(ad::boundary_contrast(one, two), InvalidInput);
  EXPECT_THROW(ad::boundary_contrast(ad::constant(Tensor({2, 2}, 0.0)), one), InvalidInput);
}

}  // namespace
}  // namespace cdn
