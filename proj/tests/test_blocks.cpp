#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/blocks.hpp"
#include "core/grad_check.hpp"

using namespace prnet;

TEST_CASE("conv_block keeps spatial dims at stride 1") {
  Rng rng(1);
  auto blk = make_conv_block<float>(8, 4, 3, 1, Act::silu, rng);
  Tensor x = Tensor::random_normal({1, 8, 16, 16}, rng, 1.f);
  Tensor y = conv_block(x, blk);
  CHECK(y.shape() == Shape4{1, 4, 16, 16});

  for (int h : {3, 4, 5, 7, 8}) {
    Tensor t = Tensor::random_normal({1, 8, h, h + 1}, rng, 1.f);
    CHECK(conv_block(t, blk).shape() == Shape4{1, 4, h, h + 1});
  }
}

TEST_CASE("identity-configured block reproduces its input") {
  Rng rng(2);
  auto blk = make_conv_block<float>(2, 2, 3, 1, Act::identity, rng);
  // Centered delta kernel, neutral inference stats.
  std::fill(blk.conv.values.vec().begin(), blk.conv.values.vec().end(), 0.f);
  blk.conv.values.at(0, 0, 1, 1) = 1.f;
  blk.conv.values.at(1, 1, 1, 1) = 1.f;
  blk.bn.training = false;
  Tensor x = Tensor::random_normal({1, 2, 6, 6}, rng, 1.f);
  Tensor y = conv_block(x, blk);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-4));
}

TEST_CASE("conv_block gradient check") {
  Rng rng(3);
  auto blk = make_conv_block<double>(3, 2, 3, 1, Act::silu, rng);
  TensorD x = TensorD::random_normal({1, 3, 5, 5}, rng, 1.0, true);
  const double err = grad_check<double>(
      [&] { return sum_all(conv_block(x, blk)); },
      {x, blk.conv.values, blk.bn.gamma, blk.bn.beta}, 1e-5);
  CHECK(err <= 1e-4);
}

TEST_CASE("conv_block rejects channel mismatch") {
  Rng rng(4);
  auto blk = make_conv_block<float>(8, 4, 3, 1, Act::silu, rng);
  Tensor x = Tensor::random_normal({1, 5, 8, 8}, rng, 1.f);
  CHECK_THROWS_AS(conv_block(x, blk), ContractViolation);
}

TEST_CASE("resize_down2 halves spatial dims and composes to stride 4") {
  Rng rng(5);
  auto d1 = make_conv_block<float>(4, 8, 3, 2, Act::silu, rng);
  Tensor x = Tensor::random_normal({1, 4, 32, 32}, rng, 1.f);
  Tensor y = resize_down2(x, d1);
  CHECK(y.shape() == Shape4{1, 8, 16, 16});

  auto d2 = make_conv_block<float>(8, 8, 3, 2, Act::silu, rng);
  Tensor z = resize_down2(y, d2);
  CHECK(z.shape() == Shape4{1, 8, 8, 8});

  // S successive halvings of a 4*2^S input end at 4.
  auto dn = make_conv_block<float>(2, 2, 3, 2, Act::silu, rng);
  Tensor t = Tensor::random_normal({1, 2, 64, 64}, rng, 1.f);
  for (int s = 0; s < 4; ++s) t = resize_down2(t, dn);
  CHECK(t.shape().h == 4);

  Tensor odd = Tensor::random_normal({1, 4, 7, 8}, rng, 1.f);
  CHECK_THROWS_AS(resize_down2(odd, d1), std::invalid_argument);
}

TEST_CASE("resize_down2 gradient check") {
  Rng rng(6);
  auto blk = make_conv_block<double>(2, 3, 3, 2, Act::silu, rng);
  TensorD x = TensorD::random_normal({1, 2, 6, 6}, rng, 1.0, true);
  const double err = grad_check<double>(
      [&] { return sum_all(resize_down2(x, blk)); },
      {x, blk.conv.values, blk.bn.gamma, blk.bn.beta}, 1e-5);
  CHECK(err <= 1e-4);
}

TEST_CASE("avgpool downsample variant preserves channels") {
  Rng rng(7);
  auto down = make_downsample<float>(DownKind::avgpool, 6, 12, rng);
  Tensor x = Tensor::random_normal({1, 6, 8, 8}, rng, 1.f);
  Tensor y = downsample2(x, down);
  CHECK(y.shape() == Shape4{1, 6, 4, 4});
  CHECK(down.out_channels(6) == 6);

  auto conv = make_downsample<float>(DownKind::conv, 6, 12, rng);
  CHECK(downsample2(x, conv).shape() == Shape4{1, 12, 4, 4});
  CHECK(down_kind_from_string("avgpool") == DownKind::avgpool);
  CHECK_THROWS_AS(down_kind_from_string("maxpool"), std::invalid_argument);
}

TEST_CASE("init is seed-deterministic and seed-sensitive") {
  Rng a(42), b(42), c(43);
  Tensor wa = kaiming_normal<float>({4, 4, 3, 3}, 36, a);
  Tensor wb = kaiming_normal<float>({4, 4, 3, 3}, 36, b);
  Tensor wc = kaiming_normal<float>({4, 4, 3, 3}, 36, c);
  CHECK(wa.vec() == wb.vec());
  CHECK(wa.vec() != wc.vec());
}

TEST_CASE("init variance tracks 2/fan_in") {
  Rng rng(8);
  // 3x3 kernels over 64 input channels: fan_in 576, >= 10k draws.
  const int fan_in = 64 * 9;
  Tensor w = kaiming_normal<float>({18, 64, 3, 3}, fan_in, rng);
  REQUIRE(w.numel() >= 10000);
  double mean = 0;
  for (int64_t i = 0; i < w.numel(); ++i) mean += w.data()[i];
  mean /= static_cast<double>(w.numel());
  double var = 0;
  for (int64_t i = 0; i < w.numel(); ++i) {
    const double d = w.data()[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(w.numel());
  const double target = 2.0 / fan_in;
  CHECK(var > 0.8 * target);
  CHECK(var < 1.2 * target);
}
