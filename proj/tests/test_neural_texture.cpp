#include <gtest/gtest.h>

#include <random>

#include "ntex/gradcheck.hpp"
#include "ntex/gradcheck_suite.hpp"
#include "ntex/neural_texture.hpp"

using namespace ntex;

namespace {

Tensor<double> uv_tensor(std::initializer_list<double> values) {
  return Tensor<double>::from({values.size() / 2, 2}, Buffer<double>(values));
}

GBuffer one_pixel(float u, float v, Vec3 dir = Vec3(0, 0, 1)) {
  GBuffer g = GBuffer::empty(1, 1);
  g.object_id[0] = 1;
  g.uv = {u, v};
  g.view_dir = {static_cast<float>(dir.x()), static_cast<float>(dir.y()), static_cast<float>(dir.z())};
  g.depth[0] = 1.0f;
  return g;
}

NeuralTexturePyramid<double> random_pyramid(std::uint64_t seed, std::size_t channels, std::size_t res, std::size_t k) {
  return NeuralTexturePyramid<double>::make(channels, res, k, seed, 1.0);
}

}  // namespace

TEST(Bilinear, TexelCenterReturnsTexel) {
  std::mt19937_64 rng(1);
  auto level = detail::random_tensor(rng, {2, 4, 4});
  // Texel (row 2, column 1) sits at uv (1/3, 2/3).
  const auto out = sample_bilinear(level, uv_tensor({1.0 / 3.0, 2.0 / 3.0}));
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(out.data()[c], level.data()[c * 16 + 2 * 4 + 1], 1e-15);
}

TEST(Bilinear, MidpointIsMeanOfFour) {
  auto level = Tensor<double>::from({1, 2, 2}, {0, 1, 2, 3});
  EXPECT_DOUBLE_EQ(sample_bilinear(level, uv_tensor({0.5, 0.5})).item(), 1.5);
}

TEST(Bilinear, HandComputedQuarterPosition) {
  // (1-.25)(1-.75)*0 + .25(1-.75)*1 + (1-.25).75*2 + .25*.75*3
  auto level = Tensor<double>::from({1, 2, 2}, {0, 1, 2, 3});
  EXPECT_DOUBLE_EQ(sample_bilinear(level, uv_tensor({0.25, 0.75})).item(), 1.75);
  EXPECT_DOUBLE_EQ(sample_bilinear_at(level, 0.25, 0.75)[0], 1.75);
}

TEST(Bilinear, WeightsSumToOneAndConstantsReproduce) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto level = Tensor<double>::full({3, 5, 5}, -0.7);
  for (int i = 0; i < 500; ++i) {
    const double u = unit(rng), v = unit(rng);
    const auto w = bilinear_tap(u, v, 5).weights();
    EXPECT_NEAR(w[0] + w[1] + w[2] + w[3], 1.0, 1e-15);
    for (double s : sample_bilinear_at(level, u, v)) EXPECT_NEAR(s, -0.7, 1e-15);
  }
  for (double u : {0.0, 1.0}) {
    for (double s : sample_bilinear_at(level, u, u)) EXPECT_NEAR(s, -0.7, 1e-15);
  }
}

TEST(Bilinear, OutsideUnitSquareIsDomainError) {
  auto level = Tensor<double>::zeros({1, 4, 4});
  EXPECT_THROW(sample_bilinear(level, uv_tensor({1.01, 0.5})), DomainError);
  EXPECT_THROW(sample_bilinear(level, uv_tensor({0.5, -0.01})), DomainError);
}

TEST(Bilinear, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  auto level = detail::random_tensor(rng, {2, 4, 4});
  auto uv = detail::random_tensor(rng, {6, 2}, 0.05, 0.95);
  TensorFunction<double> f = [](const auto& in) { return sample_bilinear(in[0], in[1]); };
  EXPECT_LT(finite_difference_check(f, {level, uv}, 1e-6), 1e-4);
}

TEST(SamplePyramid, SingleLevelIsBilinear) {
  const auto pyr = random_pyramid(4, 3, 8, 1);
  const auto g = one_pixel(0.3f, 0.8f);
  const auto features = sample_pyramid(pyr, g);
  const auto expected = sample_bilinear_at(pyr.levels[0], 0.3f, 0.8f);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(features.data()[c], expected[c]);
}

TEST(SamplePyramid, ConstantLevelsSum) {
  NeuralTexturePyramid<double> pyr;
  pyr.levels = {Tensor<double>::full({2, 2, 2}, 0.5), Tensor<double>::full({2, 4, 4}, -2.0),
                Tensor<double>::full({2, 8, 8}, 0.25)};
  std::mt19937_64 rng(5);
  const auto g = detail::random_gbuffer(rng, 6, 5, 0.7);
  const auto f = sample_pyramid(pyr, g);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < g.pixel_count(); ++i) {
      EXPECT_DOUBLE_EQ(f.data()[c * g.pixel_count() + i], g.mask(i) ? -1.25 : 0.0);
    }
  }
}

TEST(SamplePyramid, HandComputedTwoLevels) {
  NeuralTexturePyramid<double> pyr;
  Buffer<double> fine(16);
  for (int i = 0; i < 16; ++i) fine[i] = i;  // texel (r, c) = 4r + c
  pyr.levels = {Tensor<double>::from({1, 2, 2}, {0, 1, 2, 3}), Tensor<double>::from({1, 4, 4}, fine)};
  // Coarse: 1.75. Fine: x = 0.75, y = 2.25 -> 4 * 2.25 + 0.75 = 9.75.
  EXPECT_DOUBLE_EQ(sample_pyramid(pyr, one_pixel(0.25f, 0.75f)).item(), 11.5);
}

TEST(SamplePyramid, IsLinearInThePyramid) {
  const auto a = random_pyramid(6, 4, 8, 3), b = random_pyramid(7, 4, 8, 3);
  NeuralTexturePyramid<double> ab;
  for (std::size_t l = 0; l < 3; ++l) ab.levels.push_back(add(a.levels[l], b.levels[l]).detach_copy());
  std::mt19937_64 rng(8);
  const auto g = detail::random_gbuffer(rng, 9, 9);
  const auto fa = sample_pyramid(a, g), fb = sample_pyramid(b, g), fab = sample_pyramid(ab, g);
  for (std::size_t i = 0; i < fab.numel(); ++i) EXPECT_NEAR(fab.data()[i], fa.data()[i] + fb.data()[i], 1e-6);
}

TEST(SamplePyramid, ObjectFilterAndBackground) {
  const auto pyr = random_pyramid(9, 2, 4, 2);
  GBuffer g = GBuffer::empty(3, 1);
  g.object_id = {1, 2, 0};
  g.uv = {0.2f, 0.2f, 0.7f, 0.1f, 0.f, 0.f};
  g.view_dir = {0, 0, 1, 0, 0, 1, 0, 0, 0};
  const std::uint16_t only_two[] = {2};
  const auto f = sample_pyramid(pyr, g, only_two);
  EXPECT_EQ(f.data()[0], 0.0);
  EXPECT_NE(f.data()[1], 0.0);
  EXPECT_EQ(f.data()[2], 0.0);
}

TEST(SamplePyramid, TexelGradientsMatchFiniteDifferences) {
  const auto pyr = random_pyramid(10, 3, 8, 3);
  std::mt19937_64 rng(11);
  const auto g = detail::random_gbuffer(rng, 6, 6);
  TensorFunction<double> f = [&](const auto& in) {
    NeuralTexturePyramid<double> p;
    p.levels = in;
    return sample_pyramid(p, g);
  };
  EXPECT_LT(finite_difference_check(f, pyr.levels, 1e-6), 1e-4);
}

TEST(Pyramid, MakeShapesAndInit) {
  const auto p = NeuralTexturePyramid<float>::make(16, 64, 3, 1);
  ASSERT_EQ(p.level_count(), 3u);
  EXPECT_EQ(p.levels[0].shape(), (Shape{16, 16, 16}));
  EXPECT_EQ(p.levels[2].shape(), (Shape{16, 64, 64}));
  for (const auto& l : p.levels) {
    for (float v : l.data()) EXPECT_LE(std::abs(v), 0.1f);
  }
  EXPECT_THROW(NeuralTexturePyramid<float>::make(16, 8, 4, 1), ConfigError);
  EXPECT_THROW(NeuralTexturePyramid<float>::make(16, 12, 4, 1), ConfigError);
}

TEST(ShBasis, PositiveZ) {
  const auto b = eval_sh_basis(Vec3(0, 0, 1));
  const double expected[9] = {0.282095, 0, 0.488603, 0, 0, 0, 0.630784, 0, 0};
  for (int i = 0; i < 9; ++i) EXPECT_NEAR(b[i], expected[i], 1e-6);
}

TEST(ShBasis, ConstantBandAndRenormalization) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n;
  for (int i = 0; i < 100; ++i) {
    const Vec3 d = Vec3(n(rng), n(rng), n(rng)).normalized();
    EXPECT_NEAR(eval_sh_basis(d)[0], 0.282095, 1e-6);
    const auto a = eval_sh_basis(1.005 * d), b = eval_sh_basis(d);
    for (int k = 0; k < 9; ++k) EXPECT_NEAR(a[k], b[k], 1e-12);
  }
  EXPECT_THROW(eval_sh_basis(Vec3(0, 0, 1.5)), DomainError);
  EXPECT_THROW(eval_sh_basis(Vec3::Zero()), DomainError);
}

TEST(ShBasis, MonteCarloOrthonormality) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n;
  const int samples = 100000;
  double gram[9][9] = {};
  for (int s = 0; s < samples; ++s) {
    const auto b = eval_sh_basis(Vec3(n(rng), n(rng), n(rng)).normalized());
    for (int i = 0; i < 9; ++i) {
      for (int j = 0; j < 9; ++j) gram[i][j] += b[i] * b[j];
    }
  }
  for (int i = 0; i < 9; ++i) {
    for (int j = 0; j < 9; ++j) {
      EXPECT_NEAR(gram[i][j] / samples * 4.0 * std::numbers::pi, i == j ? 1.0 : 0.0, 0.05) << i << "," << j;
    }
  }
}

TEST(ModulateSh, OnesIsIdentity) {
  std::mt19937_64 rng(14);
  auto f = detail::random_tensor(rng, {16, 3, 4});
  Buffer<double> ones(9 * 12, 1.0);
  const auto out = modulate_sh(f, std::span<const double>(ones));
  for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_EQ(out.data()[i], f.data()[i]);
}

TEST(ModulateSh, PositiveZOnOnes) {
  GBuffer g = GBuffer::empty(2, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    g.object_id[i] = 1;
    g.view_dir[3 * i + 2] = 1.0f;
  }
  const auto out = modulate_sh(Tensor<double>::full({16, 2, 2}, 1.0), g);
  const auto basis = eval_sh_basis(Vec3(0, 0, 1));
  for (std::size_t c = 0; c < 16; ++c) {
    const double expected = (c >= 3 && c < 12) ? basis[c - 3] : 1.0;
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(out.data()[c * 4 + i], expected);
  }
}

TEST(ModulateSh, PassThroughAndLinearity) {
  std::mt19937_64 rng(15);
  const auto g = detail::random_gbuffer(rng, 5, 4, 1.0);
  auto a = detail::random_tensor(rng, {16, 4, 5});
  auto b = detail::random_tensor(rng, {16, 4, 5});
  const auto ma = modulate_sh(a, g), mb = modulate_sh(b, g), mab = modulate_sh(add(scale(a, 2.0), b), g);
  for (std::size_t c = 0; c < 16; ++c) {
    const bool passthrough = c < 3 || c >= 12;
    std::size_t argmax_in = 0, argmax_out = 0;
    for (std::size_t i = 0; i < 20; ++i) {
      const std::size_t k = c * 20 + i;
      if (passthrough) EXPECT_EQ(ma.data()[k], a.data()[k]);
      EXPECT_NEAR(mab.data()[k], 2.0 * ma.data()[k] + mb.data()[k], 1e-12);
      if (a.data()[k] > a.data()[c * 20 + argmax_in]) argmax_in = i;
      if (ma.data()[k] > ma.data()[c * 20 + argmax_out]) argmax_out = i;
    }
    if (passthrough) EXPECT_EQ(argmax_in, argmax_out);
  }
}

TEST(ModulateSh, NeedsTwelveChannels) {
  EXPECT_THROW(modulate_sh(Tensor<double>::zeros({11, 1, 1}), one_pixel(0.5f, 0.5f)), ConfigError);
}

TEST(ModulateSh, BackgroundStaysZero) {
  std::mt19937_64 rng(16);
  const auto g = detail::random_gbuffer(rng, 6, 6, 0.5);
  const auto pyr = random_pyramid(17, 16, 4, 2);
  const auto out = modulate_sh(sample_pyramid(pyr, g), g);
  for (std::size_t c = 0; c < 16; ++c) {
    for (std::size_t i = 0; i < 36; ++i) {
      if (!g.mask(i)) EXPECT_EQ(out.data()[c * 36 + i], 0.0);
    }
  }
}

TEST(L2Penalty, Examples) {
  NeuralTexturePyramid<double> zero;
  zero.levels = {Tensor<double>::zeros({2, 2, 2}), Tensor<double>::zeros({2, 4, 4})};
  EXPECT_EQ(pyramid_l2_penalty(zero, 0.3).item(), 0.0);
  EXPECT_EQ(pyramid_l2_penalty(random_pyramid(18, 3, 8, 1), 0.5).item(), 0.0);
  NeuralTexturePyramid<double> twos;
  twos.levels = {Tensor<double>::full({1, 1, 1}, 7.0), Tensor<double>::full({1, 2, 2}, 2.0)};
  EXPECT_DOUBLE_EQ(pyramid_l2_penalty(twos, 0.5).item(), 8.0);
}

TEST(L2Penalty, WeightsGrowWithLevel) {
  NeuralTexturePyramid<double> p;
  p.levels = {Tensor<double>::full({1, 2, 2}, 1.0, true), Tensor<double>::full({1, 4, 4}, 1.0, true),
              Tensor<double>::full({1, 8, 8}, 1.0, true)};
  // 0.1 * (1 * 16 + 2 * 64)
  const auto pen = pyramid_l2_penalty(p, 0.1);
  EXPECT_NEAR(pen.item(), 14.4, 1e-12);
  backward(pen);
  EXPECT_TRUE(!p.levels[0].has_grad() || p.levels[0].grad()[0] == 0.0);
  EXPECT_NEAR(p.levels[1].grad()[0], 0.2, 1e-15);
  EXPECT_NEAR(p.levels[2].grad()[0], 0.4, 1e-15);
}
