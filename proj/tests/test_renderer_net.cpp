#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <numeric>
#include <random>

#include "ntex/gradcheck.hpp"
#include "ntex/gradcheck_suite.hpp"
#include "ntex/renderer_net.hpp"

using namespace ntex;

namespace {

NetworkConfig small_config(std::vector<std::size_t> features, bool per_pixel = false) {
  NetworkConfig c;
  c.encoder_features = std::move(features);
  c.per_pixel = per_pixel;
  return c;
}

// Replaces every weight with U(-range, range) so activations are not tiny.
template <typename T>
void randomize_weights(RendererParams<T>& p, std::uint64_t seed, double range) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-range, range);
  for (auto& [name, t] : p.named) {
    if (name.find(".weight") == std::string::npos) continue;
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  }
}

RendererParams<double> with_tensors(const RendererParams<double>& p, const std::vector<Tensor<double>>& ts) {
  RendererParams<double> out;
  out.config = p.config;
  for (std::size_t k = 0; k < p.named.size(); ++k) out.named.emplace_back(p.named[k].first, ts[k]);
  return out;
}

}  // namespace

TEST(InitParams, FullConfigHasAboutSixteenMillionParameters) {
  const auto p = init_params<float>(NetworkConfig{}, 0);
  const double count = static_cast<double>(p.parameter_count());
  EXPECT_NEAR(count / 16e6, 1.0, 0.1) << count;
}

TEST(InitParams, ParameterCountIsSumOfLayerShapes) {
  // enc 16->64->128->256->512->512; dec 512->512, 1024->256, 512->128, 256->64; out 128->3.
  const std::size_t k2 = 16;
  std::size_t expected = 0;
  const std::size_t conv[][2] = {{16, 64}, {64, 128}, {128, 256}, {256, 512}, {512, 512},
                                 {512, 512}, {1024, 256}, {512, 128}, {256, 64}};
  for (const auto& [in, out] : conv) expected += in * out * k2 + 3 * out;
  expected += 128 * 3 * k2 + 3;
  EXPECT_EQ(init_params<float>(NetworkConfig{}, 0).parameter_count(), expected);
}

TEST(InitParams, DeskShapes) {
  const auto p = init_params<float>(NetworkConfig::desk(), 1);
  EXPECT_EQ(p.get("enc0.weight").shape(), (Shape{32, 16, 4, 4}));
  EXPECT_EQ(p.get("enc2.weight").shape(), (Shape{128, 64, 4, 4}));
  EXPECT_EQ(p.get("dec1.weight").shape(), (Shape{128, 64, 4, 4}));
  EXPECT_EQ(p.get("dec0.weight").shape(), (Shape{128, 32, 4, 4}));
  EXPECT_EQ(p.get("out.weight").shape(), (Shape{64, 3, 4, 4}));
  EXPECT_EQ(p.get("dec0.norm.gamma").shape(), (Shape{32}));
  EXPECT_THROW(p.get("out.norm.gamma"), ConfigError);
}

TEST(InitParams, DeterministicWithExpectedStatistics) {
  const auto a = init_params<float>(NetworkConfig::desk(), 5), b = init_params<float>(NetworkConfig::desk(), 5);
  const auto c = init_params<float>(NetworkConfig::desk(), 6);
  ASSERT_EQ(a.named.size(), b.named.size());
  bool differs = false;
  for (std::size_t k = 0; k < a.named.size(); ++k) {
    const auto& x = a.named[k].second;
    const auto& y = b.named[k].second;
    EXPECT_EQ(std::memcmp(x.data().data(), y.data().data(), x.numel() * sizeof(float)), 0);
    differs |= !std::equal(x.data().begin(), x.data().end(), c.named[k].second.data().begin());
  }
  EXPECT_TRUE(differs);

  const auto& w = a.get("enc1.weight").data();
  double sum = 0, sq = 0;
  for (float v : w) {
    sum += v;
    sq += double(v) * v;
  }
  const double mean = sum / w.size();
  EXPECT_NEAR(mean, 0.0, 0.002);
  EXPECT_NEAR(std::sqrt(sq / w.size() - mean * mean), 0.02, 0.001);
  for (float v : a.get("enc1.bias").data()) EXPECT_EQ(v, 0.0f);
  for (float v : a.get("enc1.norm.gamma").data()) EXPECT_EQ(v, 1.0f);
  for (float v : a.get("enc1.norm.beta").data()) EXPECT_EQ(v, 0.0f);
}

TEST(InitParams, InvalidConfigs) {
  EXPECT_THROW(init_params<float>(small_config({}), 0), ConfigError);
  NetworkConfig c;
  c.kernel = 1;
  EXPECT_THROW(init_params<float>(c, 0), ConfigError);
}

TEST(UnetForward, ShapesAndRange) {
  auto p = init_params<float>(small_config({8, 16, 16, 32, 32}), 2);
  randomize_weights(p, 3, 1.0);
  std::mt19937_64 rng(4);
  auto in = detail::random_tensor(rng, {16, 64, 64}, -3, 3);
  Tensor<float> x = Tensor<float>::zeros({16, 64, 64});
  std::copy(in.data().begin(), in.data().end(), x.data().begin());
  const auto out = unet_forward(p, x);
  EXPECT_EQ(out.shape(), (Shape{3, 64, 64}));
  for (float v : out.data()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(UnetForward, NonRectangularInput) {
  const auto p = init_params<double>(NetworkConfig::desk(), 2);
  EXPECT_EQ(unet_forward(p, Tensor<double>::zeros({16, 16, 24})).shape(), (Shape{3, 16, 24}));
}

TEST(UnetForward, IndivisibleSizeIsConfigError) {
  const auto p = init_params<double>(NetworkConfig::desk(), 2);
  try {
    unet_forward(p, Tensor<double>::zeros({16, 12, 16}));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("divisible by 2^depth = 8"), std::string::npos);
  }
  EXPECT_THROW(unet_forward(p, Tensor<double>::zeros({15, 16, 16})), DimensionError);
}

TEST(UnetForward, ZeroParametersGiveZeroOutput) {
  for (bool per_pixel : {false, true}) {
    auto p = init_params<double>(NetworkConfig::desk(), 0);
    for (auto& [name, t] : p.named) std::fill(t.data().begin(), t.data().end(), 0.0);
    std::mt19937_64 rng(5);
    const auto out = render_network(p, detail::random_tensor(rng, {16, 16, 16}));
    for (double v : out.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(UnetForward, GradientsMatchFiniteDifferences) {
  auto p = init_params<double>(small_config({4, 6}), 7);
  randomize_weights(p, 8, 0.5);
  std::mt19937_64 rng(9);
  std::vector<Tensor<double>> inputs = {detail::random_tensor(rng, {16, 8, 8})};
  for (const auto& t : p.tensors()) inputs.push_back(t);
  TensorFunction<double> f = [&p](const auto& in) {
    return unet_forward(with_tensors(p, {in.begin() + 1, in.end()}), in[0]);
  };
  EXPECT_LT(finite_difference_check(f, inputs, 1e-6), 1e-4);
}

TEST(UnetForward, ShiftCovariantAwayFromBorders) {
  // Content sits in the middle of a zero field, so every layer's instance
  // statistics see the same multiset of values before and after the shift.
  constexpr std::size_t depth = 2, shift = 1 << depth, n = 64;
  auto p = init_params<double>(small_config({6, 8}), 10);
  randomize_weights(p, 11, 0.5);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> dist(-1, 1);
  auto a = Tensor<double>::zeros({16, n, n}), b = Tensor<double>::zeros({16, n, n});
  for (std::size_t c = 0; c < 16; ++c) {
    for (std::size_t y = 24; y < 36; ++y) {
      for (std::size_t x = 24; x < 36; ++x) {
        const double v = dist(rng);
        a.data()[(c * n + y) * n + x] = v;
        b.data()[(c * n + y + shift) * n + x + shift] = v;
      }
    }
  }
  const auto oa = unet_forward(p, a), ob = unet_forward(p, b);
  double max_diff = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 12; y < 48; ++y) {
      for (std::size_t x = 12; x < 48; ++x) {
        max_diff = std::max(max_diff, std::abs(oa.data()[(c * n + y) * n + x] -
                                               ob.data()[(c * n + y + shift) * n + x + shift]));
      }
    }
  }
  EXPECT_LT(max_diff, 1e-5);
}

TEST(PixelnetForward, CommutesWithPermutation) {
  auto p = init_params<double>(small_config({8, 8, 8}, true), 13);
  randomize_weights(p, 14, 0.5);
  std::mt19937_64 rng(15);
  const std::size_t h = 5, w = 7, hw = h * w;
  const auto x = detail::random_tensor(rng, {16, h, w});
  std::vector<std::size_t> perm(hw);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto xp = Tensor<double>::zeros({16, h, w});
  for (std::size_t c = 0; c < 16; ++c) {
    for (std::size_t i = 0; i < hw; ++i) xp.data()[c * hw + perm[i]] = x.data()[c * hw + i];
  }
  const auto out = pixelnet_forward(p, x), outp = pixelnet_forward(p, xp);
  EXPECT_EQ(out.shape(), (Shape{3, h, w}));
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < hw; ++i) EXPECT_EQ(outp.data()[c * hw + perm[i]], out.data()[c * hw + i]);
  }
}

TEST(PixelnetForward, SinglePixelMatchesEmbedded) {
  auto p = init_params<double>(small_config({8, 8}, true), 16);
  randomize_weights(p, 17, 0.5);
  std::mt19937_64 rng(18);
  const auto big = detail::random_tensor(rng, {16, 6, 6});
  const std::size_t at = 4 * 6 + 1;
  auto one = Tensor<double>::zeros({16, 1, 1});
  for (std::size_t c = 0; c < 16; ++c) one.data()[c] = big.data()[c * 36 + at];
  const auto ob = pixelnet_forward(p, big), oo = pixelnet_forward(p, one);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(oo.data()[c], ob.data()[c * 36 + at]);
}
