#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "ntex/gradcheck_suite.hpp"
#include "ntex/synthetic.hpp"
#include "ntex/training.hpp"

using namespace ntex;

namespace {

Dataset tiny_dataset(int n_train = 4) {
  SyntheticSceneConfig c;
  c.width = c.height = 32;
  c.tessellation = 16;
  c.n_train = n_train;
  c.n_test = 2;
  return make_dataset(c);
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.network.encoder_features = {8, 16};
  m.texture_resolution = 16;
  m.texture_levels = 2;
  return m;
}

std::string bytes_of(const Checkpoint<float>& ck) {
  std::ostringstream out;
  save_checkpoint(ck, out);
  return out.str();
}

}  // namespace

TEST(L1CropLoss, Examples) {
  std::mt19937_64 rng(1);
  const auto a = detail::random_tensor(rng, {3, 4, 5});
  EXPECT_EQ(l1_crop_loss(a, a, Crop{0, 0, 5, 4}).item(), 0.0);
  const auto shifted = add(a, Tensor<double>::full({3, 4, 5}, 0.5));
  EXPECT_NEAR(l1_crop_loss(shifted, a, Crop{0, 0, 5, 4}).item(), 0.5, 1e-15);
}

TEST(L1CropLoss, HandComputedCrop) {
  // One channel, 2x2 crop at (1,0) of a 3x2 image: |1-0| + |2-4| + |-1-(-1)| + |0.5-3| = 5.5.
  const auto pred = Tensor<double>::from({1, 2, 3}, {9, 1, 2, 9, -1, 0.5});
  const auto gt = Tensor<double>::from({1, 2, 3}, {0, 0, 4, 0, -1, 3});
  EXPECT_DOUBLE_EQ(l1_crop_loss(pred, gt, Crop{1, 0, 2, 2}).item(), 5.5 / 4);
}

TEST(L1CropLoss, MaskRestrictsPixels) {
  const auto pred = Tensor<double>::from({1, 1, 3}, {1, 2, 3});
  const auto gt = Tensor<double>::zeros({1, 1, 3});
  GBuffer g = GBuffer::empty(3, 1);
  g.object_id = {0, 1, 1};
  EXPECT_DOUBLE_EQ(l1_crop_loss(pred, gt, Crop{0, 0, 3, 1}, &g).item(), 2.5);
  EXPECT_DOUBLE_EQ(l1_crop_loss(pred, gt, Crop{0, 0, 1, 1}, &g).item(), 0.0);
}

TEST(L1CropLoss, OutOfBoundsCropIsDomainError) {
  const auto a = Tensor<double>::zeros({3, 4, 4});
  EXPECT_THROW(l1_crop_loss(a, a, Crop{1, 0, 4, 4}), DomainError);
  EXPECT_THROW(l1_crop_loss(a, a, Crop{0, 0, 0, 2}), DomainError);
}

TEST(SampleCrop, AlwaysInBounds) {
  std::mt19937_64 rng(2);
  TrainConfig c;
  for (int i = 0; i < 5000; ++i) {
    const std::size_t w = 1 + i % 70, h = 1 + (i * 7) % 50;
    const Crop crop = sample_crop(rng, w, h, c);
    ASSERT_GE(crop.width, 1u);
    ASSERT_GE(crop.height, 1u);
    ASSERT_LE(crop.x + crop.width, w);
    ASSERT_LE(crop.y + crop.height, h);
  }
  c.crop_min = c.crop_max = 1.0;
  EXPECT_EQ(sample_crop(rng, 64, 32, c), (Crop{0, 0, 64, 32}));
}

TEST(TotalLoss, DegenerateWeightsGivePlainL1) {
  const auto d = tiny_dataset(1);
  const auto model = Model<double>::create(tiny_model(), {0}, 3);
  TrainConfig tc;
  tc.lambda_reg = 0;
  tc.intermediate_weight = 0;
  const Crop crop{4, 6, 20, 16};
  const auto terms = total_loss(model, d.train[0], tc, crop);
  const auto image = forward(model, d.train[0].gbuffer).image;
  EXPECT_EQ(terms.total.item(), l1_crop_loss(image, image_to_tensor<double>(d.train[0].image), crop).item());
}

TEST(TotalLoss, ZeroModelAndZeroTargetGiveZero) {
  auto model = Model<double>::create(tiny_model(), {0}, 3);
  for (auto& t : model.parameters()) std::fill(t.data().begin(), t.data().end(), 0.0);
  std::mt19937_64 rng(4);
  const auto g = detail::random_gbuffer(rng, 16, 16);
  EXPECT_EQ(total_loss(model, g, Tensor<double>::zeros({3, 16, 16}), TrainConfig{}, Crop{0, 0, 16, 16}).total.item(),
            0.0);
}

TEST(TotalLoss, IsSumOfComponents) {
  const auto d = tiny_dataset(1);
  const auto model = Model<double>::create(tiny_model(), {0}, 5);
  TrainConfig tc;
  tc.lambda_reg = 0.3;
  tc.intermediate_weight = 0.7;
  const Crop crop{2, 3, 25, 21};
  const auto gt = image_to_tensor<double>(d.train[0].image);
  const auto terms = total_loss(model, d.train[0].gbuffer, gt, tc, crop);
  const auto fwd = forward(model, d.train[0].gbuffer);
  const double l1 = l1_crop_loss(fwd.image, gt, crop).item();
  const double inter = l1_crop_loss(slice_channels(fwd.features, 0, 3), gt, crop, &d.train[0].gbuffer).item();
  const double reg = pyramid_l2_penalty(model.textures.at(0), 0.3).item();
  EXPECT_GT(reg, 0.0);
  EXPECT_NEAR(terms.total.item(), l1 + 0.7 * inter + reg, 1e-14);
}

TEST(TotalLoss, SampledGradientsMatchFiniteDifferences) {
  const auto d = tiny_dataset(1);
  auto model = Model<double>::create(tiny_model(), {0}, 6);
  // Push the texture off its tiny init so the net sees real signal.
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(-1, 1);
  for (auto& l : model.textures.at(0).levels) {
    for (auto& v : l.data()) v = dist(rng);
  }
  TrainConfig tc;
  tc.lambda_reg = 1e-2;
  const Crop crop{0, 0, 32, 32};
  const auto gt = image_to_tensor<double>(d.train[0].image);
  model.zero_grad();
  backward(total_loss(model, d.train[0].gbuffer, gt, tc, crop).total);

  const auto textures = model.textures.at(0).levels;
  const auto net = model.network.tensors();
  auto pick = [&](const std::vector<Tensor<double>>& pool, std::size_t count) {
    std::vector<std::pair<Tensor<double>, std::size_t>> out;
    while (out.size() < count) {
      const auto& t = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
      const std::size_t i = std::uniform_int_distribution<std::size_t>(0, t.numel() - 1)(rng);
      // Tiny gradients drown in finite-difference round-off.
      if (t.has_grad() && std::abs(t.grad()[i]) > 1e-5) out.emplace_back(t, i);
    }
    return out;
  };
  auto entries = pick(textures, 50);
  const auto weights = pick(net, 50);
  entries.insert(entries.end(), weights.begin(), weights.end());

  const double eps = 1e-6;
  double worst = 0.0;
  for (auto& [t, i] : entries) {
    const double analytic = t.grad()[i];
    const double orig = t.data()[i];
    auto data = const_cast<Tensor<double>&>(t).data();
    data[i] = orig + eps;
    const double up = total_loss(model, d.train[0].gbuffer, gt, tc, crop).total.item();
    data[i] = orig - eps;
    const double down = total_loss(model, d.train[0].gbuffer, gt, tc, crop).total.item();
    data[i] = orig;
    const double numeric = (up - down) / (2 * eps);
    worst = std::max(worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6}));
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto p = Tensor<double>::from({2}, {5.0, -2.0}, true);
  p.mutable_grad()[0] = 1.0;
  p.mutable_grad()[1] = -3.0;
  AdamState<double> state;
  std::vector<Tensor<double>> params{p};
  adam_step(std::span<Tensor<double>>(params), state, TrainConfig{});
  EXPECT_EQ(state.t, 1);
  EXPECT_NEAR(p.data()[0], 5.0 - 0.001, 1e-10);
  EXPECT_NEAR(p.data()[1], -2.0 + 0.001, 1e-10);
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  auto p = Tensor<double>::from({3}, {1.0, -1.0, 0.25}, true);
  std::vector<Tensor<double>> params{p};
  AdamState<double> state;
  for (int i = 0; i < 100; ++i) {
    p.zero_grad();
    (void)p.mutable_grad();
    adam_step(std::span<Tensor<double>>(params), state, TrainConfig{});
  }
  EXPECT_EQ(p.data()[0], 1.0);
  EXPECT_EQ(p.data()[1], -1.0);
  EXPECT_EQ(p.data()[2], 0.25);
}

TEST(Adam, MinimizesQuadratic) {
  auto x = Tensor<double>::from({1}, {0.0}, true);
  std::vector<Tensor<double>> params{x};
  AdamState<double> state;
  TrainConfig c;
  c.learning_rate = 0.01;
  for (int i = 0; i < 2000; ++i) {
    x.zero_grad();
    const auto d = add(x, Tensor<double>::from({1}, {-3.0}));
    backward(sum(mul(d, d)));
    adam_step(std::span<Tensor<double>>(params), state, c);
  }
  EXPECT_LT(std::abs(x.data()[0] - 3.0), 0.01);
  for (double v : state.v[0]) EXPECT_GE(v, 0.0);
}

TEST(Adam, FirstStepSignIsScaleInvariant) {
  std::mt19937_64 rng(8);
  const auto g = detail::random_tensor(rng, {50});
  for (double scale : {1e-3, 1.0, 7.0, 1e4}) {
    auto p = Tensor<double>::zeros({50}, true);
    for (std::size_t i = 0; i < 50; ++i) p.mutable_grad()[i] = scale * g.data()[i];
    std::vector<Tensor<double>> params{p};
    AdamState<double> state;
    adam_step(std::span<Tensor<double>>(params), state, TrainConfig{});
    for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(std::signbit(p.data()[i]), !std::signbit(g.data()[i]));
  }
}

TEST(Adam, StateMismatchIsContractError) {
  std::vector<Tensor<double>> one{Tensor<double>::zeros({2}, true)};
  std::vector<Tensor<double>> two{Tensor<double>::zeros({2}, true), Tensor<double>::zeros({3}, true)};
  AdamState<double> state;
  adam_step(std::span<Tensor<double>>(one), state, TrainConfig{});
  EXPECT_THROW(adam_step(std::span<Tensor<double>>(two), state, TrainConfig{}), ContractError);
  std::vector<Tensor<double>> other{Tensor<double>::zeros({4}, true)};
  EXPECT_THROW(adam_step(std::span<Tensor<double>>(other), state, TrainConfig{}), ContractError);
}

TEST(Train, ZeroStepsKeepsInitialTensors) {
  const auto d = tiny_dataset(2);
  auto model = Model<float>::create(tiny_model(), {0}, 9);
  const auto before = model.clone();
  TrainConfig tc;
  tc.steps = 0;
  EXPECT_TRUE(train(d.train, model, tc).empty());
  const auto a = model.parameters(), b = before.parameters();
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_TRUE(std::equal(a[k].data().begin(), a[k].data().end(), b[k].data().begin()));
  }
}

TEST(Train, EmptyDatasetIsConfigError) {
  auto model = Model<float>::create(tiny_model(), {0}, 9);
  EXPECT_THROW(train({}, model, TrainConfig{}), ConfigError);
}

TEST(Train, SameSeedSameCurveAndLossDrops) {
  const auto d = tiny_dataset(3);
  TrainConfig tc;
  tc.steps = 150;
  tc.seed = 4;
  tc.learning_rate = 3e-3;
  auto m1 = Model<float>::create(tiny_model(), {0}, 10);
  auto m2 = Model<float>::create(tiny_model(), {0}, 10);
  const auto c1 = train(d.train, m1, tc);
  const auto c2 = train(d.train, m2, tc);
  ASSERT_EQ(c1.size(), 150u);
  EXPECT_EQ(c1, c2);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    first += c1[i].l1;
    last += c1[c1.size() - 1 - i].l1;
  }
  EXPECT_LT(last, 0.7 * first);
  tc.seed = 5;
  auto m3 = Model<float>::create(tiny_model(), {0}, 10);
  EXPECT_NE(train(d.train, m3, tc), c1);
}

TEST(Train, LossCsvHasHeaderAndRows) {
  std::ostringstream out;
  write_loss_csv({{0, 1.5, 1.0, 0.5, 0.0}, {1, 1.25, 0.75, 0.5, 0.0}}, out);
  const std::string s = out.str();
  EXPECT_EQ(s.rfind("# ntex loss curve v1\nstep,total,l1,intermediate,reg\n", 0), 0u);
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 4);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    ck.model = Model<float>::create(tiny_model(), {0, 3}, 11);
    std::mt19937_64 rng(12);
    std::normal_distribution<float> n;
    for (auto& t : ck.model.parameters()) {
      for (auto& v : t.data()) v = n(rng);
    }
    ck.train_config.seed = 99;
    ck.train_config.learning_rate = 0.0025;
    ck.step = 1234;
  }
  Checkpoint<float> ck;
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  const std::string bytes = bytes_of(ck);
  std::istringstream in(bytes);
  const auto loaded = load_checkpoint<float>(in);
  EXPECT_EQ(loaded.step, 1234u);
  EXPECT_EQ(loaded.train_config, ck.train_config);
  EXPECT_EQ(loaded.model.config, ck.model.config);
  EXPECT_EQ(bytes_of(loaded), bytes);
}

TEST_F(CheckpointTest, RenderAfterLoadMatchesBeforeSave) {
  const auto d = tiny_dataset(1);
  std::istringstream in(bytes_of(ck));
  const auto loaded = load_checkpoint<float>(in);
  const ObjectTextures objects{-1, 3};
  const auto a = tensor_to_image(forward(ck.model, d.test[0].gbuffer, objects).image);
  const auto b = tensor_to_image(forward(loaded.model, d.test[0].gbuffer, objects).image);
  EXPECT_EQ(a, b);
}

TEST_F(CheckpointTest, CorruptionIsFormatError) {
  const std::string bytes = bytes_of(ck);
  auto load = [](std::string b) {
    std::istringstream in(b);
    return load_checkpoint<float>(in);
  };
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(load(bad), FormatError);
  bad = bytes;
  bad[4] = 7;
  EXPECT_THROW(load(bad), FormatError);
  // The config block length field follows magic and version.
  bad = bytes;
  bad[8] = static_cast<char>(0xff);
  bad[9] = static_cast<char>(0xff);
  EXPECT_THROW(load(bad), FormatError);
  EXPECT_THROW(load(bytes.substr(0, bytes.size() - 5)), FormatError);
  EXPECT_THROW(load(bytes.substr(0, 20)), FormatError);
  EXPECT_THROW(load(bytes + "x"), FormatError);
}

TEST_F(CheckpointTest, FileRoundTripAndMissingFile) {
  const auto dir = std::filesystem::temp_directory_path() / "ntex_test_checkpoint";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.ntck";
  save_checkpoint_file(ck, path);
  EXPECT_FALSE(std::filesystem::exists(dir / "model.ntck.tmp"));
  EXPECT_EQ(bytes_of(load_checkpoint_file<float>(path)), bytes_of(ck));
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_checkpoint_file<float>(path), IoError);
}
