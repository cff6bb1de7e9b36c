#pragma once

// The finite-difference suite over every differentiable operation, on small
// random 64-bit instances.

#include <random>
#include <string>
#include <vector>

#include "ntex/conv.hpp"
#include "ntex/gradcheck.hpp"
#include "ntex/norm.hpp"
#include "ntex/training.hpp"

namespace ntex {

struct GradCheckResult {
  std::string op;
  double max_relative_error = 0.0;
};

inline constexpr double kGradCheckTolerance = 1e-4;

namespace detail {

inline Tensor<double> random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Buffer<double> data(shape_numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor<double>::from(std::move(shape), std::move(data));
}

// Random coverage by object 1 with random uv, view direction and depth.
inline GBuffer random_gbuffer(std::mt19937_64& rng, int width, int height, double coverage = 0.8) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  GBuffer g = GBuffer::empty(width, height);
  for (std::size_t i = 0; i < g.pixel_count(); ++i) {
    if (unit(rng) > coverage) continue;
    g.object_id[i] = 1;
    g.uv[2 * i] = static_cast<float>(unit(rng));
    g.uv[2 * i + 1] = static_cast<float>(unit(rng));
    Vec3 d(unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) + 0.2);
    d.normalize();
    for (int k = 0; k < 3; ++k) g.view_dir[3 * i + k] = static_cast<float>(d[k]);
    g.depth[i] = static_cast<float>(1.0 + unit(rng));
  }
  return g;
}

}  // namespace detail

inline std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed = 2024, double eps = 1e-6) {
  using T = double;
  std::mt19937_64 rng(seed);
  std::vector<GradCheckResult> out;
  auto check = [&](const std::string& name, const TensorFunction<T>& f, const std::vector<Tensor<T>>& inputs) {
    out.push_back({name, finite_difference_check<T>(f, inputs, eps)});
  };

  check("conv2d",
        [](const auto& a) { return conv2d(a[0], a[1], a[2], 2, 1); },
        {detail::random_tensor(rng, {2, 6, 6}), detail::random_tensor(rng, {3, 2, 4, 4}),
         detail::random_tensor(rng, {3})});
  check("conv_transpose2d",
        [](const auto& a) { return conv_transpose2d(a[0], a[1], a[2], 2, 1); },
        {detail::random_tensor(rng, {3, 3, 3}), detail::random_tensor(rng, {3, 2, 4, 4}),
         detail::random_tensor(rng, {2})});
  check("instance_norm",
        [](const auto& a) { return instance_norm(a[0], a[1], a[2]); },
        {detail::random_tensor(rng, {3, 4, 4}), detail::random_tensor(rng, {3}), detail::random_tensor(rng, {3})});
  check("leaky_relu",
        [](const auto& a) { return leaky_relu(a[0], 0.2); },
        {detail::random_tensor(rng, {2, 3, 3})});
  check("tanh",
        [](const auto& a) { return tanh(a[0]); },
        {detail::random_tensor(rng, {2, 3, 3}, -2.0, 2.0)});
  check("sample_bilinear",
        [](const auto& a) { return sample_bilinear(a[0], a[1]); },
        {detail::random_tensor(rng, {3, 4, 4}), detail::random_tensor(rng, {6, 2}, 0.05, 0.95)});

  const GBuffer gbuf = detail::random_gbuffer(rng, 8, 8);
  const Tensor<T> level0 = detail::random_tensor(rng, {16, 2, 2});
  const Tensor<T> level1 = detail::random_tensor(rng, {16, 4, 4});
  check("sample_pyramid",
        [&gbuf](const auto& a) {
          NeuralTexturePyramid<T> p{{a[0], a[1]}};
          return sample_pyramid(p, gbuf);
        },
        {level0, level1});
  check("modulate_sh",
        [&gbuf](const auto& a) { return modulate_sh(a[0], gbuf); },
        {detail::random_tensor(rng, {16, 8, 8})});
  const Tensor<T> gt = detail::random_tensor(rng, {3, 8, 8});
  check("l1_crop_loss",
        [&gt](const auto& a) { return l1_crop_loss(a[0], gt, Crop{1, 2, 5, 4}); },
        {detail::random_tensor(rng, {3, 8, 8})});

  // End to end: textures and every network weight of a small U-Net.
  ModelConfig mc;
  mc.network.encoder_features = {4, 8};
  mc.texture_resolution = 4;
  mc.texture_levels = 2;
  Model<T> model = Model<T>::create(mc, {0}, seed);
  // Larger weights than the default init so the signal through the net is not tiny.
  for (auto& [name, t] : model.network.named) {
    if (name.find(".weight") == std::string::npos) continue;
    auto r = detail::random_tensor(rng, t.shape(), -0.5, 0.5);
    std::copy(r.data().begin(), r.data().end(), t.data().begin());
  }
  TrainConfig tc;
  tc.lambda_reg = 1e-2;
  const auto params = model.parameters();
  check("total_loss",
        [&](const auto& a) {
          Model<T> m;
          m.config = model.config;
          m.textures[0].levels = {a[0], a[1]};
          m.network.config = model.network.config;
          for (std::size_t k = 0; k < model.network.named.size(); ++k) {
            m.network.named.emplace_back(model.network.named[k].first, a[2 + k]);
          }
          return total_loss(m, gbuf, gt, tc, Crop{0, 0, 8, 8}).total;
        },
        params);
  return out;
}

}  // namespace ntex
