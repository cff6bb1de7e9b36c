#pragma once

// Deferred neural renderer: an encoder-decoder with skip concatenations, and a
// per-pixel variant built from 1x1 convolutions.

#include <map>
#include <random>
#include <string>
#include <vector>

#include "ntex/conv.hpp"
#include "ntex/norm.hpp"
#include "ntex/tensor.hpp"

namespace ntex {

struct NetworkConfig {
  std::size_t input_channels = 16;
  std::size_t output_channels = 3;
  std::vector<std::size_t> encoder_features{64, 128, 256, 512, 512};
  std::size_t kernel = 4;
  std::size_t stride = 2;
  double leaky_slope = 0.2;
  bool per_pixel = false;

  /// CPU-sized network: depth 3, base 32.
  static NetworkConfig desk() {
    NetworkConfig c;
    c.encoder_features = {32, 64, 128};
    return c;
  }

  std::size_t depth() const { return encoder_features.size(); }
  std::size_t padding() const { return (kernel - stride) / 2; }

  void validate() const {
    if (encoder_features.empty()) throw ConfigError("network needs at least one encoder level");
    if (kernel < stride) throw ConfigError("kernel must be >= stride");
    if (stride == 0) throw ConfigError("stride must be positive");
    if ((kernel - stride) % 2 != 0) throw ConfigError("kernel - stride must be even for symmetric padding");
    if (input_channels == 0 || output_channels == 0) throw ConfigError("channel counts must be positive");
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Named weights of every layer, in creation order.
template <typename T>
struct RendererParams {
  NetworkConfig config;
  std::vector<std::pair<std::string, Tensor<T>>> named;

  const Tensor<T>& get(const std::string& name) const {
    for (const auto& [n, t] : named) {
      if (n == name) return t;
    }
    throw ConfigError("renderer has no parameter '" + name + "'");
  }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& [n, t] : named) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& [n, t] : named) total += t.numel();
    return total;
  }
};

namespace detail {

struct LayerSpec {
  std::string name;
  std::size_t in, out;
  bool transposed;
  bool normalized;
};

inline std::vector<LayerSpec> layer_specs(const NetworkConfig& c) {
  std::vector<LayerSpec> layers;
  const auto& f = c.encoder_features;
  const std::size_t depth = f.size();
  for (std::size_t i = 0; i < depth; ++i) {
    layers.push_back({"enc" + std::to_string(i), i == 0 ? c.input_channels : f[i - 1], f[i], false, !c.per_pixel});
  }
  // Decoder layer j restores the resolution of encoder level j. Its input is
  // the previous decoder output concatenated with the matching skip (U-Net),
  // or just the previous output (per-pixel).
  for (std::size_t j = depth - 1; j-- > 0;) {
    std::size_t in = f[j + 1];
    if (!c.per_pixel && j + 1 != depth - 1) in *= 2;
    layers.push_back({"dec" + std::to_string(j), in, f[j], !c.per_pixel, !c.per_pixel});
  }
  const std::size_t last_in = (!c.per_pixel && depth > 1) ? 2 * f[0] : f[0];
  layers.push_back({"out", last_in, c.output_channels, !c.per_pixel, false});
  return layers;
}

}  // namespace detail

/// Weights ~ N(0, 0.02), biases 0, instance-norm gamma 1 and beta 0.
template <typename T>
RendererParams<T> init_params(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  RendererParams<T> params;
  params.config = config;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  const std::size_t k = config.per_pixel ? 1 : config.kernel;
  for (const auto& layer : detail::layer_specs(config)) {
    // conv2d weights are out x in x k x k; transposed ones in x out x k x k.
    Shape wshape = layer.transposed ? Shape{layer.in, layer.out, k, k} : Shape{layer.out, layer.in, k, k};
    Buffer<T> w(shape_numel(wshape));
    for (auto& v : w) v = static_cast<T>(normal(rng));
    params.named.emplace_back(layer.name + ".weight", Tensor<T>::from(wshape, std::move(w), true));
    params.named.emplace_back(layer.name + ".bias", Tensor<T>::zeros(Shape{layer.out}, true));
    if (layer.normalized) {
      params.named.emplace_back(layer.name + ".norm.gamma", Tensor<T>::full(Shape{layer.out}, T(1), true));
      params.named.emplace_back(layer.name + ".norm.beta", Tensor<T>::zeros(Shape{layer.out}, true));
    }
  }
  return params;
}

namespace detail {

template <typename T>
Tensor<T> norm_act(const RendererParams<T>& p, const std::string& name, Tensor<T> x, bool normalized) {
  if (normalized) x = instance_norm(x, p.get(name + ".norm.gamma"), p.get(name + ".norm.beta"));
  return leaky_relu(x, static_cast<T>(p.config.leaky_slope));
}

}  // namespace detail

/// Encoder: depth x (conv k/s -> instance norm -> leaky ReLU). Decoder mirrors
/// it with transposed convolutions and skip concatenation; the output layer is
/// a transposed convolution followed by tanh.
template <typename T>
Tensor<T> unet_forward(const RendererParams<T>& params, const Tensor<T>& features) {
  const auto& c = params.config;
  detail::require_rank(features, 3, "unet_forward", "features");
  if (features.dim(0) != c.input_channels) {
    throw DimensionError("unet_forward: axis 0 has " + std::to_string(features.dim(0)) +
                         " channels, network expects " + std::to_string(c.input_channels));
  }
  const std::size_t factor = std::size_t{1} << c.depth();
  if (features.dim(1) % factor != 0 || features.dim(2) % factor != 0) {
    throw ConfigError("unet_forward: image size " + std::to_string(features.dim(1)) + "x" +
                      std::to_string(features.dim(2)) + " must be divisible by 2^depth = " +
                      std::to_string(factor));
  }
  const std::size_t s = c.stride, pad = c.padding();
  std::vector<Tensor<T>> skips;
  Tensor<T> x = features;
  for (std::size_t i = 0; i < c.depth(); ++i) {
    const std::string name = "enc" + std::to_string(i);
    x = conv2d(x, params.get(name + ".weight"), params.get(name + ".bias"), s, pad);
    x = detail::norm_act(params, name, x, true);
    skips.push_back(x);
  }
  for (std::size_t j = c.depth() - 1; j-- > 0;) {
    const std::string name = "dec" + std::to_string(j);
    x = conv_transpose2d(x, params.get(name + ".weight"), params.get(name + ".bias"), s, pad);
    x = detail::norm_act(params, name, x, true);
    x = concat_channels(x, skips[j]);
  }
  x = conv_transpose2d(x, params.get("out.weight"), params.get("out.bias"), s, pad);
  return tanh(x);
}

/// Same layer sequence with 1x1 stride-1 convolutions, no skips and no
/// instance normalization, so every pixel is processed independently.
template <typename T>
Tensor<T> pixelnet_forward(const RendererParams<T>& params, const Tensor<T>& features) {
  const auto& c = params.config;
  detail::require_rank(features, 3, "pixelnet_forward", "features");
  if (features.dim(0) != c.input_channels) {
    throw DimensionError("pixelnet_forward: axis 0 has " + std::to_string(features.dim(0)) +
                         " channels, network expects " + std::to_string(c.input_channels));
  }
  Tensor<T> x = features;
  for (const auto& layer : detail::layer_specs(c)) {
    x = conv2d(x, params.get(layer.name + ".weight"), params.get(layer.name + ".bias"), 1, 0);
    x = layer.name == "out" ? tanh(x) : leaky_relu(x, static_cast<T>(c.leaky_slope));
  }
  return x;
}

template <typename T>
Tensor<T> render_network(const RendererParams<T>& params, const Tensor<T>& features) {
  return params.config.per_pixel ? pixelnet_forward(params, features) : unet_forward(params, features);
}

}  // namespace ntex
