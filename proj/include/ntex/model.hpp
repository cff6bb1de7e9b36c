#pragma once

// A trainable deferred neural renderer: one texture pyramid per texture id
// plus the rendering network, and the forward pass
// G-buffer -> sampled features -> SH modulation -> network.

#include <map>
#include <vector>

#include "ntex/config.hpp"
#include "ntex/neural_texture.hpp"
#include "ntex/renderer_net.hpp"

namespace ntex {

struct ModelConfig {
  NetworkConfig network = NetworkConfig::desk();
  std::size_t texture_resolution = 32;  // finest level
  std::size_t texture_levels = 2;
  bool use_sh = true;

  std::size_t texture_channels() const { return network.input_channels; }

  void validate() const {
    network.validate();
    if (use_sh && texture_channels() < kShFirstChannel + kShBasisCount) {
      throw ConfigError("spherical-harmonics modulation needs at least 12 texture channels");
    }
    if (texture_channels() < kMeanColorChannels) throw ConfigError("texture needs at least 3 channels");
  }

  void write(KeyValues& kv) const {
    kv.set("channels", network.input_channels);
    kv.set("net_features", join_list(network.encoder_features));
    kv.set("kernel", network.kernel);
    kv.set("stride", network.stride);
    kv.set("leaky_slope", network.leaky_slope);
    kv.set("per_pixel", network.per_pixel);
    kv.set("texture_resolution", texture_resolution);
    kv.set("texture_levels", texture_levels);
    kv.set("use_sh", use_sh);
  }

  static ModelConfig read(const KeyValues& kv) {
    ModelConfig c;
    c.network.input_channels = static_cast<std::size_t>(kv.get_int("channels", 16));
    std::vector<std::size_t> features;
    for (double f : kv.get_list("net_features", {32, 64, 128})) features.push_back(static_cast<std::size_t>(f));
    c.network.encoder_features = features;
    c.network.kernel = static_cast<std::size_t>(kv.get_int("kernel", 4));
    c.network.stride = static_cast<std::size_t>(kv.get_int("stride", 2));
    c.network.leaky_slope = kv.get_double("leaky_slope", 0.2);
    c.network.per_pixel = kv.get_bool("per_pixel", false);
    c.texture_resolution = static_cast<std::size_t>(kv.get_int("texture_resolution", 32));
    c.texture_levels = static_cast<std::size_t>(kv.get_int("texture_levels", 2));
    c.use_sh = kv.get_bool("use_sh", true);
    c.validate();
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Maps G-buffer object ids (instance index + 1) to texture ids.
using ObjectTextures = std::vector<int>;

inline ObjectTextures object_textures(const Scene& scene) {
  ObjectTextures map{-1};
  for (const auto& inst : scene.instances) map.push_back(inst.texture_id);
  return map;
}

/// Single object with texture 0, the layout of every synthetic dataset.
inline ObjectTextures single_object_textures() { return {-1, 0}; }

template <typename T>
struct ForwardResult {
  Tensor<T> features;  // sampled, before SH modulation
  Tensor<T> image;     // network output in [-1,1]
};

template <typename T>
struct Model {
  ModelConfig config;
  std::map<int, NeuralTexturePyramid<T>> textures;
  RendererParams<T> network;

  static Model create(const ModelConfig& config, const std::vector<int>& texture_ids, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    for (int id : texture_ids) {
      m.textures[id] = NeuralTexturePyramid<T>::make(config.texture_channels(), config.texture_resolution,
                                                     config.texture_levels, seed + 1000003ULL * (id + 1));
    }
    m.network = init_params<T>(config.network, seed);
    return m;
  }

  /// Texture levels (ascending id, coarse to fine) followed by network weights.
  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (const auto& [id, pyr] : textures) out.insert(out.end(), pyr.levels.begin(), pyr.levels.end());
    for (const auto& [name, t] : network.named) out.push_back(t);
    return out;
  }

  void zero_grad() {
    for (auto& t : parameters()) t.zero_grad();
  }

  /// Deep copy with fresh parameter tensors.
  Model clone() const {
    Model m;
    m.config = config;
    for (const auto& [id, pyr] : textures) {
      NeuralTexturePyramid<T> copy;
      for (const auto& l : pyr.levels) copy.levels.push_back(l.detach_copy(true));
      m.textures[id] = std::move(copy);
    }
    m.network.config = network.config;
    for (const auto& [name, t] : network.named) m.network.named.emplace_back(name, t.detach_copy(true));
    return m;
  }
};

/// Sum of every texture's samples over the pixels of the objects bound to it.
template <typename T>
Tensor<T> sample_features(const Model<T>& model, const GBuffer& gbuffer, const ObjectTextures& objects) {
  std::map<int, std::vector<std::uint16_t>> ids_per_texture;
  for (std::size_t obj = 1; obj < objects.size(); ++obj) {
    const int tex = objects[obj];
    if (!model.textures.count(tex)) {
      throw ConfigError("object " + std::to_string(obj) + " references unknown texture id " + std::to_string(tex));
    }
    ids_per_texture[tex].push_back(static_cast<std::uint16_t>(obj));
  }
  for (std::size_t i = 0; i < gbuffer.pixel_count(); ++i) {
    if (gbuffer.object_id[i] >= objects.size()) {
      throw ConfigError("G-buffer object id " + std::to_string(gbuffer.object_id[i]) + " has no texture binding");
    }
  }
  Tensor<T> features;
  for (const auto& [tex, ids] : ids_per_texture) {
    auto sampled = sample_pyramid(model.textures.at(tex), gbuffer, std::span<const std::uint16_t>(ids));
    features = features.defined() ? add(features, sampled) : sampled;
  }
  if (!features.defined()) {
    features = Tensor<T>::zeros(Shape{model.config.texture_channels(), static_cast<std::size_t>(gbuffer.height),
                                      static_cast<std::size_t>(gbuffer.width)});
  }
  return features;
}

template <typename T>
ForwardResult<T> forward(const Model<T>& model, const GBuffer& gbuffer,
                         const ObjectTextures& objects = single_object_textures()) {
  ForwardResult<T> r;
  r.features = sample_features(model, gbuffer, objects);
  const Tensor<T> input = model.config.use_sh ? modulate_sh(r.features, gbuffer) : r.features;
  r.image = render_network(model.network, input);
  return r;
}

}  // namespace ntex
