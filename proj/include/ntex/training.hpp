#pragma once

// Joint optimization of neural textures and the rendering network: l1 crop
// loss, mean-color intermediate loss, pyramid regularization, Adam, the
// training loop and checkpoint persistence.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "ntex/binary_io.hpp"
#include "ntex/image.hpp"
#include "ntex/model.hpp"

namespace ntex {

struct TrainingSample {
  GBuffer gbuffer;
  Image image;  // ground truth in [0,1]
  Camera camera;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t steps = 5000;
  double crop_min = 0.25;
  double crop_max = 1.0;
  double lambda_reg = 1e-4;
  double intermediate_weight = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in (0,1)");
    if (!(crop_min > 0.0 && crop_min <= crop_max && crop_max <= 1.0)) {
      throw ConfigError("crop fraction range must satisfy 0 < min <= max <= 1");
    }
    if (learning_rate < 0.0 || lambda_reg < 0.0 || intermediate_weight < 0.0 || epsilon < 0.0) {
      throw ConfigError("learning rate, weights and epsilon must be non-negative");
    }
  }

  void write(KeyValues& kv) const {
    kv.set("learning_rate", learning_rate);
    kv.set("beta1", beta1);
    kv.set("beta2", beta2);
    kv.set("epsilon", epsilon);
    kv.set("steps", steps);
    kv.set("crop_min", crop_min);
    kv.set("crop_max", crop_max);
    kv.set("lambda_reg", lambda_reg);
    kv.set("intermediate_weight", intermediate_weight);
    kv.set("train_seed", static_cast<long long>(seed));
  }

  static TrainConfig read(const KeyValues& kv) {
    TrainConfig c;
    c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
    c.beta1 = kv.get_double("beta1", c.beta1);
    c.beta2 = kv.get_double("beta2", c.beta2);
    c.epsilon = kv.get_double("epsilon", c.epsilon);
    c.steps = static_cast<std::size_t>(kv.get_int("steps", static_cast<long long>(c.steps)));
    c.crop_min = kv.get_double("crop_min", c.crop_min);
    c.crop_max = kv.get_double("crop_max", c.crop_max);
    c.lambda_reg = kv.get_double("lambda_reg", c.lambda_reg);
    c.intermediate_weight = kv.get_double("intermediate_weight", c.intermediate_weight);
    c.seed = static_cast<std::uint64_t>(kv.get_int("train_seed", 0));
    c.validate();
    return c;
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct Crop {
  std::size_t x = 0, y = 0, width = 0, height = 0;

  static Crop full(std::size_t width, std::size_t height) { return {0, 0, width, height}; }

  friend bool operator==(const Crop&, const Crop&) = default;
};

/// Uniform crop position; both sides scaled by one fraction drawn uniformly
/// from [crop_min, crop_max].
inline Crop sample_crop(std::mt19937_64& rng, std::size_t width, std::size_t height, const TrainConfig& config) {
  std::uniform_real_distribution<double> frac(config.crop_min, config.crop_max);
  const double f = frac(rng);
  Crop c;
  c.width = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(f * width)), 1, width);
  c.height = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(f * height)), 1, height);
  c.x = std::uniform_int_distribution<std::size_t>(0, width - c.width)(rng);
  c.y = std::uniform_int_distribution<std::size_t>(0, height - c.height)(rng);
  return c;
}

/// Mean |pred - gt| over the crop and all channels. With a mask, only pixels
/// whose mask is set count; an empty selection yields 0.
template <typename T>
Tensor<T> l1_crop_loss(const Tensor<T>& pred, const Tensor<T>& gt, const Crop& crop,
                       const GBuffer* mask = nullptr) {
  detail::require_same_shape(pred, gt, "l1_crop_loss");
  detail::require_rank(pred, 3, "l1_crop_loss", "prediction");
  const std::size_t channels = pred.dim(0), h = pred.dim(1), w = pred.dim(2);
  if (crop.width == 0 || crop.height == 0 || crop.x + crop.width > w || crop.y + crop.height > h) {
    throw DomainError("l1_crop_loss: crop (" + std::to_string(crop.x) + "," + std::to_string(crop.y) + " " +
                      std::to_string(crop.width) + "x" + std::to_string(crop.height) + ") outside " +
                      std::to_string(w) + "x" + std::to_string(h) + " image");
  }
  if (mask && (mask->width != static_cast<int>(w) || mask->height != static_cast<int>(h))) {
    throw DimensionError("l1_crop_loss: mask size differs from image size");
  }
  auto pixels = std::make_shared<std::vector<std::size_t>>();
  for (std::size_t y = crop.y; y < crop.y + crop.height; ++y) {
    for (std::size_t x = crop.x; x < crop.x + crop.width; ++x) {
      const std::size_t i = y * w + x;
      if (!mask || mask->mask(i)) pixels->push_back(i);
    }
  }
  const std::size_t plane = h * w;
  const double count = static_cast<double>(pixels->size() * channels);
  double total = 0.0;
  auto p = pred.data(), g = gt.data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i : *pixels) total += std::abs(static_cast<double>(p[c * plane + i]) - g[c * plane + i]);
  }
  const T value = pixels->empty() ? T(0) : static_cast<T>(total / count);
  return detail::record<T>("l1_crop_loss", Shape{1}, {value}, {pred, gt},
                           [pred, gt, pixels, channels, plane, count](std::span<const T> grad) mutable {
                             if (pixels->empty()) return;
                             const T k = static_cast<T>(grad[0] / count);
                             auto p = pred.data(), g = gt.data();
                             if (pred.requires_grad()) {
                               auto gp = pred.mutable_grad();
                               for (std::size_t c = 0; c < channels; ++c) {
                                 for (std::size_t i : *pixels) {
                                   const std::size_t j = c * plane + i;
                                   gp[j] += p[j] > g[j] ? k : (p[j] < g[j] ? -k : T(0));
                                 }
                               }
                             }
                             if (gt.requires_grad()) {
                               auto gg = gt.mutable_grad();
                               for (std::size_t c = 0; c < channels; ++c) {
                                 for (std::size_t i : *pixels) {
                                   const std::size_t j = c * plane + i;
                                   gg[j] += p[j] > g[j] ? -k : (p[j] < g[j] ? k : T(0));
                                 }
                               }
                             }
                           });
}

template <typename T>
struct LossTerms {
  Tensor<T> total;
  Tensor<T> l1;
  Tensor<T> intermediate;
  Tensor<T> reg;
};

/// l1(render, gt) + w * masked l1(mean-color channels, gt) + pyramid penalty.
template <typename T>
LossTerms<T> total_loss(const Model<T>& model, const GBuffer& gbuffer, const Tensor<T>& gt,
                        const TrainConfig& config, const Crop& crop,
                        const ObjectTextures& objects = single_object_textures()) {
  const auto fwd = forward(model, gbuffer, objects);
  LossTerms<T> terms;
  terms.l1 = l1_crop_loss(fwd.image, gt, crop);
  terms.intermediate = l1_crop_loss(slice_channels(fwd.features, 0, kMeanColorChannels), gt, crop, &gbuffer);
  terms.reg = Tensor<T>::scalar(T(0));
  for (const auto& [id, pyr] : model.textures) terms.reg = add(terms.reg, pyramid_l2_penalty(pyr, config.lambda_reg));
  terms.total = add(add(terms.l1, scale(terms.intermediate, static_cast<T>(config.intermediate_weight))), terms.reg);
  return terms;
}

template <typename T>
LossTerms<T> total_loss(const Model<T>& model, const TrainingSample& sample, const TrainConfig& config,
                        const Crop& crop) {
  return total_loss(model, sample.gbuffer, image_to_tensor<T>(sample.image), config, crop);
}

// ---------------------------------------------------------------------------
// Adam.

template <typename T>
struct AdamState {
  std::vector<Buffer<T>> m;
  std::vector<Buffer<T>> v;
  std::int64_t t = 0;
};

/// One bias-corrected Adam update of every tensor from its grad buffer
/// (absent grads count as zero).
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, const TrainConfig& config) {
  if (state.m.empty() && state.t == 0) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                        " tensors but " + std::to_string(params.size()) + " were given");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.m[k].size() != params[k].numel() || state.v[k].size() != params[k].numel()) {
      throw ContractError("adam_step: state shape mismatch for tensor " + std::to_string(k));
    }
  }
  state.t += 1;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (!p.has_grad()) {
      // m and v still decay toward zero.
      for (std::size_t i = 0; i < p.numel(); ++i) {
        state.m[k][i] = static_cast<T>(b1 * state.m[k][i]);
        state.v[k][i] = static_cast<T>(b2 * state.v[k][i]);
      }
    }
    auto g = p.grad();
    auto x = p.data();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (p.has_grad()) {
        const double gi = g[i];
        m[i] = static_cast<T>(b1 * m[i] + (1.0 - b1) * gi);
        v[i] = static_cast<T>(b2 * v[i] + (1.0 - b2) * gi * gi);
      }
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      x[i] = static_cast<T>(x[i] - config.learning_rate * mhat / (std::sqrt(vhat) + config.epsilon));
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop.

struct LossRecord {
  std::size_t step = 0;
  double total = 0, l1 = 0, intermediate = 0, reg = 0;

  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

inline void write_loss_csv(const std::vector<LossRecord>& curve, std::ostream& out) {
  out << "# ntex loss curve v1\nstep,total,l1,intermediate,reg\n";
  char buf[256];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g\n", r.step, r.total, r.l1, r.intermediate, r.reg);
    out << buf;
  }
}

/// Runs config.steps optimization steps from the model's current weights.
/// Each step draws one sample and one crop, backpropagates total_loss and
/// applies a single Adam update over textures and network together.
template <typename T>
std::vector<LossRecord> train(const std::vector<TrainingSample>& dataset, Model<T>& model, const TrainConfig& config,
                              const std::function<void(const LossRecord&)>& on_step = {}) {
  config.validate();
  if (dataset.empty()) throw ConfigError("train: dataset is empty");
  std::vector<Tensor<T>> targets;
  targets.reserve(dataset.size());
  for (const auto& s : dataset) {
    if (s.image.width != s.gbuffer.width || s.image.height != s.gbuffer.height) {
      throw ConfigError("train: image and G-buffer sizes differ");
    }
    targets.push_back(image_to_tensor<T>(s.image));
  }

  std::mt19937_64 rng(config.seed);
  AdamState<T> adam;
  auto params = model.parameters();
  std::vector<LossRecord> curve;
  curve.reserve(config.steps);
  for (std::size_t step = 0; step < config.steps; ++step) {
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, dataset.size() - 1)(rng);
    const auto& sample = dataset[k];
    const Crop crop = sample_crop(rng, static_cast<std::size_t>(sample.image.width),
                                  static_cast<std::size_t>(sample.image.height), config);
    for (auto& p : params) p.zero_grad();
    const auto terms = total_loss(model, sample.gbuffer, targets[k], config, crop);
    backward(terms.total);
    adam_step(std::span<Tensor<T>>(params), adam, config);
    LossRecord rec{step, static_cast<double>(terms.total.item()), static_cast<double>(terms.l1.item()),
                   static_cast<double>(terms.intermediate.item()), static_cast<double>(terms.reg.item())};
    curve.push_back(rec);
    if (on_step) on_step(rec);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Checkpoints: "NTCK", u32 version, config block (u32 length + key/value
// text), u64 step, u32 tensor count, then per tensor: u32 name length, name,
// u8 dtype (0 = f32, 1 = f64), u32 rank, u64 dims, raw little-endian data.

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  Model<T> model;
  TrainConfig train_config;
  std::uint64_t step = 0;
};

namespace detail {

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> checkpoint_tensors(const Model<T>& model) {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (const auto& [id, pyr] : model.textures) {
    for (std::size_t l = 0; l < pyr.level_count(); ++l) {
      out.emplace_back("texture." + std::to_string(id) + ".level." + std::to_string(l), pyr.levels[l]);
    }
  }
  for (const auto& [name, t] : model.network.named) out.emplace_back("net." + name, t);
  return out;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const Checkpoint<T>& ck, std::ostream& out) {
  KeyValues kv;
  ck.model.config.write(kv);
  ck.train_config.write(kv);
  std::string ids;
  for (const auto& [id, pyr] : ck.model.textures) ids += (ids.empty() ? "" : ",") + std::to_string(id);
  kv.set("texture_ids", ids);

  io::write_magic(out, "NTCK");
  io::write_pod<std::uint32_t>(out, kCheckpointVersion);
  io::write_string(out, kv.serialize());
  io::write_pod<std::uint64_t>(out, ck.step);
  const auto tensors = detail::checkpoint_tensors(ck.model);
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    io::write_string(out, name);
    io::write_pod<std::uint8_t>(out, sizeof(T) == 4 ? 0 : 1);
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) io::write_pod<std::uint64_t>(out, d);
    io::write_array<T>(out, t.data());
  }
  if (!out) throw IoError("failed to write checkpoint");
}

template <typename T>
Checkpoint<T> load_checkpoint(std::istream& in) {
  io::expect_magic(in, "NTCK");
  const auto version = io::read_pod<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  KeyValues kv;
  try {
    kv = KeyValues::parse(io::read_string(in, "config block"));
  } catch (const ParseError& e) {
    throw FormatError(std::string("checkpoint config block unreadable: ") + e.what());
  }
  Checkpoint<T> ck;
  try {
    ck.train_config = TrainConfig::read(kv);
    const ModelConfig config = ModelConfig::read(kv);
    std::vector<int> ids;
    for (double id : kv.get_list("texture_ids", {})) ids.push_back(static_cast<int>(id));
    ck.model = Model<T>::create(config, ids, 0);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config block invalid: ") + e.what());
  }
  ck.step = io::read_pod<std::uint64_t>(in, "step");
  auto expected = detail::checkpoint_tensors(ck.model);
  const auto count = io::read_pod<std::uint32_t>(in, "tensor count");
  if (count != expected.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                      std::to_string(expected.size()));
  }
  for (auto& [name, tensor] : expected) {
    const std::string stored = io::read_string(in, "tensor name", 4096);
    if (stored != name) throw FormatError("expected tensor '" + name + "', found '" + stored + "'");
    const auto dtype = io::read_pod<std::uint8_t>(in, "dtype");
    if (dtype > 1) throw FormatError("unknown dtype in tensor '" + name + "'");
    const auto rank = io::read_pod<std::uint32_t>(in, "rank");
    if (rank != tensor.rank()) throw FormatError("rank mismatch for tensor '" + name + "'");
    for (std::size_t d = 0; d < rank; ++d) {
      if (io::read_pod<std::uint64_t>(in, "dims") != tensor.dim(d)) {
        throw FormatError("shape mismatch for tensor '" + name + "'");
      }
    }
    auto data = tensor.data();
    if (dtype == (sizeof(T) == 4 ? 0 : 1)) {
      io::read_array<T>(in, data, "tensor data");
    } else if (dtype == 0) {
      std::vector<float> tmp(data.size());
      io::read_array<float>(in, std::span<float>(tmp), "tensor data");
      std::copy(tmp.begin(), tmp.end(), data.begin());
    } else {
      std::vector<double> tmp(data.size());
      io::read_array<double>(in, std::span<double>(tmp), "tensor data");
      std::transform(tmp.begin(), tmp.end(), data.begin(), [](double v) { return static_cast<T>(v); });
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint");
  return ck;
}

/// Writes to a temporary sibling and renames it over `path`.
template <typename T>
void save_checkpoint_file(const Checkpoint<T>& ck, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    save_checkpoint(ck, out);
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
Checkpoint<T> load_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return load_checkpoint<T>(in);
}

}  // namespace ntex
