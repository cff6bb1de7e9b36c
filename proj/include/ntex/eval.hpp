#pragma once

// Metrics, novel-view inference, the classical average-color baseline and the
// ablation harness.

#include <cmath>
#include <functional>
#include <map>
#include <ostream>

#include "ntex/synthetic.hpp"
#include "ntex/training.hpp"

namespace ntex {

/// Mean over pixels and channels of (255 pred - 255 gt)^2 for [0,1] images.
inline double mse_255(const Image& pred, const Image& gt) {
  if (pred.width != gt.width || pred.height != gt.height || pred.rgb.size() != gt.rgb.size()) {
    throw ContractError("mse_255: image sizes differ (" + std::to_string(pred.width) + "x" +
                        std::to_string(pred.height) + " vs " + std::to_string(gt.width) + "x" +
                        std::to_string(gt.height) + ")");
  }
  if (pred.rgb.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.rgb.size(); ++i) {
    const double d = 255.0 * static_cast<double>(pred.rgb[i]) - 255.0 * static_cast<double>(gt.rgb[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.rgb.size());
}

template <typename T>
Image render_gbuffer(const Model<T>& model, const GBuffer& gbuffer,
                     const ObjectTextures& objects = single_object_textures()) {
  return tensor_to_image(forward(model, gbuffer, objects).image);
}

/// rasterize -> sample textures -> SH modulation -> network -> [0,1] image.
template <typename T>
Image render_novel_view(const Model<T>& model, const Scene& scene, const Camera& camera) {
  for (const auto& inst : scene.instances) {
    if (!model.textures.count(inst.texture_id)) {
      throw ConfigError("scene references texture id " + std::to_string(inst.texture_id) +
                        " which the checkpoint does not contain");
    }
  }
  return render_gbuffer(model, rasterize(scene, camera), object_textures(scene));
}

struct EvalReport {
  std::vector<double> per_frame;
  double mean = 0.0;
  KeyValues config;

  static EvalReport from_frames(std::vector<double> frames, KeyValues config = {}) {
    EvalReport r;
    r.per_frame = std::move(frames);
    double acc = 0.0;
    for (double v : r.per_frame) acc += v;
    r.mean = r.per_frame.empty() ? 0.0 : acc / static_cast<double>(r.per_frame.size());
    r.config = std::move(config);
    return r;
  }
};

inline void write_eval_csv(const EvalReport& r, std::ostream& out) {
  out << "# ntex eval v1\n";
  for (const auto& [k, v] : r.config.entries()) out << "#! " << k << " = " << v << "\n";
  out << "frame,mse\n";
  for (std::size_t i = 0; i < r.per_frame.size(); ++i) {
    out << i << ',' << KeyValues::format_double(r.per_frame[i]) << '\n';
  }
  out << "mean," << KeyValues::format_double(r.mean) << '\n';
}

inline EvalReport read_eval_csv(std::istream& in) {
  EvalReport r;
  std::string line, config_text;
  std::size_t line_no = 0;
  bool have_mean = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.rfind("#!", 0) == 0) {
      config_text += line.substr(2) + "\n";
      continue;
    }
    if (line.empty() || line[0] == '#' || line == "frame,mse") continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError("expected 'frame,mse'", line_no);
    const std::string key = line.substr(0, comma);
    double value = 0.0;
    try {
      value = std::stod(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw ParseError("bad MSE value", line_no);
    }
    if (key == "mean") {
      r.mean = value;
      have_mean = true;
    } else {
      r.per_frame.push_back(value);
    }
  }
  if (!have_mean) throw ParseError("missing mean row", line_no);
  r.config = KeyValues::parse(config_text);
  return r;
}

/// Renders every sample's G-buffer and scores it against its image.
template <typename T>
EvalReport evaluate(const Model<T>& model, const std::vector<TrainingSample>& samples) {
  std::vector<double> frames;
  frames.reserve(samples.size());
  for (const auto& s : samples) frames.push_back(mse_255(render_gbuffer(model, s.gbuffer), s.image));
  KeyValues kv;
  model.config.write(kv);
  return EvalReport::from_frames(std::move(frames), std::move(kv));
}

// ---------------------------------------------------------------------------
// Classical average-color texture: every training pixel's color is splatted
// with bilinear weights into a uv texture; texels never observed take the mean
// observed color.

struct ColorTexture {
  std::size_t resolution = 0;
  std::vector<double> rgb;  // 3 x R x R
};

inline ColorTexture average_color_texture(const std::vector<TrainingSample>& samples, std::size_t resolution) {
  if (resolution < 2) throw ConfigError("average color texture needs resolution >= 2");
  const std::size_t plane = resolution * resolution;
  ColorTexture tex{resolution, std::vector<double>(3 * plane, 0.0)};
  std::vector<double> weight(plane, 0.0);
  Vec3 global = Vec3::Zero();
  double global_n = 0.0;
  for (const auto& s : samples) {
    const auto& g = s.gbuffer;
    for (std::size_t i = 0; i < g.pixel_count(); ++i) {
      if (!g.mask(i)) continue;
      const auto tap = bilinear_tap(g.uv[2 * i], g.uv[2 * i + 1], resolution);
      const auto w = tap.weights();
      const std::size_t base = tap.y0 * resolution + tap.x0;
      const std::size_t idx[4] = {base, base + 1, base + resolution, base + resolution + 1};
      for (int c = 0; c < 3; ++c) {
        const double v = s.image.at(c, i);
        global[c] += v;
        for (int k = 0; k < 4; ++k) tex.rgb[c * plane + idx[k]] += w[k] * v;
      }
      for (int k = 0; k < 4; ++k) weight[idx[k]] += w[k];
      global_n += 1.0;
    }
  }
  if (global_n > 0) global /= global_n;
  for (std::size_t t = 0; t < plane; ++t) {
    for (int c = 0; c < 3; ++c) {
      tex.rgb[c * plane + t] = weight[t] > 1e-12 ? tex.rgb[c * plane + t] / weight[t] : global[c];
    }
  }
  return tex;
}

/// Bilinear lookup of the color texture at covered pixels; background black.
inline Image render_color_texture(const ColorTexture& tex, const GBuffer& g) {
  Image img = Image::black(g.width, g.height);
  const std::size_t r = tex.resolution, plane = r * r;
  for (std::size_t i = 0; i < g.pixel_count(); ++i) {
    if (!g.mask(i)) continue;
    const auto tap = bilinear_tap(g.uv[2 * i], g.uv[2 * i + 1], r);
    const auto w = tap.weights();
    const std::size_t base = tap.y0 * r + tap.x0;
    for (int c = 0; c < 3; ++c) {
      const double* t = tex.rgb.data() + c * plane + base;
      img.at(c, i) = static_cast<float>(w[0] * t[0] + w[1] * t[1] + w[2] * t[r] + w[3] * t[r + 1]);
    }
  }
  return img;
}

inline constexpr std::size_t kBaselineTextureResolution = 64;

inline EvalReport evaluate_average_color_baseline(const Dataset& d,
                                                  std::size_t resolution = kBaselineTextureResolution) {
  const auto tex = average_color_texture(d.train, resolution);
  std::vector<double> frames;
  for (const auto& s : d.test) frames.push_back(mse_255(render_color_texture(tex, s.gbuffer), s.image));
  return EvalReport::from_frames(std::move(frames));
}

// ---------------------------------------------------------------------------
// Ablations.

enum class AblationAxis { texture_resolution, hierarchy_on_off, train_set_size, proxy_tessellation, per_pixel_vs_unet, sh_on_off };

inline const char* to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::texture_resolution: return "texture_resolution";
    case AblationAxis::hierarchy_on_off: return "hierarchy_on_off";
    case AblationAxis::train_set_size: return "train_set_size";
    case AblationAxis::proxy_tessellation: return "proxy_tessellation";
    case AblationAxis::per_pixel_vs_unet: return "per_pixel_vs_unet";
    case AblationAxis::sh_on_off: return "sh_on_off";
  }
  return "?";
}

inline AblationAxis parse_ablation_axis(const std::string& s) {
  for (auto a : {AblationAxis::texture_resolution, AblationAxis::hierarchy_on_off, AblationAxis::train_set_size,
                 AblationAxis::proxy_tessellation, AblationAxis::per_pixel_vs_unet, AblationAxis::sh_on_off}) {
    if (s == to_string(a)) return a;
  }
  throw ConfigError("unknown ablation axis '" + s + "'");
}

struct ExperimentConfig {
  SyntheticSceneConfig scene;
  ModelConfig model;
  TrainConfig train;
  std::uint64_t model_seed = 1;

  void write(KeyValues& kv) const {
    scene.write(kv);
    model.write(kv);
    train.write(kv);
    kv.set("model_seed", static_cast<long long>(model_seed));
  }

  static ExperimentConfig read(const KeyValues& kv) {
    ExperimentConfig e;
    e.scene = SyntheticSceneConfig::read(kv);
    e.model = ModelConfig::read(kv);
    e.train = TrainConfig::read(kv);
    e.model_seed = static_cast<std::uint64_t>(kv.get_int("model_seed", 1));
    return e;
  }
};

struct AblationSpec {
  AblationAxis axis = AblationAxis::sh_on_off;
  std::vector<double> values;
  ExperimentConfig base;
};

struct AblationRow {
  double value = 0.0;
  double mean_mse = 0.0;
  double baseline_mse = 0.0;
  double final_loss = 0.0;
};

/// The experiment configuration of one ablation cell.
inline ExperimentConfig ablation_cell(const AblationSpec& spec, double value) {
  ExperimentConfig e = spec.base;
  const auto as_int = [&](long long min) {
    const auto v = static_cast<long long>(std::llround(value));
    if (static_cast<double>(v) != value || v < min) {
      throw ConfigError(std::string("invalid value ") + KeyValues::format_double(value) + " for axis " +
                        to_string(spec.axis));
    }
    return v;
  };
  const auto as_flag = [&]() {
    if (value != 0.0 && value != 1.0) {
      throw ConfigError(std::string("axis ") + to_string(spec.axis) + " takes values 0 or 1");
    }
    return value == 1.0;
  };
  switch (spec.axis) {
    case AblationAxis::texture_resolution:
      e.model.texture_resolution = static_cast<std::size_t>(as_int(2));
      break;
    case AblationAxis::hierarchy_on_off:
      if (as_flag()) {
        if (e.model.texture_levels < 2) throw ConfigError("hierarchy_on_off needs texture_levels >= 2 in the base config");
      } else {
        e.model.texture_levels = 1;
      }
      break;
    case AblationAxis::train_set_size:
      e.scene.n_train = static_cast<int>(as_int(1));
      break;
    case AblationAxis::proxy_tessellation:
      e.scene.proxy_tessellation = static_cast<int>(as_int(3));
      break;
    case AblationAxis::per_pixel_vs_unet:
      e.model.network.per_pixel = as_flag();
      break;
    case AblationAxis::sh_on_off:
      e.model.use_sh = as_flag();
      break;
  }
  e.model.validate();
  e.scene.validate();
  if (!e.model.network.per_pixel) e.scene.validate_for_network(e.model.network.depth());
  // Resolutions must halve cleanly into the configured levels.
  (void)NeuralTexturePyramid<float>::make(1, e.model.texture_resolution, e.model.texture_levels, 0);
  return e;
}

struct ExperimentResult {
  Model<float> model;
  std::vector<LossRecord> curve;
  EvalReport report;
  EvalReport baseline;
};

/// Generates the dataset, trains from scratch and evaluates on the test split.
inline ExperimentResult run_experiment(const ExperimentConfig& e, const Dataset& data,
                                       const std::function<void(const LossRecord&)>& on_step = {}) {
  ExperimentResult r;
  r.model = Model<float>::create(e.model, {0}, e.model_seed);
  r.curve = train(data.train, r.model, e.train, on_step);
  r.report = evaluate(r.model, data.test);
  r.baseline = evaluate_average_color_baseline(data);
  return r;
}

/// Trains one model per value with identical seeds and step budget.
inline std::vector<AblationRow> run_ablation(const AblationSpec& spec,
                                             const std::function<void(const std::string&)>& log = {}) {
  if (spec.values.empty()) throw ConfigError("ablation needs at least one value");
  std::vector<ExperimentConfig> cells;
  for (double v : spec.values) cells.push_back(ablation_cell(spec, v));
  std::vector<AblationRow> rows;
  std::map<std::string, Dataset> datasets;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    KeyValues scene_kv;
    cells[i].scene.write(scene_kv);
    const std::string key = scene_kv.serialize();
    if (!datasets.count(key)) datasets.emplace(key, make_dataset(cells[i].scene));
    const auto result = run_experiment(cells[i], datasets.at(key));
    AblationRow row{spec.values[i], result.report.mean, result.baseline.mean,
                    result.curve.empty() ? 0.0 : result.curve.back().l1};
    if (log) {
      log(std::string(to_string(spec.axis)) + " = " + KeyValues::format_double(row.value) +
          ": mse " + KeyValues::format_double(row.mean_mse) + " (baseline " +
          KeyValues::format_double(row.baseline_mse) + ")");
    }
    rows.push_back(row);
  }
  return rows;
}

inline void write_ablation_csv(const AblationSpec& spec, const std::vector<AblationRow>& rows, std::ostream& out) {
  out << "# ntex ablation v1\n";
  out << "#! axis = " << to_string(spec.axis) << "\n";
  KeyValues kv;
  spec.base.write(kv);
  for (const auto& [k, v] : kv.entries()) out << "#! " << k << " = " << v << "\n";
  out << "value,mean_mse,baseline_mse,final_l1\n";
  for (const auto& r : rows) {
    out << KeyValues::format_double(r.value) << ',' << KeyValues::format_double(r.mean_mse) << ','
        << KeyValues::format_double(r.baseline_mse) << ',' << KeyValues::format_double(r.final_loss) << '\n';
  }
}

}  // namespace ntex
