#pragma once

// Synthetic ground truth: Phong-shaded renderings of parametric objects from
// random hemisphere views (training) and a smooth spiral (testing).

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "ntex/config.hpp"
#include "ntex/image.hpp"
#include "ntex/rasterizer.hpp"
#include "ntex/training.hpp"

namespace ntex {

enum class AlbedoPattern { checker, gradient, image };

struct PhongParams {
  double ka = 0.15;
  double kd = 0.75;
  double ks = 0.6;
  double shininess = 24.0;
};

struct SyntheticSceneConfig {
  MeshKind kind = MeshKind::sphere;
  int tessellation = 64;
  int proxy_tessellation = 0;  // G-buffer mesh; 0 = same as tessellation
  AlbedoPattern albedo = AlbedoPattern::checker;
  int checker_cells = 8;
  std::string albedo_image;  // PPM path when albedo == image
  PhongParams phong;
  Vec3 light_dir = Vec3(0.4, -0.3, 0.866).normalized();  // toward the light
  int width = 64, height = 64;
  int n_train = 128, n_test = 64;
  double radius = 3.0;
  double fov_deg = 45.0;
  std::uint64_t seed = 7;
  int supersample = 4;

  int gbuffer_tessellation() const { return proxy_tessellation > 0 ? proxy_tessellation : tessellation; }

  void validate() const {
    if (phong.ka < 0 || phong.kd < 0 || phong.ks < 0) throw ConfigError("Phong coefficients must be >= 0");
    if (phong.shininess < 1) throw ConfigError("Phong shininess must be >= 1");
    if (width <= 0 || height <= 0) throw ConfigError("image size must be positive");
    if (n_train < 1 || n_test < 2) throw ConfigError("need n_train >= 1 and n_test >= 2");
    if (supersample < 1) throw ConfigError("supersample must be >= 1");
    if (std::abs(light_dir.norm() - 1.0) > 1e-6) throw ConfigError("light_dir must be a unit vector");
    if (albedo == AlbedoPattern::image && albedo_image.empty()) throw ConfigError("albedo = image needs albedo_image");
  }

  /// Image sides must be divisible by 2^depth of the paired network.
  void validate_for_network(std::size_t depth) const {
    const int f = 1 << depth;
    if (width % f != 0 || height % f != 0) {
      throw ConfigError("image size " + std::to_string(width) + "x" + std::to_string(height) +
                        " is not divisible by 2^depth = " + std::to_string(f));
    }
  }

  void write(KeyValues& kv) const {
    kv.set("kind", to_string(kind));
    kv.set("tessellation", tessellation);
    kv.set("proxy_tessellation", proxy_tessellation);
    kv.set("albedo", albedo == AlbedoPattern::checker ? "checker" : albedo == AlbedoPattern::gradient ? "gradient" : "image");
    kv.set("checker_cells", checker_cells);
    if (!albedo_image.empty()) kv.set("albedo_image", albedo_image);
    kv.set("ka", phong.ka);
    kv.set("kd", phong.kd);
    kv.set("ks", phong.ks);
    kv.set("shininess", phong.shininess);
    kv.set("light_dir", KeyValues::format_double(light_dir.x()) + "," + KeyValues::format_double(light_dir.y()) +
                            "," + KeyValues::format_double(light_dir.z()));
    kv.set("width", width);
    kv.set("height", height);
    kv.set("n_train", n_train);
    kv.set("n_test", n_test);
    kv.set("radius", radius);
    kv.set("fov", fov_deg);
    kv.set("seed", static_cast<long long>(seed));
    kv.set("supersample", supersample);
  }

  static SyntheticSceneConfig read(const KeyValues& kv) {
    SyntheticSceneConfig c;
    c.kind = parse_mesh_kind(kv.get_string("kind", to_string(c.kind)));
    c.tessellation = static_cast<int>(kv.get_int("tessellation", c.tessellation));
    c.proxy_tessellation = static_cast<int>(kv.get_int("proxy_tessellation", c.proxy_tessellation));
    const std::string albedo = kv.get_string("albedo", "checker");
    if (albedo == "checker") c.albedo = AlbedoPattern::checker;
    else if (albedo == "gradient") c.albedo = AlbedoPattern::gradient;
    else if (albedo == "image") c.albedo = AlbedoPattern::image;
    else throw ConfigError("unknown albedo pattern '" + albedo + "'");
    c.checker_cells = static_cast<int>(kv.get_int("checker_cells", c.checker_cells));
    c.albedo_image = kv.get_string("albedo_image", "");
    c.phong.ka = kv.get_double("ka", c.phong.ka);
    c.phong.kd = kv.get_double("kd", c.phong.kd);
    c.phong.ks = kv.get_double("ks", c.phong.ks);
    c.phong.shininess = kv.get_double("shininess", c.phong.shininess);
    const auto l = kv.get_list("light_dir", {c.light_dir.x(), c.light_dir.y(), c.light_dir.z()});
    if (l.size() != 3) throw ConfigError("light_dir needs 3 components");
    c.light_dir = Vec3(l[0], l[1], l[2]).normalized();
    c.width = static_cast<int>(kv.get_int("width", c.width));
    c.height = static_cast<int>(kv.get_int("height", c.height));
    c.n_train = static_cast<int>(kv.get_int("n_train", c.n_train));
    c.n_test = static_cast<int>(kv.get_int("n_test", c.n_test));
    c.radius = kv.get_double("radius", c.radius);
    c.fov_deg = kv.get_double("fov", c.fov_deg);
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
    c.supersample = static_cast<int>(kv.get_int("supersample", c.supersample));
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Albedo and shading.

class Albedo {
 public:
  explicit Albedo(const SyntheticSceneConfig& config) : pattern_(config.albedo), cells_(config.checker_cells) {
    if (pattern_ == AlbedoPattern::image) {
      std::ifstream in(config.albedo_image, std::ios::binary);
      if (!in) throw IoError("cannot open albedo image " + config.albedo_image);
      image_ = read_ppm(in);
    }
  }

  /// Constant albedo, for tests.
  explicit Albedo(Vec3 constant) : pattern_(AlbedoPattern::gradient), constant_(constant), is_constant_(true) {}

  Vec3 operator()(const Vec2& uv) const {
    if (is_constant_) return constant_;
    switch (pattern_) {
      case AlbedoPattern::checker: {
        const int cu = std::min(cells_ - 1, static_cast<int>(uv.x() * cells_));
        const int cv = std::min(cells_ - 1, static_cast<int>(uv.y() * cells_));
        return ((cu + cv) % 2 == 0) ? Vec3(0.85, 0.35, 0.2) : Vec3(0.2, 0.45, 0.8);
      }
      case AlbedoPattern::gradient:
        return Vec3(0.1 + 0.8 * uv.x(), 0.1 + 0.8 * uv.y(), 0.9 - 0.8 * uv.x());
      case AlbedoPattern::image: {
        const double x = uv.x() * (image_.width - 1), y = uv.y() * (image_.height - 1);
        const int x0 = std::min(static_cast<int>(x), std::max(0, image_.width - 2));
        const int y0 = std::min(static_cast<int>(y), std::max(0, image_.height - 2));
        const int x1 = std::min(x0 + 1, image_.width - 1), y1 = std::min(y0 + 1, image_.height - 1);
        const double fx = x - x0, fy = y - y0;
        Vec3 out;
        for (int c = 0; c < 3; ++c) {
          auto px = [&](int xx, int yy) { return image_.at(c, static_cast<std::size_t>(yy) * image_.width + xx); };
          out[c] = (1 - fy) * ((1 - fx) * px(x0, y0) + fx * px(x1, y0)) + fy * ((1 - fx) * px(x0, y1) + fx * px(x1, y1));
        }
        return out;
      }
    }
    return Vec3::Zero();
  }

 private:
  AlbedoPattern pattern_;
  int cells_ = 8;
  Image image_;
  Vec3 constant_ = Vec3::Zero();
  bool is_constant_ = false;
};

/// ka*albedo + kd*max(0, n.l)*albedo + ks*max(0, r.v)^shininess (white
/// highlight, only where n.l > 0), clamped to [0,1].
inline Vec3 phong_shade(const Vec3& normal, const Vec3& light_dir, const Vec3& view_dir, const Vec3& albedo,
                        const PhongParams& p) {
  const double nl = normal.dot(light_dir);
  Vec3 color = p.ka * albedo + p.kd * std::max(0.0, nl) * albedo;
  if (nl > 0.0 && p.ks > 0.0) {
    const Vec3 r = 2.0 * nl * normal - light_dir;
    const double rv = std::max(0.0, r.dot(view_dir));
    color += Vec3::Constant(p.ks * std::pow(rv, p.shininess));
  }
  return color.cwiseMax(0.0).cwiseMin(1.0);
}

/// Coverage follows the pixel-center rasterization; covered pixels average
/// the shading of the covered supersamples inside them.
inline Image phong_render(const Scene& scene, const Camera& camera, const PhongParams& phong, const Vec3& light_dir,
                          const Albedo& albedo, int supersample = 4) {
  const FragmentBuffer center = rasterize_fragments(scene, camera);
  Image img = Image::black(camera.width, camera.height);
  auto shade = [&](const Camera& cam, const Fragment& f) {
    const SurfacePoint s = surface_at(scene, f);
    return phong_shade(s.normal, light_dir, view_direction(s.position, cam), albedo(s.uv), phong);
  };
  FragmentBuffer fine;
  if (supersample > 1) fine = rasterize_fragments(scene, camera.scaled(supersample));
  const Camera fine_cam = camera.scaled(std::max(1, supersample));
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * camera.width + x;
      if (!center.pixels[i].covered()) continue;
      Vec3 acc = Vec3::Zero();
      int hits = 0;
      if (supersample > 1) {
        for (int sy = 0; sy < supersample; ++sy) {
          for (int sx = 0; sx < supersample; ++sx) {
            const auto& f = fine.pixels[static_cast<std::size_t>(y * supersample + sy) * fine.width +
                                        (x * supersample + sx)];
            if (!f.covered()) continue;
            acc += shade(fine_cam, f);
            ++hits;
          }
        }
      }
      const Vec3 color = hits > 0 ? Vec3(acc / hits) : shade(camera, center.pixels[i]);
      for (int c = 0; c < 3; ++c) img.at(c, i) = static_cast<float>(color[c]);
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Camera sets.

struct Intrinsics {
  int width = 64, height = 64;
  double fov_deg = 45.0;
};

inline double angle_between_deg(const Vec3& a, const Vec3& b) {
  const double c = std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

/// Centers uniform by area on the upper hemisphere (z >= 0), looking at the origin.
inline std::vector<Camera> sample_hemisphere_views(int n, double radius, std::uint64_t seed, const Intrinsics& k) {
  if (n < 1) throw ConfigError("sample_hemisphere_views: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Camera> cams;
  cams.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double z = unit(rng);
    const double phi = 2.0 * std::numbers::pi * unit(rng);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const Vec3 eye = radius * Vec3(r * std::cos(phi), r * std::sin(phi), z);
    cams.push_back(Camera::look_at(eye, Vec3::Zero(), k.width, k.height, k.fov_deg));
  }
  return cams;
}

inline constexpr double kTrajectoryStartElevationDeg = 5.0;
inline constexpr double kTrajectoryEndElevationDeg = 85.0;
inline constexpr double kTrajectoryTurns = 2.0;

/// Spiral: elevation rises linearly from 5 to 85 degrees while the azimuth
/// winds two full turns.
inline std::vector<Camera> smooth_trajectory(int n, double radius, const Intrinsics& k) {
  if (n < 2) throw ConfigError("smooth_trajectory: n must be >= 2");
  constexpr double deg = std::numbers::pi / 180.0;
  std::vector<Camera> cams;
  cams.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double s = static_cast<double>(i) / (n - 1);
    const double elev = (kTrajectoryStartElevationDeg + s * (kTrajectoryEndElevationDeg - kTrajectoryStartElevationDeg)) * deg;
    const double az = 2.0 * std::numbers::pi * kTrajectoryTurns * s;
    const Vec3 eye = radius * Vec3(std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az), std::sin(elev));
    cams.push_back(Camera::look_at(eye, Vec3::Zero(), k.width, k.height, k.fov_deg));
  }
  return cams;
}

// ---------------------------------------------------------------------------
// Datasets.

struct Dataset {
  SyntheticSceneConfig config;
  std::vector<TrainingSample> train;
  std::vector<TrainingSample> test;
};

/// Scene whose G-buffers the renderer consumes (possibly a coarser proxy).
inline Scene proxy_scene(const SyntheticSceneConfig& c) {
  return Scene::single(std::make_shared<const Mesh>(generate_parametric_mesh(c.kind, c.gbuffer_tessellation())));
}

inline Scene ground_truth_scene(const SyntheticSceneConfig& c) {
  return Scene::single(std::make_shared<const Mesh>(generate_parametric_mesh(c.kind, c.tessellation)));
}

inline TrainingSample render_sample(const Scene& truth, const Scene& proxy, const Camera& cam,
                                    const SyntheticSceneConfig& c, const Albedo& albedo) {
  TrainingSample s;
  s.camera = cam;
  s.gbuffer = rasterize(proxy, cam);
  s.image = phong_render(truth, cam, c.phong, c.light_dir, albedo, c.supersample);
  s.image.quantize();
  return s;
}

/// In-memory dataset; images are quantized to 8 bits so they equal their PPM files.
inline Dataset make_dataset(const SyntheticSceneConfig& config) {
  config.validate();
  Dataset d;
  d.config = config;
  const Scene truth = ground_truth_scene(config);
  const Scene proxy = proxy_scene(config);
  const Albedo albedo(config);
  const Intrinsics k{config.width, config.height, config.fov_deg};
  for (const auto& cam : sample_hemisphere_views(config.n_train, config.radius, config.seed, k)) {
    d.train.push_back(render_sample(truth, proxy, cam, config, albedo));
  }
  for (const auto& cam : smooth_trajectory(config.n_test, config.radius, k)) {
    d.test.push_back(render_sample(truth, proxy, cam, config, albedo));
  }
  return d;
}

// Manifest: "# ntex dataset v1", config echo lines "#! key = value", then one
// line per view: split, G-buffer path, image path, fx fy cx cy width height,
// 9 row-major rotation entries, 3 translation entries. Paths are relative to
// the manifest.

namespace detail {

inline std::string camera_fields(const Camera& c) {
  std::string s;
  auto add = [&](double v) { s += ' ' + KeyValues::format_double(v); };
  add(c.fx);
  add(c.fy);
  add(c.cx);
  add(c.cy);
  s += ' ' + std::to_string(c.width) + ' ' + std::to_string(c.height);
  for (int r = 0; r < 3; ++r) {
    for (int col = 0; col < 3; ++col) add(c.pose.rotation(r, col));
  }
  for (int r = 0; r < 3; ++r) add(c.pose.translation[r]);
  return s;
}

}  // namespace detail

inline void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "gbuffers", ec);
  fs::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  std::ostringstream manifest;
  manifest << "# ntex dataset v1\n";
  KeyValues kv;
  d.config.write(kv);
  for (const auto& [key, value] : kv.entries()) manifest << "#! " << key << " = " << value << "\n";

  auto emit = [&](const std::vector<TrainingSample>& split, const char* name) {
    char stem[64];
    for (std::size_t i = 0; i < split.size(); ++i) {
      std::snprintf(stem, sizeof stem, "%s_%04zu", name, i);
      const std::string gpath = std::string("gbuffers/") + stem + ".ntgb";
      const std::string ipath = std::string("images/") + stem + ".ppm";
      {
        std::ofstream out(dir / gpath, std::ios::binary);
        if (!out) throw IoError("cannot write " + (dir / gpath).string());
        save_gbuffer(split[i].gbuffer, out);
      }
      {
        std::ofstream out(dir / ipath, std::ios::binary);
        if (!out) throw IoError("cannot write " + (dir / ipath).string());
        write_ppm(split[i].image, out);
      }
      manifest << name << ' ' << gpath << ' ' << ipath << detail::camera_fields(split[i].camera) << '\n';
    }
  };
  emit(d.train, "train");
  emit(d.test, "test");
  // Manifest last: its presence marks a complete dataset.
  std::ofstream out(dir / "manifest.txt");
  if (!out) throw IoError("cannot write " + (dir / "manifest.txt").string());
  out << manifest.str();
}

inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path.string());
  const auto root = manifest_path.parent_path();
  std::string line, config_text;
  std::vector<std::string> missing;
  Dataset d;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.rfind("#!", 0) == 0) {
      config_text += line.substr(2) + "\n";
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string split, gpath, ipath;
    Camera cam;
    ls >> split >> gpath >> ipath >> cam.fx >> cam.fy >> cam.cx >> cam.cy >> cam.width >> cam.height;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) ls >> cam.pose.rotation(r, c);
    }
    for (int r = 0; r < 3; ++r) ls >> cam.pose.translation[r];
    if (!ls) throw ParseError("malformed manifest entry", line_no);
    if (split != "train" && split != "test") throw ParseError("unknown split '" + split + "'", line_no);
    std::ifstream gin(root / gpath, std::ios::binary);
    std::ifstream iin(root / ipath, std::ios::binary);
    if (!gin) missing.push_back((root / gpath).string());
    if (!iin) missing.push_back((root / ipath).string());
    if (!gin || !iin) continue;
    TrainingSample s;
    s.camera = cam;
    s.gbuffer = load_gbuffer(gin);
    s.image = read_ppm(iin);
    (split == "train" ? d.train : d.test).push_back(std::move(s));
  }
  if (!missing.empty()) {
    std::string msg = "dataset files missing:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw IoError(msg);
  }
  d.config = SyntheticSceneConfig::read(KeyValues::parse(config_text));
  return d;
}

}  // namespace ntex
