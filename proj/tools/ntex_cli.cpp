// ntex: command-line front end for dataset generation, training, rendering,
// evaluation, ablations, scene edits and gradient checks.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "ntex/eval.hpp"
#include "ntex/gradcheck_suite.hpp"

namespace fs = std::filesystem;
using namespace ntex;

namespace {

constexpr const char* kConfigHelp = R"(Config files hold one "key = value" per line; '#' starts a comment.
Later --set options override the file.

Scene keys:    kind (sphere|torus|vase_profile), tessellation, proxy_tessellation,
               albedo (checker|gradient|image), checker_cells, albedo_image,
               ka, kd, ks, shininess, light_dir (x,y,z), width, height,
               n_train, n_test, radius, fov, seed, supersample
Model keys:    channels, net_features (comma list), kernel, stride, leaky_slope,
               per_pixel, texture_resolution, texture_levels, use_sh, model_seed
Training keys: learning_rate, beta1, beta2, epsilon, steps, crop_min, crop_max,
               lambda_reg, intermediate_weight, train_seed)";

struct ConfigOptions {
  std::string file;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", file, "key/value config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "override one key, as key=value (repeatable)");
  }

  KeyValues load() const {
    KeyValues kv;
    if (!file.empty()) {
      std::ifstream in(file);
      if (!in) throw IoError("cannot open config " + file);
      kv = KeyValues::parse(in);
    }
    for (const auto& o : overrides) {
      if (o.find('=') == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
      kv.merge(KeyValues::parse(o));
    }
    return kv;
  }
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_image(const Image& img, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_ppm(img, out);
}

fs::path frame_path(const fs::path& dir, std::size_t i) {
  char name[32];
  std::snprintf(name, sizeof name, "frame_%04zu.ppm", i);
  return dir / name;
}

// ---------------------------------------------------------------------------

int gen_data(const ConfigOptions& cfg, const std::string& out, std::optional<std::uint64_t> seed) {
  auto kv = cfg.load();
  if (seed) kv.set("seed", static_cast<long long>(*seed));
  const auto scene = SyntheticSceneConfig::read(kv);
  const Dataset d = make_dataset(scene);
  write_dataset(d, out);
  std::printf("wrote %zu train and %zu test views to %s\n", d.train.size(), d.test.size(), out.c_str());
  return 0;
}

int train_cmd(const ConfigOptions& cfg, const std::string& data, const std::string& out, const std::string& loss_csv,
              std::size_t log_every) {
  const auto kv = cfg.load();
  const Dataset d = load_dataset(data);
  const auto model_config = ModelConfig::read(kv);
  const auto train_config = TrainConfig::read(kv);
  if (!model_config.network.per_pixel) d.config.validate_for_network(model_config.network.depth());
  const auto model_seed = static_cast<std::uint64_t>(kv.get_int("model_seed", 1));

  Checkpoint<float> ck{Model<float>::create(model_config, {0}, model_seed), train_config, 0};
  const auto curve = train(d.train, ck.model, train_config, [&](const LossRecord& r) {
    if (log_every && (r.step + 1) % log_every == 0) {
      std::printf("step %zu  loss %.5f  l1 %.5f\n", r.step + 1, r.total, r.l1);
      std::fflush(stdout);
    }
  });
  ck.step = curve.size();
  save_checkpoint_file(ck, out);
  if (!loss_csv.empty()) {
    std::ofstream csv(loss_csv);
    if (!csv) throw IoError("cannot write " + loss_csv);
    write_loss_csv(curve, csv);
  }
  std::printf("saved checkpoint %s after %zu steps\n", out.c_str(), curve.size());
  return 0;
}

int render_cmd(const std::string& checkpoint, const std::string& data, const std::string& out,
               const std::string& split) {
  const auto ck = load_checkpoint_file<float>(checkpoint);
  const Dataset d = load_dataset(data);
  const auto& samples = split == "train" ? d.train : d.test;
  ensure_dir(out);
  for (std::size_t i = 0; i < samples.size(); ++i) write_image(render_gbuffer(ck.model, samples[i].gbuffer), frame_path(out, i));
  std::printf("rendered %zu %s views to %s\n", samples.size(), split.c_str(), out.c_str());
  return 0;
}

int evaluate_cmd(const std::string& checkpoint, const std::string& data, const std::string& csv_path,
                 bool baseline) {
  const auto ck = load_checkpoint_file<float>(checkpoint);
  const Dataset d = load_dataset(data);
  KeyValues echo;
  ck.model.config.write(echo);
  ck.train_config.write(echo);
  auto report = evaluate(ck.model, d.test);
  report.config = echo;
  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    if (!out) throw IoError("cannot write " + csv_path);
    write_eval_csv(report, out);
  }
  std::printf("mean mse_255 %.4f over %zu test views\n", report.mean, report.per_frame.size());
  if (baseline) std::printf("average-color baseline %.4f\n", evaluate_average_color_baseline(d).mean);
  return 0;
}

int ablate_cmd(const ConfigOptions& cfg, const std::string& axis, const std::vector<double>& values,
               const std::string& out) {
  AblationSpec spec;
  spec.axis = parse_ablation_axis(axis);
  spec.values = values;
  spec.base = ExperimentConfig::read(cfg.load());
  const auto rows = run_ablation(spec, [](const std::string& line) {
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
  });
  if (out.empty()) {
    write_ablation_csv(spec, rows, std::cout);
  } else {
    std::ofstream csv(out);
    if (!csv) throw IoError("cannot write " + out);
    write_ablation_csv(spec, rows, csv);
  }
  return 0;
}

int edit_cmd(const ConfigOptions& cfg, const std::string& checkpoint, const std::string& script,
             const std::string& mesh_path, const std::string& out, int frames) {
  const auto scene_config = SyntheticSceneConfig::read(cfg.load());
  const auto ck = load_checkpoint_file<float>(checkpoint);
  Scene scene = proxy_scene(scene_config);
  if (!mesh_path.empty()) {
    std::ifstream in(mesh_path);
    if (!in) throw IoError("cannot open mesh " + mesh_path);
    scene = Scene::single(std::make_shared<const Mesh>(load_mesh(in)));
  }
  std::ifstream in(script);
  if (!in) throw IoError("cannot open edit script " + script);
  const auto edits = parse_edit_script(in);
  for (const auto& e : edits) scene = apply_edit(scene, e);

  const Intrinsics k{scene_config.width, scene_config.height, scene_config.fov_deg};
  const auto cams = smooth_trajectory(frames, scene_config.radius, k);
  ensure_dir(out);
  for (std::size_t i = 0; i < cams.size(); ++i) write_image(render_novel_view(ck.model, scene, cams[i]), frame_path(out, i));
  std::printf("applied %zu edits, %zu instances, rendered %zu frames to %s\n", edits.size(), scene.instances.size(),
              cams.size(), out.c_str());
  return 0;
}

int grad_check(std::uint64_t seed) {
  const auto results = run_gradient_suite(seed);
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.max_relative_error < kGradCheckTolerance;
    ok = ok && pass;
    std::printf("%-28s %.3e %s\n", r.op.c_str(), r.max_relative_error, pass ? "ok" : "FAIL");
  }
  std::printf("%s (tolerance %.0e)\n", ok ? "all gradients match" : "gradient mismatch", kGradCheckTolerance);
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deferred neural rendering with neural textures"};
  app.footer(kConfigHelp);
  app.require_subcommand(1);

  ConfigOptions gen_cfg, train_cfg, ablate_cfg, edit_cfg;
  std::string out, data, checkpoint, loss_csv, split = "test", csv_path, axis, script, mesh;
  std::optional<std::uint64_t> seed;
  std::uint64_t check_seed = 2024;
  std::size_t log_every = 100;
  std::vector<double> values;
  int frames = 60;
  bool baseline = false;

  auto* gen = app.add_subcommand("gen-data", "render a synthetic Phong dataset");
  gen_cfg.attach(gen);
  gen->add_option("-o,--out", out, "output directory")->required();
  gen->add_option("--seed", seed, "dataset seed (overrides the config)");

  auto* tr = app.add_subcommand("train", "train a texture pyramid and renderer");
  train_cfg.attach(tr);
  tr->add_option("-d,--data", data, "dataset manifest.txt")->required();
  tr->add_option("-o,--out", out, "checkpoint path")->required();
  tr->add_option("--loss-csv", loss_csv, "write the per-step loss curve");
  tr->add_option("--log-every", log_every, "print progress every N steps (0 = quiet)");

  auto* ren = app.add_subcommand("render", "render dataset G-buffers with a checkpoint");
  ren->add_option("-k,--checkpoint", checkpoint, "checkpoint path")->required();
  ren->add_option("-d,--data", data, "dataset manifest.txt")->required();
  ren->add_option("-o,--out", out, "output directory for PPM frames")->required();
  ren->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));

  auto* ev = app.add_subcommand("evaluate", "mse_255 of a checkpoint on the test split");
  ev->add_option("-k,--checkpoint", checkpoint, "checkpoint path")->required();
  ev->add_option("-d,--data", data, "dataset manifest.txt")->required();
  ev->add_option("--csv", csv_path, "write the per-frame report");
  ev->add_flag("--baseline", baseline, "also score the average-color texture baseline");

  auto* ab = app.add_subcommand("ablate", "train one model per axis value and compare");
  ablate_cfg.attach(ab);
  ab->add_option("--axis", axis,
                 "texture_resolution|hierarchy_on_off|train_set_size|proxy_tessellation|per_pixel_vs_unet|sh_on_off")
      ->required();
  ab->add_option("--values", values, "axis values")->required()->delimiter(',');
  ab->add_option("-o,--out", out, "CSV path (default stdout)");

  auto* ed = app.add_subcommand("edit", "apply an edit script and render a trajectory");
  edit_cfg.attach(ed);
  ed->add_option("-k,--checkpoint", checkpoint, "checkpoint path")->required();
  ed->add_option("-s,--script", script,
                 "edit script: translate|rotate|duplicate|remove <id> ... (angles in degrees)")
      ->required();
  ed->add_option("--mesh", mesh, "OBJ mesh instead of the configured parametric proxy");
  ed->add_option("-o,--out", out, "output directory for PPM frames")->required();
  ed->add_option("--frames", frames, "trajectory length")->check(CLI::Range(2, 100000));

  auto* gc = app.add_subcommand("grad-check", "finite-difference check of every differentiable op");
  gc->add_option("--seed", check_seed, "input seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return gen_data(gen_cfg, out, seed);
    if (*tr) return train_cmd(train_cfg, data, out, loss_csv, log_every);
    if (*ren) return render_cmd(checkpoint, data, out, split);
    if (*ev) return evaluate_cmd(checkpoint, data, csv_path, baseline);
    if (*ab) return ablate_cmd(ablate_cfg, axis, values, out);
    if (*ed) return edit_cmd(edit_cfg, checkpoint, script, mesh, out, frames);
    if (*gc) return grad_check(check_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
