// Command-line surface for the self-supervised depth adaptation workbench:
// synthetic dataset generation, training, evaluation, gradient checking, and
// single-image warping. Machine-readable results go to stdout as key=value
// lines; diagnostics go to stderr.
//
// Exit codes: 0 success, 1 check failed, 2 configuration error, 3 I/O error,
// 4 corrupted or mismatched checkpoint.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "vlora/core/gradcheck.hpp"
#include "vlora/trainer.hpp"

namespace fs = std::filesystem;
using namespace vlora;

namespace {

int parse_thread_cap() {
  // Caps any internal parallelism; the pipeline is single-threaded today, so
  // this is honored trivially and kept for forward compatibility.
  const char* env = std::getenv("VLORA_THREADS");
  if (!env) return 1;
  const int v = std::atoi(env);
  return v >= 1 ? v : 1;
}

config::ExperimentConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  return config::ExperimentConfig::load(path);
}

// ---- synth ----

int cmd_synth(const std::string& config_path, const std::string& out_dir, int64_t seed) {
  auto cfg = load_config(config_path);
  if (seed >= 0) cfg.scene.texture_seed = static_cast<uint64_t>(seed);
  auto scene_cfg = cfg.scene.build();
  auto scene = synth::render_scene(scene_cfg);
  synth::export_dataset(scene, out_dir, cfg.to_json());
  std::printf("manifest=%s\n", (fs::path(out_dir) / "manifest.json").c_str());
  std::printf("frames=%zu\n", scene.frames.size());
  return 0;
}

// ---- train ----

template <typename T>
int run_training(config::ExperimentConfig cfg, const std::string& data_dir,
                 const std::string& out_dir, bool resume) {
  auto dataset = synth::load_dataset(data_dir);
  train::Trainer<T> trainer(cfg, dataset);
  auto result = trainer.fit(out_dir, resume);
  std::printf("epochs=%d\n", result.epochs_run);
  std::printf("best_val_abs_rel=%.9g\n", result.best_val_abs_rel);
  std::printf("best_checkpoint=%s\n", result.best_checkpoint.c_str());
  std::printf("last_checkpoint=%s\n", result.last_checkpoint.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, int64_t seed, bool resume, int scales) {
  auto cfg = load_config(config_path);
  if (seed >= 0) cfg.train.seed = static_cast<uint64_t>(seed);
  if (scales > 0) cfg.loss.cfg.loss_scales = scales;
  if (cfg.train.precision == "f32") return run_training<float>(cfg, data_dir, out_dir, resume);
  return run_training<double>(cfg, data_dir, out_dir, resume);
}

// ---- eval ----

template <typename T>
int run_eval(const config::ExperimentConfig& cfg, const std::string& checkpoint,
             const std::string& data_dir, const std::string& out_dir, metrics::Alignment align,
             bool export_depth) {
  auto dataset = synth::load_dataset(data_dir);
  train::Trainer<T> trainer(cfg, dataset);
  auto params = trainer.pipeline().params();
  train::load_checkpoint<T>(checkpoint, params);
  auto result = trainer.evaluate(align, export_depth);

  fs::create_directories(out_dir);
  {
    std::FILE* f = std::fopen((fs::path(out_dir) / "depth_metrics.csv").string().c_str(), "wb");
    if (!f) throw IoError("eval: cannot write depth_metrics.csv in " + out_dir);
    std::fputs("abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3\n", f);
    std::fprintf(f, "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", result.depth.abs_rel,
                 result.depth.sq_rel, result.depth.rmse, result.depth.rmse_log,
                 result.depth.delta1, result.depth.delta2, result.depth.delta3);
    std::fclose(f);
  }
  {
    std::FILE* f = std::fopen((fs::path(out_dir) / "ate.csv").string().c_str(), "wb");
    if (!f) throw IoError("eval: cannot write ate.csv in " + out_dir);
    const char* align_name = align == metrics::Alignment::kNone
                                 ? "none"
                                 : (align == metrics::Alignment::kRigid ? "rigid" : "similarity");
    std::fputs("align,ate,n_positions\n", f);
    std::fprintf(f, "%s,%.9g,%d\n", align_name, result.ate, result.frames_evaluated);
    std::fclose(f);
  }
  if (export_depth)
    for (size_t i = 0; i < result.predicted_depths.size(); ++i) {
      char name[48];
      std::snprintf(name, sizeof name, "depth_pred_%06zu.pfm", i);
      io::write_pfm((fs::path(out_dir) / name).string(), result.predicted_depths[i]);
    }

  std::printf("abs_rel=%.9g\n", result.depth.abs_rel);
  std::printf("sq_rel=%.9g\n", result.depth.sq_rel);
  std::printf("rmse=%.9g\n", result.depth.rmse);
  std::printf("rmse_log=%.9g\n", result.depth.rmse_log);
  std::printf("delta1=%.9g\n", result.depth.delta1);
  std::printf("ate=%.9g\n", result.ate);
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, std::string out_dir,
             const std::string& align_str, bool export_depth) {
  uint32_t scalar_code = 8;
  auto cfg = train::read_checkpoint_config(checkpoint, &scalar_code);
  if (out_dir.empty()) out_dir = fs::path(checkpoint).parent_path().string();
  if (out_dir.empty()) out_dir = ".";
  const auto align = metrics::alignment_from_string(align_str);
  if (scalar_code == 4)
    return run_eval<float>(cfg, checkpoint, data_dir, out_dir, align, export_depth);
  return run_eval<double>(cfg, checkpoint, data_dir, out_dir, align, export_depth);
}

// ---- gradcheck ----

GradCheckResult gradcheck_lora(Rng& rng) {
  lora::LoraLinear<double> layer;
  layer.base_weight = Var<double>(Tensor<double>::randn({6, 5}, rng), false);
  layer.adapter = lora::make_adapter<double>(6, 5, 2, rng);
  for (int64_t i = 0; i < layer.adapter.up.size(); ++i)
    layer.adapter.up.value()[i] = rng.normal(0, 0.3);
  auto x = Var<double>(Tensor<double>::randn({4, 5}, rng), true);
  auto build = [&] {
    auto y = lora::lora_forward(layer, x);
    return mean_all(y * y);
  };
  return check_gradients<double>(
      build, {{"down", layer.adapter.down}, {"up", layer.adapter.up}, {"x", x}}, rng, 20);
}

GradCheckResult gradcheck_sampler(Rng& rng) {
  auto src = Var<double>(Tensor<double>::rand_uniform({3, 9, 11}, rng), true);
  Tensor<double> coords({2, 9, 11});
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 11; ++x) {
      coords.at(0, y, x) = rng.uniform(0.7, 9.3);
      coords.at(1, y, x) = rng.uniform(0.7, 7.3);
    }
  auto grid_var = Var<double>(coords, true);
  auto build = [&] {
    geometry::PixelGrid<double> grid{grid_var, Tensor<double>::ones({9, 11})};
    auto out = geometry::bilinear_sample(src, grid);
    return mean_all(out * out);
  };
  return check_gradients<double>(build, {{"source", src}, {"coords", grid_var}}, rng, 25);
}

GradCheckResult gradcheck_warp(Rng& rng) {
  geometry::CameraIntrinsics K{30, 30, 4.5, 3.5, 10, 8};
  Tensor<double> src({3, 8, 10});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 10; ++x)
        src.at(c, y, x) = 0.5 + 0.3 * std::sin(0.8 * x + 1.1 * y + 2 * c);
  auto depth = Var<double>(Tensor<double>::rand_uniform({8, 10}, rng, 2.0, 3.0), true);
  auto aa = Var<double>(Tensor<double>::randn({3}, rng, 0.02), true);
  auto tr = Var<double>(Tensor<double>::randn({3}, rng, 0.03), true);
  Tensor<double> interior({3, 8, 10});
  for (int c = 0; c < 3; ++c)
    for (int y = 1; y < 7; ++y)
      for (int x = 1; x < 9; ++x) interior.at(c, y, x) = 1.0;
  auto build = [&] {
    auto view = geometry::synthesize_view(constant(src), depth, K, geometry::rotation_var(aa), tr);
    return mean_all(view.image * constant(interior));
  };
  return check_gradients<double>(build, {{"depth", depth}, {"aa", aa}, {"t", tr}}, rng, 25);
}

GradCheckResult gradcheck_ms_ssim(Rng& rng) {
  losses::MsSsimConfig cfg;
  cfg.ssim.window = 5;
  cfg = losses::reduce_scales(cfg, 16, 16);
  auto make_img = [&](uint64_t salt) {
    Rng r = rng.fork(salt);
    Tensor<double> img({1, 16, 16});
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        img.at(0, y, x) = 0.5 + 0.25 * std::sin(0.5 * x + r.uniform(0, 6.28)) +
                          0.15 * std::cos(0.7 * y + r.uniform(0, 6.28));
    return img;
  };
  auto x = Var<double>(make_img(1), true);
  auto y = Var<double>(make_img(2), true);
  auto build = [&] { return losses::ms_ssim(x, y, cfg); };
  return check_gradients<double>(build, {{"x", x}, {"y", y}}, rng, 25);
}

GradCheckResult gradcheck_ssim(Rng& rng) {
  auto x = Var<double>(Tensor<double>::rand_uniform({1, 14, 14}, rng, 0.2, 0.8), true);
  auto y = Var<double>(Tensor<double>::rand_uniform({1, 14, 14}, rng, 0.2, 0.8), true);
  losses::SsimConfig cfg;
  cfg.window = 7;
  auto build = [&] { return losses::ssim(x, y, cfg).mean; };
  return check_gradients<double>(build, {{"x", x}, {"y", y}}, rng, 25);
}

GradCheckResult gradcheck_smoothness(Rng& rng) {
  auto d = Var<double>(Tensor<double>::rand_uniform({8, 8}, rng, 0.2, 0.8), true);
  Tensor<double> img = Tensor<double>::rand_uniform({3, 8, 8}, rng, 0.1, 0.9);
  auto build = [&] { return losses::edge_aware_smoothness(d, img); };
  return check_gradients<double>(build, {{"disparity", d}}, rng, 25);
}

GradCheckResult gradcheck_rodrigues(Rng& rng) {
  auto aa = Var<double>(Tensor<double>::randn({3}, rng, 0.5), true);
  auto m = Tensor<double>::randn({3, 3}, rng);
  auto build = [&] { return sum_all(geometry::rotation_var(aa) * constant(m)); };
  return check_gradients<double>(build, {{"axis_angle", aa}}, rng, 9);
}

int cmd_gradcheck(const std::string& component, int64_t seed) {
  static const std::vector<std::string> known = {"lora",   "sampler",    "warp",     "ms_ssim",
                                                 "ssim",   "smoothness", "rodrigues"};
  std::vector<std::string> to_run;
  if (component == "all") {
    to_run = known;
  } else if (std::find(known.begin(), known.end(), component) != known.end()) {
    to_run.push_back(component);
  } else {
    std::string names = "all";
    for (const auto& k : known) names += ", " + k;
    throw ConfigError("unknown gradcheck component '" + component + "'; valid: " + names);
  }
  Rng rng(seed >= 0 ? static_cast<uint64_t>(seed) : 7);
  bool all_ok = true;
  for (const auto& name : to_run) {
    GradCheckResult res;
    if (name == "lora") res = gradcheck_lora(rng);
    if (name == "sampler") res = gradcheck_sampler(rng);
    if (name == "warp") res = gradcheck_warp(rng);
    if (name == "ms_ssim") res = gradcheck_ms_ssim(rng);
    if (name == "ssim") res = gradcheck_ssim(rng);
    if (name == "smoothness") res = gradcheck_smoothness(rng);
    if (name == "rodrigues") res = gradcheck_rodrigues(rng);
    const bool ok = res.ok(1e-3);
    all_ok &= ok;
    std::printf("component=%s probes=%d max_rel_err=%.3e status=%s\n", name.c_str(), res.probes,
                res.max_rel_err, ok ? "pass" : "FAIL");
    if (!ok && !res.worst.empty()) std::fprintf(stderr, "worst probe: %s\n", res.worst.c_str());
  }
  return all_ok ? 0 : 1;
}

// ---- warp ----

int cmd_warp(const std::string& image_path, const std::string& depth_path,
             const std::string& pose_path, int pose_index, const std::string& intrinsics_path,
             const std::string& out_path, const std::string& target_path) {
  Tensor<double> image = io::read_png(image_path);
  Tensor<double> depth = io::read_pfm(depth_path);
  if (depth.min() <= 0.0)
    throw ConfigError("warp: depth map must be strictly positive (min = " +
                      std::to_string(depth.min()) + ")");
  auto poses = io::read_poses(pose_path);
  if (pose_index < 0 || pose_index >= static_cast<int>(poses.size()))
    throw ConfigError("warp: pose index " + std::to_string(pose_index) +
                      " out of range (file has " + std::to_string(poses.size()) + " lines)");
  auto K = io::intrinsics_from_json(io::read_json(intrinsics_path));
  if (depth.shape()[0] != K.height || depth.shape()[1] != K.width)
    throw ConfigError("warp: depth dimensions do not match intrinsics");

  auto view = geometry::synthesize_view(constant(image), constant(depth), K,
                                        poses[static_cast<size_t>(pose_index)]);
  io::write_png(out_path, view.image.value());
  fs::path mask_path = fs::path(out_path);
  mask_path.replace_extension();
  mask_path += "_mask.png";
  Tensor<double> mask3({3, K.height, K.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < K.height; ++y)
      for (int x = 0; x < K.width; ++x) mask3.at(c, y, x) = view.valid.at(y, x);
  io::write_png(mask_path.string(), mask3);
  std::printf("warped=%s\n", out_path.c_str());
  std::printf("mask=%s\n", mask_path.string().c_str());
  std::printf("valid_fraction=%.6g\n", view.valid.mean());
  if (!target_path.empty()) {
    Tensor<double> target = io::read_png(target_path);
    std::printf("psnr_db=%.6g\n", metrics::psnr(view.image.value(), target, &view.valid));
  }
  return 0;
}

int cmd_default_config(const std::string& out_path) {
  config::ExperimentConfig cfg;
  const std::string text = cfg.to_json().dump(2) + "\n";
  if (out_path.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot write " + out_path);
    out << text;
    std::printf("config=%s\n", out_path.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  (void)parse_thread_cap();
  CLI::App app{"vector-rank low-rank adaptation depth workbench"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, checkpoint, align = "similarity";
  std::string image_path, depth_path, pose_path, intrinsics_path, target_path, component;
  int64_t seed = -1;
  int scales = -1, pose_index = 0;
  bool resume = false, export_depth = false;

  auto* synth_cmd = app.add_subcommand("synth", "render a synthetic dataset to disk");
  synth_cmd->add_option("--config", config_path, "experiment config JSON")->required();
  synth_cmd->add_option("--out", out_dir, "output dataset directory")->required();
  synth_cmd->add_option("--seed", seed, "override scene texture seed");

  auto* train_cmd = app.add_subcommand("train", "run self-supervised training");
  train_cmd->add_option("--config", config_path, "experiment config JSON")->required();
  train_cmd->add_option("--data", data_dir, "dataset directory (from synth)")->required();
  train_cmd->add_option("--out", out_dir, "output directory for checkpoints and logs")->required();
  train_cmd->add_option("--seed", seed, "override training seed");
  train_cmd->add_option("--scales", scales, "pyramid scales entering the loss (1-4)");
  train_cmd->add_flag("--resume", resume, "continue from last.ckpt in --out");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint against ground truth");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
  eval_cmd->add_option("--out", out_dir, "output directory for CSVs (default: checkpoint dir)");
  eval_cmd->add_option("--align", align, "trajectory alignment: none|rigid|similarity");
  eval_cmd->add_flag("--export-depth", export_depth, "write per-frame predicted depth PFMs");

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  grad_cmd
      ->add_option("component", component,
                   "lora|sampler|warp|ms_ssim|ssim|smoothness|rodrigues|all")
      ->required();
  grad_cmd->add_option("--seed", seed, "probe seed");

  auto* warp_cmd = app.add_subcommand("warp", "synthesize a view from image+depth+pose");
  warp_cmd->add_option("--image", image_path, "source image PNG")->required();
  warp_cmd->add_option("--depth", depth_path, "target depth PFM")->required();
  warp_cmd->add_option("--pose-file", pose_path, "3x4 row-major motion lines (target->source)")
      ->required();
  warp_cmd->add_option("--pose-index", pose_index, "line to use (default 0)");
  warp_cmd->add_option("--intrinsics", intrinsics_path, "intrinsics JSON")->required();
  warp_cmd->add_option("--out", out_dir, "output PNG path")->required();
  warp_cmd->add_option("--target", target_path, "optional target PNG for PSNR");

  auto* defcfg_cmd = app.add_subcommand("default-config", "print or write the default config");
  defcfg_cmd->add_option("--out", out_dir, "write to file instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) return cmd_synth(config_path, out_dir, seed);
    if (train_cmd->parsed()) return cmd_train(config_path, data_dir, out_dir, seed, resume, scales);
    if (eval_cmd->parsed()) return cmd_eval(checkpoint, data_dir, out_dir, align, export_depth);
    if (grad_cmd->parsed()) return cmd_gradcheck(component, seed);
    if (warp_cmd->parsed())
      return cmd_warp(image_path, depth_path, pose_path, pose_index, intrinsics_path, out_dir,
                      target_path);
    if (defcfg_cmd->parsed()) return cmd_default_config(out_dir);
  } catch (const train::CheckpointError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return 4;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  } catch (const train::TrainError& e) {
    std::fprintf(stderr, "training aborted: %s\n", e.what());
    return 5;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
