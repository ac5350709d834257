#pragma once

#include <array>
#include <string>
#include <vector>

#include "vlora/io.hpp"
#include "vlora/losses.hpp"
#include "vlora/lora.hpp"
#include "vlora/model.hpp"
#include "vlora/synth.hpp"

namespace vlora::config {

using io::json;

constexpr int kSchemaVersion = 1;

namespace detail {

inline void check_keys(const json& j, const std::string& ctx,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(ctx + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (item.key() == a) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError("unknown key '" + item.key() + "' in " + ctx);
  }
}

template <typename U>
U get_or(const json& j, const char* key, U fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<U>();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

struct MotionSpec {
  std::string type = "sweep";  // sweep | lateral | explicit
  geometry::Vec3 step{0.05, 0.01, 0.0};
  geometry::Vec3 rotation{0, 0, 0};
  int period = 16;
  double jitter = 0.0;
  double rot_jitter = 0.0;
  uint64_t seed = 0;
  std::vector<std::array<double, 6>> deltas;  // explicit: [aa, t] per step

  std::vector<geometry::Pose> expand(int n_frames) const {
    if (type == "explicit") {
      if (static_cast<int>(deltas.size()) != n_frames - 1)
        throw ConfigError("motion: explicit deltas must have n_frames - 1 entries");
      std::vector<geometry::Pose> out;
      for (const auto& d : deltas)
        out.push_back(geometry::axis_angle_to_pose({d[0], d[1], d[2]}, {d[3], d[4], d[5]}));
      return out;
    }
    if (type == "lateral") return synth::lateral_motion(n_frames, step, rotation, jitter, seed);
    if (type == "sweep") return synth::sweep_motion(n_frames, step, period, jitter, seed, rot_jitter);
    throw ConfigError("motion: type must be sweep|lateral|explicit, got '" + type + "'");
  }

  json to_json() const {
    json j{{"type", type},
           {"step", {step[0], step[1], step[2]}},
           {"rotation", {rotation[0], rotation[1], rotation[2]}},
           {"period", period},
           {"jitter", jitter},
           {"rot_jitter", rot_jitter},
           {"seed", seed}};
    if (!deltas.empty()) {
      json d = json::array();
      for (const auto& x : deltas) d.push_back(x);
      j["deltas"] = d;
    }
    return j;
  }

  static MotionSpec from_json(const json& j) {
    detail::check_keys(j, "motion",
                       {"type", "step", "rotation", "period", "jitter", "rot_jitter", "seed", "deltas"});
    MotionSpec m;
    m.type = detail::get_or<std::string>(j, "type", m.type);
    if (j.contains("step")) {
      auto v = j.at("step").get<std::vector<double>>();
      if (v.size() != 3) throw ConfigError("motion.step must have 3 entries");
      m.step = {v[0], v[1], v[2]};
    }
    if (j.contains("rotation")) {
      auto v = j.at("rotation").get<std::vector<double>>();
      if (v.size() != 3) throw ConfigError("motion.rotation must have 3 entries");
      m.rotation = {v[0], v[1], v[2]};
    }
    m.period = detail::get_or<int>(j, "period", m.period);
    m.jitter = detail::get_or<double>(j, "jitter", m.jitter);
    m.rot_jitter = detail::get_or<double>(j, "rot_jitter", m.rot_jitter);
    m.seed = detail::get_or<uint64_t>(j, "seed", m.seed);
    if (j.contains("deltas"))
      for (const auto& d : j.at("deltas")) {
        auto v = d.get<std::vector<double>>();
        if (v.size() != 6) throw ConfigError("motion.deltas entries must have 6 values");
        m.deltas.push_back({v[0], v[1], v[2], v[3], v[4], v[5]});
      }
    return m;
  }
};

struct SceneSpec {
  std::string kind = "terrain";
  int width = 64;
  int height = 64;
  double focal = 70.0;
  int n_frames = 24;
  uint64_t texture_seed = 7;
  double brightness_jitter = 0.1;
  double base_distance = 4.0;
  double terrain_amplitude = 0.5;
  double texture_detail = 1.0;
  MotionSpec motion;

  synth::SceneConfig build() const {
    synth::SceneConfig cfg;
    cfg.kind = synth::scene_kind_from_string(kind);
    cfg.intrinsics = {focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height};
    cfg.n_frames = n_frames;
    cfg.texture_seed = texture_seed;
    cfg.brightness_jitter = brightness_jitter;
    cfg.base_distance = base_distance;
    cfg.terrain_amplitude = terrain_amplitude;
    cfg.texture_detail = texture_detail;
    cfg.motion = motion.expand(n_frames);
    cfg.validate();
    return cfg;
  }

  json to_json() const {
    return json{{"kind", kind},
                {"width", width},
                {"height", height},
                {"focal", focal},
                {"n_frames", n_frames},
                {"texture_seed", texture_seed},
                {"brightness_jitter", brightness_jitter},
                {"base_distance", base_distance},
                {"terrain_amplitude", terrain_amplitude},
                {"texture_detail", texture_detail},
                {"motion", motion.to_json()}};
  }

  static SceneSpec from_json(const json& j) {
    detail::check_keys(j, "scene",
                       {"kind", "width", "height", "focal", "n_frames", "texture_seed",
                        "brightness_jitter", "base_distance", "terrain_amplitude",
                        "texture_detail", "motion"});
    SceneSpec s;
    s.kind = detail::get_or<std::string>(j, "kind", s.kind);
    synth::scene_kind_from_string(s.kind);  // validate early
    s.width = detail::get_or<int>(j, "width", s.width);
    s.height = detail::get_or<int>(j, "height", s.height);
    s.focal = detail::get_or<double>(j, "focal", s.focal);
    s.n_frames = detail::get_or<int>(j, "n_frames", s.n_frames);
    s.texture_seed = detail::get_or<uint64_t>(j, "texture_seed", s.texture_seed);
    s.brightness_jitter = detail::get_or<double>(j, "brightness_jitter", s.brightness_jitter);
    s.base_distance = detail::get_or<double>(j, "base_distance", s.base_distance);
    s.terrain_amplitude = detail::get_or<double>(j, "terrain_amplitude", s.terrain_amplitude);
    s.texture_detail = detail::get_or<double>(j, "texture_detail", s.texture_detail);
    if (j.contains("motion")) s.motion = MotionSpec::from_json(j.at("motion"));
    return s;
  }
};

struct ModelSpec {
  model::DepthNetworkConfig depth;
  model::PoseNetConfig pose;
  uint64_t seed = 1;

  json to_json() const {
    return json{{"blocks", depth.encoder.blocks},
                {"embed_dim", depth.encoder.embed_dim},
                {"heads", depth.encoder.heads},
                {"patch_size", depth.encoder.patch_size},
                {"mlp_ratio", depth.encoder.mlp_ratio},
                {"pos_embed_std", depth.encoder.pos_embed_std},
                {"image_width", depth.encoder.image_width},
                {"image_height", depth.encoder.image_height},
                {"decoder_channels", depth.decoder.channels},
                {"decoder_head_channels", depth.decoder.head_channels},
                {"tap_blocks", depth.decoder.tap_blocks},
                {"min_depth", depth.min_depth},
                {"max_depth", depth.max_depth},
                {"pose_channels", pose.base_channels},
                {"pose_output_scale", pose.output_scale},
                {"seed", seed}};
  }

  static ModelSpec from_json(const json& j) {
    detail::check_keys(j, "model",
                       {"blocks", "embed_dim", "heads", "patch_size", "mlp_ratio", "pos_embed_std",
                        "image_width",
                        "image_height", "decoder_channels", "decoder_head_channels", "tap_blocks",
                        "min_depth", "max_depth", "pose_channels", "pose_output_scale", "seed"});
    ModelSpec m;
    m.depth.encoder.blocks = detail::get_or<int>(j, "blocks", m.depth.encoder.blocks);
    m.depth.encoder.embed_dim = detail::get_or<int>(j, "embed_dim", m.depth.encoder.embed_dim);
    m.depth.encoder.heads = detail::get_or<int>(j, "heads", m.depth.encoder.heads);
    m.depth.encoder.patch_size = detail::get_or<int>(j, "patch_size", m.depth.encoder.patch_size);
    m.depth.encoder.mlp_ratio = detail::get_or<double>(j, "mlp_ratio", m.depth.encoder.mlp_ratio);
    m.depth.encoder.pos_embed_std =
        detail::get_or<double>(j, "pos_embed_std", m.depth.encoder.pos_embed_std);
    m.depth.encoder.image_width = detail::get_or<int>(j, "image_width", m.depth.encoder.image_width);
    m.depth.encoder.image_height =
        detail::get_or<int>(j, "image_height", m.depth.encoder.image_height);
    m.depth.decoder.channels = detail::get_or<int>(j, "decoder_channels", m.depth.decoder.channels);
    m.depth.decoder.head_channels =
        detail::get_or<int>(j, "decoder_head_channels", m.depth.decoder.head_channels);
    m.depth.decoder.tap_blocks =
        detail::get_or<std::vector<int>>(j, "tap_blocks", m.depth.decoder.tap_blocks);
    m.depth.min_depth = detail::get_or<double>(j, "min_depth", m.depth.min_depth);
    m.depth.max_depth = detail::get_or<double>(j, "max_depth", m.depth.max_depth);
    m.pose.base_channels = detail::get_or<int>(j, "pose_channels", m.pose.base_channels);
    m.pose.output_scale = detail::get_or<double>(j, "pose_output_scale", m.pose.output_scale);
    m.seed = detail::get_or<uint64_t>(j, "seed", m.seed);
    return m;
  }
};

struct LoraSpec {
  bool enabled = true;
  lora::LoraInjectionSpec injection;

  json to_json() const {
    return json{{"enabled", enabled},
                {"targets", std::vector<std::string>(injection.targets.begin(), injection.targets.end())},
                {"ranks", injection.rank_vector.ranks},
                {"scale", injection.scale},
                {"init_std", injection.init_std}};
  }

  static LoraSpec from_json(const json& j) {
    detail::check_keys(j, "lora", {"enabled", "targets", "ranks", "scale", "init_std"});
    LoraSpec s;
    s.enabled = detail::get_or<bool>(j, "enabled", s.enabled);
    if (j.contains("targets")) {
      s.injection.targets.clear();
      for (const auto& t : j.at("targets")) s.injection.targets.insert(t.get<std::string>());
    }
    if (j.contains("ranks"))
      s.injection.rank_vector = lora::RankVector(j.at("ranks").get<std::vector<int>>());
    s.injection.scale = detail::get_or<double>(j, "scale", s.injection.scale);
    s.injection.init_std = detail::get_or<double>(j, "init_std", s.injection.init_std);
    s.injection.validate();
    return s;
  }
};

struct LossSpec {
  losses::LossConfig cfg;

  json to_json() const {
    return json{{"ssim_window", cfg.ms_ssim.ssim.window},
                {"ssim_k1", cfg.ms_ssim.ssim.k1},
                {"ssim_k2", cfg.ms_ssim.ssim.k2},
                {"dynamic_range", cfg.ms_ssim.ssim.dynamic_range},
                {"ms_scales", cfg.ms_ssim.scales},
                {"ms_weights", cfg.ms_ssim.weights},
                {"alpha", cfg.reproj.alpha},
                {"beta", cfg.reproj.beta},
                {"smoothness_weight", cfg.reproj.smoothness_weight},
                {"per_pixel_min", cfg.reproj.per_pixel_min},
                {"loss_scales", cfg.loss_scales}};
  }

  static LossSpec from_json(const json& j) {
    detail::check_keys(j, "loss",
                       {"ssim_window", "ssim_k1", "ssim_k2", "dynamic_range", "ms_scales",
                        "ms_weights", "alpha", "beta", "smoothness_weight", "per_pixel_min",
                        "loss_scales"});
    LossSpec s;
    s.cfg.ms_ssim.ssim.window = detail::get_or<int>(j, "ssim_window", s.cfg.ms_ssim.ssim.window);
    s.cfg.ms_ssim.ssim.k1 = detail::get_or<double>(j, "ssim_k1", s.cfg.ms_ssim.ssim.k1);
    s.cfg.ms_ssim.ssim.k2 = detail::get_or<double>(j, "ssim_k2", s.cfg.ms_ssim.ssim.k2);
    s.cfg.ms_ssim.ssim.dynamic_range =
        detail::get_or<double>(j, "dynamic_range", s.cfg.ms_ssim.ssim.dynamic_range);
    s.cfg.ms_ssim.scales = detail::get_or<int>(j, "ms_scales", s.cfg.ms_ssim.scales);
    s.cfg.ms_ssim.weights =
        detail::get_or<std::vector<double>>(j, "ms_weights", s.cfg.ms_ssim.weights);
    s.cfg.reproj.alpha = detail::get_or<double>(j, "alpha", s.cfg.reproj.alpha);
    s.cfg.reproj.beta = detail::get_or<double>(j, "beta", s.cfg.reproj.beta);
    s.cfg.reproj.smoothness_weight =
        detail::get_or<double>(j, "smoothness_weight", s.cfg.reproj.smoothness_weight);
    s.cfg.reproj.per_pixel_min =
        detail::get_or<bool>(j, "per_pixel_min", s.cfg.reproj.per_pixel_min);
    s.cfg.loss_scales = detail::get_or<int>(j, "loss_scales", s.cfg.loss_scales);
    s.cfg.validate();
    return s;
  }
};

struct TrainSpec {
  double lr = 1e-4;
  int lr_decay_every = 10;     // epochs
  double lr_decay_factor = 0.1;
  int epochs = 50;
  int batch_size = 4;          // desk-scale default; the full-scale run used 12
  uint64_t seed = 42;
  std::vector<int> frame_offsets{-1, 1};
  double val_fraction = 0.1;
  std::string precision = "f64";  // f32 | f64

  void validate() const {
    if (lr <= 0) throw ConfigError("train: lr must be positive");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (lr_decay_every < 1) throw ConfigError("train: lr_decay_every must be >= 1");
    if (frame_offsets.empty()) throw ConfigError("train: frame_offsets must not be empty");
    for (int o : frame_offsets)
      if (o == 0) throw ConfigError("train: frame offset 0 is the target itself");
    if (val_fraction < 0 || val_fraction > 0.5)
      throw ConfigError("train: val_fraction must be in [0, 0.5]");
    if (precision != "f32" && precision != "f64")
      throw ConfigError("train: precision must be f32 or f64");
  }

  double lr_at_epoch(int epoch) const {
    return lr * std::pow(lr_decay_factor, epoch / lr_decay_every);
  }

  json to_json() const {
    return json{{"lr", lr},
                {"lr_decay_every", lr_decay_every},
                {"lr_decay_factor", lr_decay_factor},
                {"epochs", epochs},
                {"batch_size", batch_size},
                {"seed", seed},
                {"frame_offsets", frame_offsets},
                {"val_fraction", val_fraction},
                {"precision", precision}};
  }

  static TrainSpec from_json(const json& j) {
    detail::check_keys(j, "train",
                       {"lr", "lr_decay_every", "lr_decay_factor", "epochs", "batch_size", "seed",
                        "frame_offsets", "val_fraction", "precision"});
    TrainSpec s;
    s.lr = detail::get_or<double>(j, "lr", s.lr);
    s.lr_decay_every = detail::get_or<int>(j, "lr_decay_every", s.lr_decay_every);
    s.lr_decay_factor = detail::get_or<double>(j, "lr_decay_factor", s.lr_decay_factor);
    s.epochs = detail::get_or<int>(j, "epochs", s.epochs);
    s.batch_size = detail::get_or<int>(j, "batch_size", s.batch_size);
    s.seed = detail::get_or<uint64_t>(j, "seed", s.seed);
    s.frame_offsets = detail::get_or<std::vector<int>>(j, "frame_offsets", s.frame_offsets);
    s.val_fraction = detail::get_or<double>(j, "val_fraction", s.val_fraction);
    s.precision = detail::get_or<std::string>(j, "precision", s.precision);
    s.validate();
    return s;
  }
};

struct ExperimentConfig {
  SceneSpec scene;
  ModelSpec model;
  LoraSpec lora;
  LossSpec loss;
  TrainSpec train;

  json to_json() const {
    return json{{"schema_version", kSchemaVersion}, {"scene", scene.to_json()},
                {"model", model.to_json()},         {"lora", lora.to_json()},
                {"loss", loss.to_json()},           {"train", train.to_json()}};
  }

  static ExperimentConfig from_json(const json& j) {
    detail::check_keys(j, "config", {"schema_version", "scene", "model", "lora", "loss", "train"});
    const int version = detail::get_or<int>(j, "schema_version", -1);
    if (version != kSchemaVersion)
      throw ConfigError("config: schema_version must be " + std::to_string(kSchemaVersion) +
                        " (got " + std::to_string(version) + ")");
    ExperimentConfig c;
    if (j.contains("scene")) c.scene = SceneSpec::from_json(j.at("scene"));
    if (j.contains("model")) c.model = ModelSpec::from_json(j.at("model"));
    if (j.contains("lora")) c.lora = LoraSpec::from_json(j.at("lora"));
    if (j.contains("loss")) c.loss = LossSpec::from_json(j.at("loss"));
    if (j.contains("train")) c.train = TrainSpec::from_json(j.at("train"));
    return c;
  }

  static ExperimentConfig load(const std::string& path) {
    return from_json(io::read_json(path));
  }

  std::string canonical_string() const { return to_json().dump(); }
  uint64_t hash() const { return io::fnv1a(canonical_string()); }
};

}  // namespace vlora::config
