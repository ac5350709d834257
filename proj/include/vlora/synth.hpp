#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "vlora/geometry.hpp"
#include "vlora/io.hpp"

namespace vlora::synth {

enum class SceneKind { kPlane, kTerrain };

inline SceneKind scene_kind_from_string(const std::string& s) {
  if (s == "plane") return SceneKind::kPlane;
  if (s == "terrain") return SceneKind::kTerrain;
  throw ConfigError("scene kind must be 'plane' or 'terrain', got '" + s + "'");
}

inline std::string to_string(SceneKind k) {
  return k == SceneKind::kPlane ? "plane" : "terrain";
}

struct SceneConfig {
  SceneKind kind = SceneKind::kTerrain;
  geometry::CameraIntrinsics intrinsics{70.0, 70.0, 31.5, 31.5, 64, 64};
  int n_frames = 8;
  std::vector<geometry::Pose> motion;  // camera-to-world deltas, n_frames - 1
  uint64_t texture_seed = 7;
  double brightness_jitter = 0.1;

  // surface placement along the optical axis (scene units)
  double base_distance = 4.0;
  double terrain_amplitude = 0.5;   // peak-to-mean height variation
  double texture_detail = 1.0;      // scales texture frequency content
  double shading_ambient = 0.35;

  void validate() const {
    intrinsics.validate();
    if (n_frames < 3) throw ConfigError("scene: n_frames must be >= 3");
    if (static_cast<int>(motion.size()) != n_frames - 1)
      throw ConfigError("scene: motion list must have n_frames - 1 entries, got " +
                        std::to_string(motion.size()));
    if (brightness_jitter < 0) throw ConfigError("scene: brightness_jitter must be >= 0");
    if (base_distance <= 0.5) throw ConfigError("scene: base_distance too small");
    if (kind == SceneKind::kTerrain && terrain_amplitude >= base_distance - 0.5)
      throw ConfigError("scene: terrain amplitude too large for base distance");
  }
};

struct SyntheticScene {
  std::vector<Tensor<double>> frames;      // [3,H,W] in [0,1]
  std::vector<Tensor<double>> gt_depths;   // [H,W], z-depth in camera frame
  std::vector<geometry::Pose> gt_poses;    // camera-to-world
  geometry::CameraIntrinsics intrinsics;
  SceneKind kind = SceneKind::kPlane;

  // Motion of points from the camera frame at `from` into the camera frame
  // at `to`; exactly what the view-synthesis warp consumes.
  geometry::Pose relative_motion(int from, int to) const {
    return gt_poses[static_cast<size_t>(to)].inverse().compose(
        gt_poses[static_cast<size_t>(from)]);
  }
};

namespace detail {

// Smooth band-limited field: a fixed sum of oriented sinusoids. Used for both
// surface texture (per channel) and the terrain height profile.
struct WaveField {
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  double offset = 0.0;

  double eval(double x, double y) const {
    double v = offset;
    for (const auto& w : waves) v += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
    return v;
  }
  void grad(double x, double y, double& gx, double& gy) const {
    gx = 0;
    gy = 0;
    for (const auto& w : waves) {
      const double c = w.amp * std::cos(w.fx * x + w.fy * y + w.phase);
      gx += c * w.fx;
      gy += c * w.fy;
    }
  }
};

inline WaveField make_field(Rng& rng, int n_waves, double min_freq, double max_freq,
                            double total_amp, double offset) {
  WaveField f;
  f.offset = offset;
  double amp_budget = total_amp;
  for (int i = 0; i < n_waves; ++i) {
    const double freq = rng.uniform(min_freq, max_freq);
    const double theta = rng.uniform(0.0, 6.283185307179586);
    WaveField::Wave w;
    w.fx = freq * std::cos(theta);
    w.fy = freq * std::sin(theta);
    w.phase = rng.uniform(0.0, 6.283185307179586);
    w.amp = amp_budget * (i + 1 == n_waves ? 1.0 : rng.uniform(0.35, 0.55));
    amp_budget -= w.amp;
    f.waves.push_back(w);
  }
  return f;
}

struct SurfaceModel {
  WaveField tex[3];
  WaveField height;  // offset around 0; surface z = base + height(x,y)
  double base = 4.0;
  double ambient = 0.35;
  bool flat = true;

  // Color with Lambertian shading against a head-on light; flat surfaces
  // shade to exactly 1 so the plane and zero-amplitude terrain agree.
  void color(double x, double y, double rgb[3]) const {
    double shade = 1.0;
    if (!flat) {
      double gx, gy;
      height.grad(x, y, gx, gy);
      shade = ambient + (1.0 - ambient) / std::sqrt(1.0 + gx * gx + gy * gy);
    }
    for (int c = 0; c < 3; ++c) rgb[c] = tex[c].eval(x, y) * shade;
  }
};

inline SurfaceModel make_surface(const SceneConfig& cfg) {
  SurfaceModel s;
  s.base = cfg.base_distance;
  s.ambient = cfg.shading_ambient;
  s.flat = cfg.kind == SceneKind::kPlane || cfg.terrain_amplitude == 0.0;
  Rng rng(cfg.texture_seed);
  // Shortest texture wavelength is ~14 px on the image plane so bilinear
  // resampling of rendered frames stays faithful (the PSNR oracle depends
  // on this).
  const double px_per_unit = cfg.intrinsics.fx / cfg.base_distance;
  const double max_world_freq = cfg.texture_detail * 6.283185307 * px_per_unit / 14.0;
  for (int c = 0; c < 3; ++c)
    s.tex[c] = make_field(rng, 4, 0.25 * max_world_freq, max_world_freq, 0.30, 0.45);
  Rng hrng = rng.fork(99);
  // Height wavelengths of a few scene units: depth varies visibly inside one
  // view. The frequency cap keeps the worst-case surface slope below what a
  // ray through the image corner can track, so every ray's residual stays
  // monotone (one unique intersection).
  const double amp = cfg.kind == SceneKind::kTerrain ? cfg.terrain_amplitude : 0.0;
  const double half_w = 0.5 * cfg.intrinsics.width / cfg.intrinsics.fx;
  const double half_h = 0.5 * cfg.intrinsics.height / cfg.intrinsics.fy;
  const double corner_tan = std::sqrt(half_w * half_w + half_h * half_h);
  const double slope_budget = 0.95 / std::max(corner_tan, 0.2);
  const double max_freq = std::min(2.2, slope_budget / std::max(amp, 1e-6));
  s.height = make_field(hrng, 3, 0.5 * max_freq, max_freq, amp, 0.0);
  return s;
}

}  // namespace detail

// Renders a textured surface seen from a chain of camera poses. The plane is
// ray-cast analytically; the terrain height field is solved by bracketed
// bisection with a Newton polish, giving depth exact to ~1e-10.
inline SyntheticScene render_scene(const SceneConfig& cfg) {
  cfg.validate();
  const auto& K = cfg.intrinsics;
  const int w = K.width, h = K.height;

  SyntheticScene scene;
  scene.kind = cfg.kind;
  scene.intrinsics = K;
  scene.gt_poses.resize(static_cast<size_t>(cfg.n_frames));
  scene.gt_poses[0] = geometry::Pose::identity();
  for (int i = 1; i < cfg.n_frames; ++i)
    scene.gt_poses[static_cast<size_t>(i)] =
        scene.gt_poses[static_cast<size_t>(i - 1)].compose(cfg.motion[static_cast<size_t>(i - 1)]);

  const detail::SurfaceModel surface = detail::make_surface(cfg);
  Rng jitter_rng = Rng(cfg.texture_seed).fork(4242);

  int missed = 0;
  const int64_t total_rays = static_cast<int64_t>(cfg.n_frames) * h * w;
  for (int f = 0; f < cfg.n_frames; ++f) {
    const geometry::Pose& cam = scene.gt_poses[static_cast<size_t>(f)];
    // camera must stay in front of the surface
    const double cam_clearance = surface.base -
                                 (surface.flat ? 0.0 : cfg.terrain_amplitude) -
                                 cam.translation[2];
    if (cam_clearance <= 0.2)
      throw ConfigError("scene: camera at frame " + std::to_string(f) +
                        " moved too close to or behind the surface");

    Tensor<double> img({3, h, w});
    Tensor<double> depth({h, w});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const geometry::Vec3 ray_cam{(x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0};
        const geometry::Vec3 d = geometry::mat3_apply(cam.rotation, ray_cam);
        const geometry::Vec3& o = cam.translation;
        double t_hit = -1.0;
        if (surface.flat) {
          if (d[2] > 1e-9) t_hit = (surface.base - o[2]) / d[2];
        } else {
          if (d[2] > 1e-9) {
            double lo = (surface.base - cfg.terrain_amplitude - o[2]) / d[2];
            double hi = (surface.base + cfg.terrain_amplitude - o[2]) / d[2];
            lo = std::max(lo, 0.0);
            auto residual = [&](double t) {
              const double px = o[0] + t * d[0], py = o[1] + t * d[1], pz = o[2] + t * d[2];
              return pz - (surface.base + surface.height.eval(px, py));
            };
            if (residual(lo) <= 0.0 && residual(hi) >= 0.0) {
              for (int it = 0; it < 40; ++it) {
                const double mid = 0.5 * (lo + hi);
                (residual(mid) < 0.0 ? lo : hi) = mid;
              }
              t_hit = 0.5 * (lo + hi);
              // Newton polish
              for (int it = 0; it < 3; ++it) {
                const double px = o[0] + t_hit * d[0], py = o[1] + t_hit * d[1];
                double gx, gy;
                surface.height.grad(px, py, gx, gy);
                const double fr = residual(t_hit);
                const double dfr = d[2] - gx * d[0] - gy * d[1];
                if (std::abs(dfr) > 1e-9) t_hit -= fr / dfr;
              }
            }
          }
        }
        if (t_hit <= 0.0) {
          ++missed;
          depth.at(y, x) = surface.base + cfg.terrain_amplitude;  // far plane fill
          for (int c = 0; c < 3; ++c) img.at(c, y, x) = 0.0;
          continue;
        }
        const double px = o[0] + t_hit * d[0], py = o[1] + t_hit * d[1],
                     pz = o[2] + t_hit * d[2];
        // z-depth in the camera frame
        const geometry::Vec3 rel{px - o[0], py - o[1], pz - o[2]};
        const geometry::Mat3 rt = geometry::mat3_transpose(cam.rotation);
        depth.at(y, x) = geometry::mat3_apply(rt, rel)[2];
        double rgb[3];
        surface.color(px, py, rgb);
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
      }

    if (cfg.brightness_jitter > 0) {
      const double b =
          jitter_rng.uniform(1.0 - cfg.brightness_jitter, 1.0 + cfg.brightness_jitter);
      for (int64_t i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i] * b, 0.0, 1.0);
    }
    scene.frames.push_back(std::move(img));
    scene.gt_depths.push_back(std::move(depth));
  }
  if (missed * 100 > total_rays)
    throw ConfigError("scene: more than 1% of rays missed the surface (" +
                      std::to_string(missed) + " of " + std::to_string(total_rays) + ")");
  return scene;
}

inline SyntheticScene render_plane_scene(const SceneConfig& cfg) {
  if (cfg.kind != SceneKind::kPlane) throw ConfigError("render_plane_scene: kind must be plane");
  return render_scene(cfg);
}

inline SyntheticScene render_terrain_scene(const SceneConfig& cfg) {
  if (cfg.kind != SceneKind::kTerrain)
    throw ConfigError("render_terrain_scene: kind must be terrain");
  return render_scene(cfg);
}

// Convenience motion builders used by configs and tests.
inline std::vector<geometry::Pose> lateral_motion(int n_frames, const geometry::Vec3& step_t,
                                                  const geometry::Vec3& step_aa = {0, 0, 0},
                                                  double jitter = 0.0, uint64_t seed = 0) {
  std::vector<geometry::Pose> motion;
  Rng rng(seed ^ 0xabcdef12345ull);
  for (int i = 0; i + 1 < n_frames; ++i) {
    geometry::Vec3 t = step_t, aa = step_aa;
    if (jitter > 0)
      for (int k = 0; k < 3; ++k) {
        t[k] += rng.normal(0.0, jitter);
        aa[k] += rng.normal(0.0, jitter * 0.2);
      }
    motion.push_back(geometry::axis_angle_to_pose(aa, t));
  }
  return motion;
}

// Back-and-forth sweep that keeps the camera near its start; good for long
// sequences that must not drift off the textured surface. Translation
// reverses every `period` frames (a z entry gives an in/out dolly), and
// rot_jitter adds small random rotations so ego-motion estimation cannot
// collapse onto a translation-only model.
inline std::vector<geometry::Pose> sweep_motion(int n_frames, const geometry::Vec3& step_t,
                                                int period = 16, double jitter = 0.0,
                                                uint64_t seed = 0, double rot_jitter = 0.0) {
  std::vector<geometry::Pose> motion;
  Rng rng(seed ^ 0x5eed5eedull);
  for (int i = 0; i + 1 < n_frames; ++i) {
    const int dir = ((i / period) % 2 == 0) ? 1 : -1;
    geometry::Vec3 t{dir * step_t[0], dir * step_t[1], dir * step_t[2]};
    geometry::Vec3 aa{0, 0, 0};
    if (jitter > 0)
      for (int k = 0; k < 3; ++k) t[k] += rng.normal(0.0, jitter);
    if (rot_jitter > 0)
      for (int k = 0; k < 3; ++k) aa[k] = rng.normal(0.0, rot_jitter);
    motion.push_back(geometry::axis_angle_to_pose(aa, t));
  }
  return motion;
}

// ---- dataset on disk ----

struct DatasetManifest {
  std::string directory;
  io::json root;
};

inline std::string frame_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06d.png", i);
  return buf;
}

inline std::string depth_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "depth_%06d.pfm", i);
  return buf;
}

inline DatasetManifest export_dataset(const SyntheticScene& scene, const std::string& directory,
                                      const io::json& generating_config = io::json::object()) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) throw IoError("export_dataset: cannot create " + directory + ": " + ec.message());

  io::json manifest;
  manifest["schema_version"] = 1;
  manifest["kind"] = to_string(scene.kind);
  manifest["n_frames"] = scene.frames.size();
  manifest["width"] = scene.intrinsics.width;
  manifest["height"] = scene.intrinsics.height;
  manifest["intrinsics_file"] = "intrinsics.json";
  manifest["poses_file"] = "poses.txt";
  manifest["config"] = generating_config;

  std::vector<std::string> frame_files, depth_files;
  for (size_t i = 0; i < scene.frames.size(); ++i) {
    const std::string fn = frame_name(static_cast<int>(i));
    const std::string dn = depth_name(static_cast<int>(i));
    io::write_png((fs::path(directory) / fn).string(), scene.frames[i]);
    io::write_pfm((fs::path(directory) / dn).string(), scene.gt_depths[i]);
    frame_files.push_back(fn);
    depth_files.push_back(dn);
  }
  manifest["frames"] = frame_files;
  manifest["depths"] = depth_files;
  io::write_poses((fs::path(directory) / "poses.txt").string(), scene.gt_poses);
  io::write_json((fs::path(directory) / "intrinsics.json").string(),
                 io::intrinsics_to_json(scene.intrinsics));
  io::write_json((fs::path(directory) / "manifest.json").string(), manifest);
  return {directory, manifest};
}

inline SyntheticScene load_dataset(const std::string& directory) {
  namespace fs = std::filesystem;
  const fs::path dir(directory);
  io::json manifest = io::read_json((dir / "manifest.json").string());
  SyntheticScene scene;
  scene.kind = scene_kind_from_string(manifest.at("kind").get<std::string>());
  scene.intrinsics =
      io::intrinsics_from_json(io::read_json((dir / manifest.at("intrinsics_file").get<std::string>()).string()));
  scene.gt_poses = io::read_poses((dir / manifest.at("poses_file").get<std::string>()).string());
  for (const auto& f : manifest.at("frames"))
    scene.frames.push_back(io::read_png((dir / f.get<std::string>()).string()));
  for (const auto& d : manifest.at("depths"))
    scene.gt_depths.push_back(io::read_pfm((dir / d.get<std::string>()).string()));
  if (scene.frames.size() != scene.gt_depths.size() ||
      scene.frames.size() != scene.gt_poses.size())
    throw IoError("load_dataset: inconsistent file counts in " + directory);
  return scene;
}

}  // namespace vlora::synth
