#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "vlora/metrics.hpp"
#include "vlora/synth.hpp"

using namespace vlora;
using namespace vlora::synth;

namespace {

namespace fs = std::filesystem;

SceneConfig plane_cfg(int n_frames = 4, double z = 4.0, double fx = 70.0, int size = 64) {
  SceneConfig cfg;
  cfg.kind = SceneKind::kPlane;
  cfg.intrinsics = {fx, fx, (size - 1) / 2.0, (size - 1) / 2.0, size, size};
  cfg.n_frames = n_frames;
  cfg.base_distance = z;
  cfg.brightness_jitter = 0.0;
  cfg.motion = lateral_motion(n_frames, {0.05, 0.0, 0.0});
  return cfg;
}

SceneConfig terrain_cfg(int n_frames = 5, int size = 64) {
  SceneConfig cfg = plane_cfg(n_frames, 4.0, 70.0, size);
  cfg.kind = SceneKind::kTerrain;
  cfg.terrain_amplitude = 0.5;
  cfg.motion = lateral_motion(n_frames, {0.06, 0.015, 0.0});
  return cfg;
}

std::string temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("vlora_test_" + tag);
  fs::remove_all(p);
  return p.string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

double warp_psnr(const SyntheticScene& scene, int target, int source) {
  auto motion = scene.relative_motion(target, source);
  auto view = geometry::synthesize_view(constant(scene.frames[static_cast<size_t>(source)]),
                                        constant(scene.gt_depths[static_cast<size_t>(target)]),
                                        scene.intrinsics, motion);
  return metrics::psnr(view.image.value(), scene.frames[static_cast<size_t>(target)], &view.valid);
}

}  // namespace

TEST(PlaneScene, ZeroMotionGivesIdenticalFrames) {
  SceneConfig cfg = plane_cfg(4);
  cfg.motion = lateral_motion(cfg.n_frames, {0, 0, 0});
  auto scene = render_plane_scene(cfg);
  for (size_t i = 1; i < scene.frames.size(); ++i) {
    EXPECT_TRUE(scene.frames[i].bitwise_equal(scene.frames[0]));
    EXPECT_TRUE(scene.gt_depths[i].bitwise_equal(scene.gt_depths[0]));
  }
  for (int64_t i = 0; i < scene.gt_depths[0].size(); ++i)
    EXPECT_DOUBLE_EQ(scene.gt_depths[0][i], 4.0);
}

TEST(PlaneScene, LateralShiftMatchesPinholeLaw) {
  // fx*tx/Z = 100*0.1/2 = 5 px: frame k+1 content appears 5 px to the left
  SceneConfig cfg = plane_cfg(3, 2.0, 100.0);
  cfg.motion = lateral_motion(cfg.n_frames, {0.1, 0.0, 0.0});
  auto scene = render_plane_scene(cfg);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64 - 5; ++x)
      for (int c = 0; c < 3; ++c)
        EXPECT_NEAR(scene.frames[1].at(c, y, x), scene.frames[0].at(c, y, x + 5), 0.02);
}

TEST(PlaneScene, BrightnessJitterBoundsFrameMeans) {
  SceneConfig base = plane_cfg(6);
  auto clean = render_plane_scene(base);
  SceneConfig jittered_cfg = base;
  jittered_cfg.brightness_jitter = 0.2;
  auto jittered = render_plane_scene(jittered_cfg);
  for (size_t i = 0; i < clean.frames.size(); ++i) {
    const double ratio = jittered.frames[i].mean() / clean.frames[i].mean();
    EXPECT_GE(ratio, 0.8 - 1e-6);
    EXPECT_LE(ratio, 1.2 + 1e-6);
  }
}

TEST(PlaneScene, CameraBehindPlaneRejected) {
  SceneConfig cfg = plane_cfg(3, 1.0);
  cfg.motion = lateral_motion(cfg.n_frames, {0.0, 0.0, 0.9});  // drives through the plane
  EXPECT_THROW(render_plane_scene(cfg), ConfigError);
}

TEST(TerrainScene, FlatAmplitudeReducesToPlane) {
  SceneConfig pc = plane_cfg(3);
  SceneConfig tc = pc;
  tc.kind = SceneKind::kTerrain;
  tc.terrain_amplitude = 0.0;
  auto plane = render_plane_scene(pc);
  auto terrain = render_terrain_scene(tc);
  for (size_t i = 0; i < plane.frames.size(); ++i) {
    EXPECT_LT(plane.frames[i].max_abs_diff(terrain.frames[i]), 1e-4);
    EXPECT_LT(plane.gt_depths[i].max_abs_diff(terrain.gt_depths[i]), 1e-4);
  }
}

TEST(TerrainScene, DeterministicForSeed) {
  auto a = render_terrain_scene(terrain_cfg());
  auto b = render_terrain_scene(terrain_cfg());
  for (size_t i = 0; i < a.frames.size(); ++i) {
    EXPECT_TRUE(a.frames[i].bitwise_equal(b.frames[i]));
    EXPECT_TRUE(a.gt_depths[i].bitwise_equal(b.gt_depths[i]));
  }
}

TEST(TerrainScene, DepthPositiveAndFinite) {
  auto scene = render_terrain_scene(terrain_cfg());
  for (const auto& d : scene.gt_depths) {
    EXPECT_TRUE(d.all_finite());
    EXPECT_GT(d.min(), 0.0);
  }
  for (const auto& p : scene.gt_poses) EXPECT_TRUE(p.is_valid());
}

TEST(OracleConsistency, PlaneWarpAbove40dB) {
  auto scene = render_plane_scene(plane_cfg(4));
  for (int t = 0; t + 1 < 4; ++t) {
    const double db = warp_psnr(scene, t, t + 1);
    EXPECT_GT(db, 40.0) << "pair " << t;
  }
}

TEST(OracleConsistency, TerrainWarpAbove35dB) {
  auto scene = render_terrain_scene(terrain_cfg());
  for (int t = 0; t + 1 < 5; ++t) {
    const double db = warp_psnr(scene, t, t + 1);
    EXPECT_GT(db, 35.0) << "pair " << t;
  }
}

TEST(Io, PngRoundTripWithinQuantization) {
  Rng rng(61);
  Tensor<double> img = Tensor<double>::rand_uniform({3, 20, 24}, rng);
  const std::string dir = temp_dir("png");
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/t.png";
  io::write_png(path, img);
  Tensor<double> back = io::read_png(path);
  EXPECT_EQ(back.shape(), img.shape());
  EXPECT_LE(img.max_abs_diff(back), 0.5 / 255.0 + 1e-12);
}

TEST(Io, PfmRoundTripExact) {
  Rng rng(62);
  Tensor<double> depth = Tensor<double>::rand_uniform({13, 17}, rng, 0.5, 9.5);
  const std::string dir = temp_dir("pfm");
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/d.pfm";
  io::write_pfm(path, depth);
  Tensor<double> back = io::read_pfm(path);
  ASSERT_EQ(back.shape(), depth.shape());
  for (int64_t i = 0; i < depth.size(); ++i)
    EXPECT_EQ(static_cast<float>(depth[i]), static_cast<float>(back[i]));
}

TEST(Io, PosesRoundTripExact) {
  Rng rng(63);
  std::vector<geometry::Pose> poses;
  for (int i = 0; i < 5; ++i)
    poses.push_back(geometry::axis_angle_to_pose(
        {rng.normal(), rng.normal(), rng.normal()}, {rng.normal(), rng.normal(), rng.normal()}));
  const std::string dir = temp_dir("poses");
  std::filesystem::create_directories(dir);
  io::write_poses(dir + "/p.txt", poses);
  auto back = io::read_poses(dir + "/p.txt");
  ASSERT_EQ(back.size(), poses.size());
  for (size_t i = 0; i < poses.size(); ++i) {
    for (int r = 0; r < 3; ++r) {
      EXPECT_EQ(back[i].translation[r], poses[i].translation[r]);
      for (int c = 0; c < 3; ++c) EXPECT_EQ(back[i].rotation[r][c], poses[i].rotation[r][c]);
    }
  }
}

TEST(Dataset, ExportReloadRoundTrip) {
  auto scene = render_terrain_scene(terrain_cfg(4, 32));
  const std::string dir = temp_dir("ds");
  auto manifest = export_dataset(scene, dir);
  auto loaded = load_dataset(dir);
  ASSERT_EQ(loaded.frames.size(), scene.frames.size());
  for (size_t i = 0; i < scene.frames.size(); ++i) {
    EXPECT_LE(scene.frames[i].max_abs_diff(loaded.frames[i]), 0.5 / 255.0 + 1e-12);
    for (int64_t px = 0; px < scene.gt_depths[i].size(); ++px)
      EXPECT_EQ(static_cast<float>(scene.gt_depths[i][px]),
                static_cast<float>(loaded.gt_depths[i][px]));
  }
  // manifest references every written file
  for (const auto& f : manifest.root.at("frames"))
    EXPECT_TRUE(fs::exists(fs::path(dir) / f.get<std::string>()));
  for (const auto& d : manifest.root.at("depths"))
    EXPECT_TRUE(fs::exists(fs::path(dir) / d.get<std::string>()));
  EXPECT_TRUE(fs::exists(fs::path(dir) / manifest.root.at("poses_file").get<std::string>()));
  EXPECT_TRUE(fs::exists(fs::path(dir) / manifest.root.at("intrinsics_file").get<std::string>()));
}

TEST(Dataset, ReExportIsByteIdentical) {
  auto scene = render_terrain_scene(terrain_cfg(3, 32));
  const std::string d1 = temp_dir("rex1"), d2 = temp_dir("rex2");
  export_dataset(scene, d1);
  auto scene2 = render_terrain_scene(terrain_cfg(3, 32));
  export_dataset(scene2, d2);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(file_bytes(d1 + "/" + depth_name(i)), file_bytes(d2 + "/" + depth_name(i)));
    EXPECT_EQ(file_bytes(d1 + "/" + frame_name(i)), file_bytes(d2 + "/" + frame_name(i)));
  }
  EXPECT_EQ(file_bytes(d1 + "/manifest.json"), file_bytes(d2 + "/manifest.json"));
}

TEST(Dataset, MotionLengthValidated) {
  SceneConfig cfg = plane_cfg(5);
  cfg.motion.pop_back();
  EXPECT_THROW(render_plane_scene(cfg), ConfigError);
}
