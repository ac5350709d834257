#pragma once

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vlora/core/tensor.hpp"
#include "vlora/geometry.hpp"

#include "json.hpp"  // vendored nlohmann/json

namespace vlora::io {

using json = nlohmann::json;

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

// ---- PNG (8-bit RGB) ----

// Quantizes a [3,H,W] image in [0,1] to 8-bit RGB.
inline void write_png(const std::string& path, const Tensor<double>& image) {
  if (image.ndim() != 3 || image.shape()[0] != 3)
    throw IoError("write_png: expected [3,H,W] image for " + path);
  const int h = image.shape()[1], w = image.shape()[2];
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("write_png: libpng failure for " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = image.at(c, y, x);
        v = v < 0 ? 0 : (v > 1 ? 1 : v);
        row[static_cast<size_t>(x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline Tensor<double> read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("read_png: cannot open " + path);
  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw IoError("read_png: not a PNG file: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("read_png: libpng failure for " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  std::vector<png_byte> row(png_get_rowbytes(png, info));
  Tensor<double> image({3, h, w});
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        image.at(c, y, x) = row[static_cast<size_t>(x) * 3 + c] / 255.0;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

// ---- PFM (32-bit float, grayscale, little-endian, bottom-up rows) ----

inline void write_pfm(const std::string& path, const Tensor<double>& map) {
  if (map.ndim() != 2) throw IoError("write_pfm: expected [H,W] map for " + path);
  const int h = map.shape()[0], w = map.shape()[1];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_pfm: cannot open " + path);
  out << "Pf\n" << w << " " << h << "\n-1.0\n";
  std::vector<float> row(static_cast<size_t>(w));
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) row[static_cast<size_t>(x)] = static_cast<float>(map.at(y, x));
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(w * sizeof(float)));
  }
  if (!out) throw IoError("write_pfm: write failed for " + path);
}

inline Tensor<double> read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_pfm: cannot open " + path);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0;
  in >> magic >> w >> h >> scale;
  if (magic != "Pf" || w <= 0 || h <= 0) throw IoError("read_pfm: bad header in " + path);
  if (scale > 0) throw IoError("read_pfm: big-endian PFM not supported: " + path);
  in.get();  // single whitespace after the scale
  Tensor<double> map({h, w});
  std::vector<float> row(static_cast<size_t>(w));
  for (int y = h - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(w * sizeof(float)));
    if (!in) throw IoError("read_pfm: truncated data in " + path);
    for (int x = 0; x < w; ++x) map.at(y, x) = row[static_cast<size_t>(x)];
  }
  return map;
}

// ---- poses: 3x4 row-major per line ----

inline void write_poses(const std::string& path, const std::vector<geometry::Pose>& poses) {
  std::ofstream out(path);
  if (!out) throw IoError("write_poses: cannot open " + path);
  char buf[32];
  for (const auto& p : poses) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) {
        const double v = j < 3 ? p.rotation[i][j] : p.translation[i];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf << (i == 2 && j == 3 ? "" : " ");
      }
    out << "\n";
  }
  if (!out) throw IoError("write_poses: write failed for " + path);
}

inline std::vector<geometry::Pose> read_poses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_poses: cannot open " + path);
  std::vector<geometry::Pose> poses;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    geometry::Pose p;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) {
        double v;
        if (!(ls >> v)) throw IoError("read_poses: malformed line in " + path);
        if (j < 3)
          p.rotation[i][j] = v;
        else
          p.translation[i] = v;
      }
    poses.push_back(p);
  }
  return poses;
}

// ---- intrinsics JSON ----

inline json intrinsics_to_json(const geometry::CameraIntrinsics& k) {
  return json{{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx},
              {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

inline geometry::CameraIntrinsics intrinsics_from_json(const json& j) {
  geometry::CameraIntrinsics k;
  k.fx = j.at("fx").get<double>();
  k.fy = j.at("fy").get<double>();
  k.cx = j.at("cx").get<double>();
  k.cy = j.at("cy").get<double>();
  k.width = j.at("width").get<int>();
  k.height = j.at("height").get<int>();
  k.validate();
  return k;
}

inline void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("write_json: cannot open " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write_json: write failed for " + path);
}

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_json: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw IoError("read_json: parse error in " + path + ": " + e.what());
  }
  return j;
}

// FNV-1a over a string; used to fingerprint configs embedded in checkpoints.
inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace vlora::io
