#pragma once

#include <array>
#include <cmath>

#include "vlora/core/autograd.hpp"
#include "vlora/core/image_ops.hpp"

namespace vlora::geometry {

struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const {
    if (!(fx > 0) || !(fy > 0)) throw ConfigError("intrinsics: focal lengths must be positive");
    if (cx < 0 || cx >= width || cy < 0 || cy >= height)
      throw ConfigError("intrinsics: principal point outside image");
  }
};

using Mat3 = std::array<std::array<double, 3>, 3>;
using Vec3 = std::array<double, 3>;

inline Mat3 mat3_identity() {
  return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
}

inline Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Vec3 mat3_apply(const Mat3& m, const Vec3& v) {
  Vec3 r{};
  for (int i = 0; i < 3; ++i) r[i] = m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2];
  return r;
}

inline Mat3 mat3_transpose(const Mat3& m) {
  Mat3 t;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i][j] = m[j][i];
  return t;
}

// Rigid transform: x' = R x + t.
struct Pose {
  Mat3 rotation = mat3_identity();
  Vec3 translation{0, 0, 0};

  static Pose identity() { return {}; }

  Pose compose(const Pose& other) const {
    // (this o other)(x) = this(other(x))
    Pose p;
    p.rotation = mat3_mul(rotation, other.rotation);
    const Vec3 rt = mat3_apply(rotation, other.translation);
    for (int i = 0; i < 3; ++i) p.translation[i] = rt[i] + translation[i];
    return p;
  }

  Pose inverse() const {
    Pose p;
    p.rotation = mat3_transpose(rotation);
    const Vec3 rt = mat3_apply(p.rotation, translation);
    for (int i = 0; i < 3; ++i) p.translation[i] = -rt[i];
    return p;
  }

  Vec3 apply(const Vec3& x) const {
    const Vec3 rx = mat3_apply(rotation, x);
    return {rx[0] + translation[0], rx[1] + translation[1], rx[2] + translation[2]};
  }

  bool is_valid(double tol = 1e-6) const {
    const Mat3 rtr = mat3_mul(mat3_transpose(rotation), rotation);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (std::abs(rtr[i][j] - (i == j ? 1.0 : 0.0)) > tol) return false;
    const double det =
        rotation[0][0] * (rotation[1][1] * rotation[2][2] - rotation[1][2] * rotation[2][1]) -
        rotation[0][1] * (rotation[1][0] * rotation[2][2] - rotation[1][2] * rotation[2][0]) +
        rotation[0][2] * (rotation[1][0] * rotation[2][1] - rotation[1][1] * rotation[2][0]);
    return std::abs(det - 1.0) <= tol;
  }
};

namespace detail {
// sin(r)/r and (1-cos(r))/r^2 as analytic functions of u = r^2, with series
// fallbacks so the axis-angle zero vector stays smooth.
inline void rot_coeffs(double u, double& s1, double& s2, double& ds1, double& ds2) {
  if (u < 1e-8) {
    s1 = 1.0 - u / 6.0 + u * u / 120.0;
    s2 = 0.5 - u / 24.0 + u * u / 720.0;
    ds1 = -1.0 / 6.0 + u / 60.0;
    ds2 = -1.0 / 24.0 + u / 360.0;
    return;
  }
  const double r = std::sqrt(u);
  const double sr = std::sin(r), cr = std::cos(r);
  s1 = sr / r;
  s2 = (1.0 - cr) / u;
  ds1 = (r * cr - sr) / (2.0 * u * r);
  ds2 = (r * sr / 2.0 - (1.0 - cr)) / (u * u);
}

inline Mat3 cross_matrix(const Vec3& a) {
  return {{{0, -a[2], a[1]}, {a[2], 0, -a[0]}, {-a[1], a[0], 0}}};
}
}  // namespace detail

// Rodrigues rotation from an axis-angle vector.
inline Mat3 rotation_from_axis_angle(const Vec3& aa) {
  double s1, s2, ds1, ds2;
  const double u = aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2];
  detail::rot_coeffs(u, s1, s2, ds1, ds2);
  const Mat3 k = detail::cross_matrix(aa);
  const Mat3 kk = mat3_mul(k, k);
  Mat3 r = mat3_identity();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[i][j] += s1 * k[i][j] + s2 * kk[i][j];
  return r;
}

inline Pose axis_angle_to_pose(const Vec3& aa, const Vec3& t) {
  Pose p;
  p.rotation = rotation_from_axis_angle(aa);
  p.translation = t;
  return p;
}

// Differentiable Rodrigues: aa [3] -> R [3,3].
template <typename T>
Var<T> rotation_var(const Var<T>& aa) {
  if (aa.size() != 3) throw ShapeError("rotation_var expects a 3-vector");
  const Vec3 a{static_cast<double>(aa.value()[0]), static_cast<double>(aa.value()[1]),
               static_cast<double>(aa.value()[2])};
  const double u = a[0] * a[0] + a[1] * a[1] + a[2] * a[2];
  double s1, s2, ds1, ds2;
  detail::rot_coeffs(u, s1, s2, ds1, ds2);
  const Mat3 k = detail::cross_matrix(a);
  const Mat3 kk = mat3_mul(k, k);
  Tensor<T> out({3, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      out.at(i, j) = static_cast<T>((i == j ? 1.0 : 0.0) + s1 * k[i][j] + s2 * kk[i][j]);
  return vlora::detail::make_op<T>(
      std::move(out), {aa}, [an = aa.node(), a, k, kk, s1, s2, ds1, ds2](Node<T>& nd) {
        if (!an->requires_grad) return;
        Tensor<T>& buf = an->grad_buf();
        const Mat3 basis[3] = {detail::cross_matrix({1, 0, 0}), detail::cross_matrix({0, 1, 0}),
                               detail::cross_matrix({0, 0, 1})};
        for (int p = 0; p < 3; ++p) {
          // dR/da_p = ds1*2a_p*K + s1*E_p + ds2*2a_p*K^2 + s2*(E_p K + K E_p)
          const Mat3& e = basis[p];
          const Mat3 ek = mat3_mul(e, k);
          const Mat3 ke = mat3_mul(k, e);
          double acc = 0;
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
              const double d = ds1 * 2.0 * a[p] * k[i][j] + s1 * e[i][j] +
                               ds2 * 2.0 * a[p] * kk[i][j] + s2 * (ek[i][j] + ke[i][j]);
              acc += d * static_cast<double>(nd.grad.at(i, j));
            }
          buf[p] += static_cast<T>(acc);
        }
      });
}

// Continuous source-view coordinates plus the validity mask from a warp.
template <typename T>
struct PixelGrid {
  Var<T> coords;     // [2,H,W]: channel 0 = x, channel 1 = y
  Tensor<T> valid;   // [H,W], 1 where usable
};

inline constexpr double kMinWarpDepth = 1e-6;

// Backprojects each target pixel with its depth, applies the rigid transform
// (rotation [3,3] and translation [3] as Vars), reprojects through K and
// divides by the transformed depth. Pixels with transformed depth <= eps or
// coordinates outside the image are masked out.
template <typename T>
PixelGrid<T> reproject(const Var<T>& depth, const Var<T>& rotation, const Var<T>& translation,
                       const CameraIntrinsics& K) {
  if (depth.shape().size() != 2) throw ShapeError("reproject: depth must be [H,W]");
  const int h = depth.shape()[0], w = depth.shape()[1];
  const double fx = K.fx, fy = K.fy, cx = K.cx, cy = K.cy;
  const Tensor<T>& dv = depth.value();
  const Tensor<T>& rv = rotation.value();
  const Tensor<T>& tv = translation.value();

  Tensor<T> coords({2, h, w});
  Tensor<T> valid({h, w});
  // Saved per-pixel intermediates for the backward pass.
  Tensor<T> cam({3, h, w});   // transformed camera point (x', y', z')
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double d = static_cast<double>(dv.at(y, x));
      const double rx = (x - cx) / fx, ry = (y - cy) / fy;
      const double px = d * rx, py = d * ry, pz = d;
      const double qx = rv.at(0, 0) * px + rv.at(0, 1) * py + rv.at(0, 2) * pz + tv[0];
      const double qy = rv.at(1, 0) * px + rv.at(1, 1) * py + rv.at(1, 2) * pz + tv[1];
      const double qz = rv.at(2, 0) * px + rv.at(2, 1) * py + rv.at(2, 2) * pz + tv[2];
      cam.at(0, y, x) = static_cast<T>(qx);
      cam.at(1, y, x) = static_cast<T>(qy);
      cam.at(2, y, x) = static_cast<T>(qz);
      if (qz <= kMinWarpDepth) {
        coords.at(0, y, x) = T(-1);
        coords.at(1, y, x) = T(-1);
        valid.at(y, x) = T(0);
        continue;
      }
      double u = fx * qx / qz + cx;
      double v = fy * qy / qz + cy;
      // snap rounding noise at the image border onto it
      constexpr double kEdgeTol = 1e-6;
      if (u > -kEdgeTol && u < 0.0) u = 0.0;
      if (u > w - 1.0 && u < w - 1.0 + kEdgeTol) u = w - 1.0;
      if (v > -kEdgeTol && v < 0.0) v = 0.0;
      if (v > h - 1.0 && v < h - 1.0 + kEdgeTol) v = h - 1.0;
      coords.at(0, y, x) = static_cast<T>(u);
      coords.at(1, y, x) = static_cast<T>(v);
      valid.at(y, x) = (u >= 0.0 && u <= w - 1.0 && v >= 0.0 && v <= h - 1.0) ? T(1) : T(0);
    }

  Var<T> out = vlora::detail::make_op<T>(
      std::move(coords), {depth, rotation, translation},
      [dn = depth.node(), rn = rotation.node(), tn = translation.node(), cam, rv, dv, h, w, fx,
       fy, cx, cy](Node<T>& nd) {
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const double qz = static_cast<double>(cam.at(2, y, x));
            if (qz <= kMinWarpDepth) continue;  // masked: no gradient
            const double qx = static_cast<double>(cam.at(0, y, x));
            const double qy = static_cast<double>(cam.at(1, y, x));
            const double gu = static_cast<double>(nd.grad.at(0, y, x));
            const double gv = static_cast<double>(nd.grad.at(1, y, x));
            // du/dq = fx*(1/qz, 0, -qx/qz^2); dv/dq = fy*(0, 1/qz, -qy/qz^2)
            const double inv_z = 1.0 / qz;
            const double gq[3] = {gu * fx * inv_z, gv * fy * inv_z,
                                  -(gu * fx * qx + gv * fy * qy) * inv_z * inv_z};
            if (tn->requires_grad) {
              Tensor<T>& buf = tn->grad_buf();
              for (int i = 0; i < 3; ++i) buf[i] += static_cast<T>(gq[i]);
            }
            const double rx = (x - cx) / fx, ry = (y - cy) / fy;
            const double d = static_cast<double>(dv.at(y, x));
            if (rn->requires_grad) {
              // dq_i/dR_ij = p_j with p = d * (rx, ry, 1)
              Tensor<T>& buf = rn->grad_buf();
              const double p[3] = {d * rx, d * ry, d};
              for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) buf.at(i, j) += static_cast<T>(gq[i] * p[j]);
            }
            if (dn->requires_grad) {
              // dq/dd = R * (rx, ry, 1)
              Tensor<T>& buf = dn->grad_buf();
              double acc = 0;
              for (int i = 0; i < 3; ++i)
                acc += gq[i] * (rv.at(i, 0) * rx + rv.at(i, 1) * ry + rv.at(i, 2));
              buf.at(y, x) += static_cast<T>(acc);
            }
          }
      });
  return {out, std::move(valid)};
}

// Bilinear lookup of source at continuous grid coordinates, clamped to the
// border. Differentiable w.r.t. both the source image and the coordinates;
// the coordinate gradient is zero where the lookup is clamped.
template <typename T>
Var<T> bilinear_sample(const Var<T>& source, const PixelGrid<T>& grid) {
  int c, h, w;
  vlora::detail::chw(source.shape(), c, h, w);
  const Shape& gs = grid.coords.shape();
  if (gs.size() != 3 || gs[0] != 2) throw ShapeError("bilinear_sample: grid must be [2,H,W]");
  const int oh = gs[1], ow = gs[2];
  const Tensor<T>& sv = source.value();
  const Tensor<T>& gvt = grid.coords.value();

  Tensor<T> out(source.shape().size() == 3 ? Shape{c, oh, ow} : Shape{oh, ow});
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      // non-finite coordinates come from masked-out warp pixels; sample the
      // origin so the (ignored) value stays well defined
      double raw_gx = static_cast<double>(gvt.at(0, y, x));
      double raw_gy = static_cast<double>(gvt.at(1, y, x));
      if (!std::isfinite(raw_gx)) raw_gx = 0.0;
      if (!std::isfinite(raw_gy)) raw_gy = 0.0;
      const double gx = std::clamp(raw_gx, 0.0, w - 1.0);
      const double gy = std::clamp(raw_gy, 0.0, h - 1.0);
      const int x0 = std::min(static_cast<int>(gx), w - 1), x1 = std::min(x0 + 1, w - 1);
      const int y0 = std::min(static_cast<int>(gy), h - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx2 = gx - x0, fy2 = gy - y0;
      for (int ci = 0; ci < c; ++ci) {
        const T* src = sv.data() + static_cast<int64_t>(ci) * h * w;
        const double v00 = src[static_cast<int64_t>(y0) * w + x0];
        const double v01 = src[static_cast<int64_t>(y0) * w + x1];
        const double v10 = src[static_cast<int64_t>(y1) * w + x0];
        const double v11 = src[static_cast<int64_t>(y1) * w + x1];
        out.data()[(static_cast<int64_t>(ci) * oh + y) * ow + x] = static_cast<T>(
            (1 - fy2) * ((1 - fx2) * v00 + fx2 * v01) + fy2 * ((1 - fx2) * v10 + fx2 * v11));
      }
    }
  return vlora::detail::make_op<T>(
      std::move(out), {source, grid.coords},
      [sn = source.node(), gn = grid.coords.node(), sv, gvt, c, h, w, oh, ow](Node<T>& nd) {
        for (int y = 0; y < oh; ++y)
          for (int x = 0; x < ow; ++x) {
            double raw_x = static_cast<double>(gvt.at(0, y, x));
            double raw_y = static_cast<double>(gvt.at(1, y, x));
            if (!std::isfinite(raw_x)) raw_x = 0.0;
            if (!std::isfinite(raw_y)) raw_y = 0.0;
            const bool in_x = raw_x > 0.0 && raw_x < w - 1.0;
            const bool in_y = raw_y > 0.0 && raw_y < h - 1.0;
            const double gx = std::clamp(raw_x, 0.0, w - 1.0);
            const double gy = std::clamp(raw_y, 0.0, h - 1.0);
            const int x0 = std::min(static_cast<int>(gx), w - 1), x1 = std::min(x0 + 1, w - 1);
            const int y0 = std::min(static_cast<int>(gy), h - 1), y1 = std::min(y0 + 1, h - 1);
            const double fx2 = gx - x0, fy2 = gy - y0;
            double acc_gx = 0, acc_gy = 0;
            for (int ci = 0; ci < c; ++ci) {
              const double g =
                  static_cast<double>(nd.grad.data()[(static_cast<int64_t>(ci) * oh + y) * ow + x]);
              if (g == 0.0) continue;
              const T* src = sv.data() + static_cast<int64_t>(ci) * h * w;
              if (sn->requires_grad) {
                Tensor<T>& buf = sn->grad_buf();
                T* dst = buf.data() + static_cast<int64_t>(ci) * h * w;
                dst[static_cast<int64_t>(y0) * w + x0] += static_cast<T>(g * (1 - fy2) * (1 - fx2));
                dst[static_cast<int64_t>(y0) * w + x1] += static_cast<T>(g * (1 - fy2) * fx2);
                dst[static_cast<int64_t>(y1) * w + x0] += static_cast<T>(g * fy2 * (1 - fx2));
                dst[static_cast<int64_t>(y1) * w + x1] += static_cast<T>(g * fy2 * fx2);
              }
              if (gn->requires_grad) {
                const double v00 = src[static_cast<int64_t>(y0) * w + x0];
                const double v01 = src[static_cast<int64_t>(y0) * w + x1];
                const double v10 = src[static_cast<int64_t>(y1) * w + x0];
                const double v11 = src[static_cast<int64_t>(y1) * w + x1];
                if (in_x) acc_gx += g * ((1 - fy2) * (v01 - v00) + fy2 * (v11 - v10));
                if (in_y) acc_gy += g * ((1 - fx2) * (v10 - v00) + fx2 * (v11 - v01));
              }
            }
            if (gn->requires_grad) {
              Tensor<T>& buf = gn->grad_buf();
              buf.at(0, y, x) += static_cast<T>(acc_gx);
              buf.at(1, y, x) += static_cast<T>(acc_gy);
            }
          }
      });
}

// View synthesis: warp the source image into the target frame using the
// target depth and the target-to-source motion.
template <typename T>
struct SynthesizedView {
  Var<T> image;
  Tensor<T> valid;
};

template <typename T>
SynthesizedView<T> synthesize_view(const Var<T>& source_img, const Var<T>& depth_target,
                                   const CameraIntrinsics& K, const Var<T>& rotation,
                                   const Var<T>& translation) {
  PixelGrid<T> grid = reproject(depth_target, rotation, translation, K);
  Var<T> warped = bilinear_sample(source_img, grid);
  return {warped, std::move(grid.valid)};
}

template <typename T>
SynthesizedView<T> synthesize_view(const Var<T>& source_img, const Var<T>& depth_target,
                                   const CameraIntrinsics& K, const Pose& pose) {
  Tensor<T> r({3, 3}), t({3});
  for (int i = 0; i < 3; ++i) {
    t[i] = static_cast<T>(pose.translation[i]);
    for (int j = 0; j < 3; ++j) r.at(i, j) = static_cast<T>(pose.rotation[i][j]);
  }
  return synthesize_view(source_img, depth_target, K, constant(std::move(r)), constant(std::move(t)));
}

}  // namespace vlora::geometry
