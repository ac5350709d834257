#pragma once
#include <limits>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "vlora/core/tensor.hpp"
#include "vlora/geometry.hpp"

namespace vlora::metrics {

struct DepthMetrics {
  double abs_rel = 0;
  double sq_rel = 0;
  double rmse = 0;
  double rmse_log = 0;
  double delta1 = 0;
  double delta2 = 0;
  double delta3 = 0;

  DepthMetrics& accumulate(const DepthMetrics& o) {
    abs_rel += o.abs_rel;
    sq_rel += o.sq_rel;
    rmse += o.rmse;
    rmse_log += o.rmse_log;
    delta1 += o.delta1;
    delta2 += o.delta2;
    delta3 += o.delta3;
    return *this;
  }
  DepthMetrics& scale(double s) {
    abs_rel *= s;
    sq_rel *= s;
    rmse *= s;
    rmse_log *= s;
    delta1 *= s;
    delta2 *= s;
    delta3 *= s;
    return *this;
  }
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw ConfigError("median of empty set");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Standard monocular depth-evaluation metrics. With median_scale the
// prediction is rescaled by median(gt)/median(pred) before both maps are
// clipped to [1e-3, cap].
inline DepthMetrics depth_metrics(const Tensor<double>& pred, const Tensor<double>& gt,
                                  bool median_scale = true, double cap = 150.0) {
  if (pred.shape() != gt.shape()) throw ConfigError("depth_metrics: shape mismatch");
  std::vector<double> p_vals, g_vals;
  p_vals.reserve(static_cast<size_t>(pred.size()));
  g_vals.reserve(static_cast<size_t>(pred.size()));
  for (int64_t i = 0; i < pred.size(); ++i) {
    if (gt[i] > 0) {
      p_vals.push_back(pred[i]);
      g_vals.push_back(gt[i]);
    }
  }
  if (p_vals.empty()) throw ConfigError("depth_metrics: no valid ground-truth pixels");

  if (median_scale) {
    const double ratio = median_of(g_vals) / median_of(p_vals);
    for (double& v : p_vals) v *= ratio;
  }
  constexpr double kMinDepth = 1e-3;
  for (double& v : p_vals) v = std::clamp(v, kMinDepth, cap);
  for (double& v : g_vals) v = std::clamp(v, kMinDepth, cap);

  DepthMetrics m;
  const double n = static_cast<double>(p_vals.size());
  constexpr double kThr1 = 1.25, kThr2 = 1.25 * 1.25, kThr3 = 1.25 * 1.25 * 1.25;
  double sq_err = 0, sq_log_err = 0;
  for (size_t i = 0; i < p_vals.size(); ++i) {
    const double p = p_vals[i], g = g_vals[i];
    const double diff = p - g;
    m.abs_rel += std::abs(diff) / g;
    m.sq_rel += diff * diff / g;
    sq_err += diff * diff;
    const double ld = std::log(p) - std::log(g);
    sq_log_err += ld * ld;
    const double r = std::max(p / g, g / p);
    m.delta1 += r < kThr1 ? 1.0 : 0.0;
    m.delta2 += r < kThr2 ? 1.0 : 0.0;
    m.delta3 += r < kThr3 ? 1.0 : 0.0;
  }
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse = std::sqrt(sq_err / n);
  m.rmse_log = std::sqrt(sq_log_err / n);
  m.delta1 /= n;
  m.delta2 /= n;
  m.delta3 /= n;
  return m;
}

// Peak signal-to-noise ratio in dB for images in [0,1]; an optional [H,W]
// mask restricts the error to valid pixels.
inline double psnr(const Tensor<double>& a, const Tensor<double>& b,
                   const Tensor<double>* mask = nullptr) {
  if (a.shape() != b.shape()) throw ConfigError("psnr: shape mismatch");
  const bool chw = a.ndim() == 3;
  const int c = chw ? a.shape()[0] : 1;
  const int h = chw ? a.shape()[1] : a.shape()[0];
  const int w = chw ? a.shape()[2] : a.shape()[1];
  double sq = 0;
  int64_t count = 0;
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (mask && mask->at(y, x) == 0.0) continue;
        const int64_t idx = (static_cast<int64_t>(ci) * h + y) * w + x;
        const double d = a[idx] - b[idx];
        sq += d * d;
        ++count;
      }
  if (count == 0) throw ConfigError("psnr: empty mask");
  const double mse = sq / static_cast<double>(count);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

struct Trajectory {
  std::vector<geometry::Vec3> positions;

  void validate() const {
    if (positions.size() < 2) throw ConfigError("trajectory needs at least 2 positions");
  }
};

// Chains relative camera poses starting from the identity; position i is the
// translation of the cumulative pose.
inline Trajectory accumulate_trajectory(const std::vector<geometry::Pose>& relative_poses) {
  Trajectory t;
  geometry::Pose current = geometry::Pose::identity();
  t.positions.push_back(current.translation);
  for (const auto& rel : relative_poses) {
    current = current.compose(rel);
    t.positions.push_back(current.translation);
  }
  return t;
}

enum class Alignment { kNone, kRigid, kSimilarity };

inline Alignment alignment_from_string(const std::string& s) {
  if (s == "none") return Alignment::kNone;
  if (s == "rigid") return Alignment::kRigid;
  if (s == "similarity") return Alignment::kSimilarity;
  throw ConfigError("alignment must be one of none|rigid|similarity, got '" + s + "'");
}

// RMSE of positions after an optional least-squares alignment of the
// prediction onto the ground truth (closed-form orthogonal Procrustes; the
// similarity variant also solves for scale, absorbing the monocular
// ambiguity).
inline double ate(const Trajectory& pred, const Trajectory& gt,
                  Alignment align = Alignment::kSimilarity) {
  pred.validate();
  gt.validate();
  if (pred.positions.size() != gt.positions.size())
    throw ConfigError("ate: trajectory lengths differ (" + std::to_string(pred.positions.size()) +
                      " vs " + std::to_string(gt.positions.size()) + ")");
  const int n = static_cast<int>(pred.positions.size());
  Eigen::Matrix3Xd p(3, n), g(3, n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) {
      p(k, i) = pred.positions[static_cast<size_t>(i)][static_cast<size_t>(k)];
      g(k, i) = gt.positions[static_cast<size_t>(i)][static_cast<size_t>(k)];
    }

  Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
  Eigen::Vector3d trans = Eigen::Vector3d::Zero();
  double s = 1.0;
  if (align != Alignment::kNone) {
    const Eigen::Vector3d mu_p = p.rowwise().mean();
    const Eigen::Vector3d mu_g = g.rowwise().mean();
    const Eigen::Matrix3Xd pc = p.colwise() - mu_p;
    const Eigen::Matrix3Xd gc = g.colwise() - mu_g;
    const Eigen::Matrix3d cov = gc * pc.transpose() / static_cast<double>(n);
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d sgn = Eigen::Matrix3d::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) sgn(2, 2) = -1.0;
    rot = svd.matrixU() * sgn * svd.matrixV().transpose();
    if (align == Alignment::kSimilarity) {
      const double var_p = pc.squaredNorm() / static_cast<double>(n);
      if (var_p > 0) s = (svd.singularValues().asDiagonal() * sgn).trace() / var_p;
    }
    trans = mu_g - s * rot * mu_p;
  }

  double sq = 0;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d aligned = s * rot * p.col(i) + trans;
    sq += (aligned - g.col(i)).squaredNorm();
  }
  return std::sqrt(sq / n);
}

}  // namespace vlora::metrics
