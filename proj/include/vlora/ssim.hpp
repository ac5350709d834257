#pragma once

#include <string>
#include <vector>

#include "vlora/core/autograd.hpp"
#include "vlora/core/image_ops.hpp"

namespace vlora::losses {

struct SsimConfig {
  int window = 11;          // uniform (mean) window, odd
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  void validate() const {
    if (window < 3 || window % 2 == 0) throw ConfigError("ssim: window must be odd and >= 3");
    if (k1 <= 0 || k2 <= 0) throw ConfigError("ssim: stabilizers must be positive");
    if (dynamic_range <= 0) throw ConfigError("ssim: dynamic range must be positive");
  }
};

struct MsSsimConfig {
  int scales = 5;
  // Per-scale exponents applied to the contrast*structure term; the last
  // entry also weights the coarsest-scale luminance term. These are the
  // published five-scale values (they sum to 1.0001 as published).
  std::vector<double> weights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  double luminance_weight = -1.0;  // < 0 means "use weights.back()"
  SsimConfig ssim;

  double alpha() const { return luminance_weight < 0 ? weights.back() : luminance_weight; }

  void validate() const {
    ssim.validate();
    if (scales < 1) throw ConfigError("ms_ssim: scales must be >= 1");
    if (static_cast<int>(weights.size()) != scales)
      throw ConfigError("ms_ssim: need one weight per scale");
    double sum = 0;
    for (double w : weights) {
      if (w <= 0) throw ConfigError("ms_ssim: weights must be positive");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-2)
      throw ConfigError("ms_ssim: weights must sum to 1 (got " + std::to_string(sum) + ")");
  }
};

// Largest scale count for which the coarsest image still fits one window.
inline int max_feasible_scales(int h, int w, int window) {
  int m = 0;
  int d = std::min(h, w);
  while (d >= window) {
    ++m;
    d /= 2;
  }
  return m;
}

template <typename T>
struct SsimMoments {
  Var<T> luminance;          // per-pixel l map
  Var<T> contrast_structure; // per-pixel (c*s) map, fused form
};

namespace detail {

// Windowed moments shared by SSIM and MS-SSIM: uniform filter, valid region.
template <typename T>
SsimMoments<T> ssim_moments(const Var<T>& x, const Var<T>& y, const SsimConfig& cfg) {
  if (x.shape() != y.shape())
    throw ShapeError("ssim: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  int c, h, w;
  vlora::detail::chw(x.shape(), c, h, w);
  if (h < cfg.window || w < cfg.window)
    throw ShapeError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " smaller than window " + std::to_string(cfg.window));
  const T c1 = static_cast<T>(cfg.k1 * cfg.dynamic_range * cfg.k1 * cfg.dynamic_range);
  const T c2 = static_cast<T>(cfg.k2 * cfg.dynamic_range * cfg.k2 * cfg.dynamic_range);

  Var<T> mu_x = box_filter_valid(x, cfg.window);
  Var<T> mu_y = box_filter_valid(y, cfg.window);
  Var<T> xx = box_filter_valid(x * x, cfg.window) - mu_x * mu_x;
  Var<T> yy = box_filter_valid(y * y, cfg.window) - mu_y * mu_y;
  Var<T> xy = box_filter_valid(x * y, cfg.window) - mu_x * mu_y;

  Var<T> mu2 = mu_x * mu_y;
  Var<T> lum = add_scalar(mul_scalar(mu2, T(2)), c1) /
               add_scalar(mu_x * mu_x + mu_y * mu_y, c1);
  Var<T> cs = add_scalar(mul_scalar(xy, T(2)), c2) / add_scalar(xx + yy, c2);
  return {lum, cs};
}

template <typename T>
Var<T> flatten_channels(const Var<T>& map) {
  return map.shape().size() == 3 ? channel_mean(map) : map;
}

}  // namespace detail

template <typename T>
struct SsimResult {
  Var<T> mean;  // scalar
  Var<T> map;   // per-pixel SSIM over the valid region, channel-averaged
};

// Single-scale SSIM with a uniform window. Differentiable in both images.
template <typename T>
SsimResult<T> ssim(const Var<T>& x, const Var<T>& y, const SsimConfig& cfg = {}) {
  cfg.validate();
  auto m = detail::ssim_moments(x, y, cfg);
  Var<T> map = detail::flatten_channels(m.luminance * m.contrast_structure);
  return {mean_all(map), map};
}

// Multi-scale SSIM: contrast/structure at every scale, luminance only at the
// coarsest, each reduced to its scale mean before exponentiation. Downsampling
// is a 2x2 average with stride 2.
template <typename T>
Var<T> ms_ssim(const Var<T>& x, const Var<T>& y, const MsSsimConfig& cfg = {}) {
  cfg.validate();
  int c, h, w;
  vlora::detail::chw(x.shape(), c, h, w);
  const int feasible = max_feasible_scales(h, w, cfg.ssim.window);
  if (feasible < cfg.scales)
    throw ConfigError("ms_ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                      " supports at most " + std::to_string(feasible) + " scales (requested " +
                      std::to_string(cfg.scales) + ")");
  Var<T> cur_x = x, cur_y = y;
  Var<T> total;
  // Exponent 1 is applied as identity: no positivity clamp is needed then,
  // and the single-scale case degenerates to plain SSIM exactly.
  auto weighted = [](const Var<T>& v, double e) {
    return e == 1.0 ? v : pow_scalar(clamp_min(v, static_cast<T>(1e-8)), static_cast<T>(e));
  };
  for (int j = 0; j < cfg.scales; ++j) {
    auto m = detail::ssim_moments(cur_x, cur_y, cfg.ssim);
    if (j == cfg.scales - 1) {
      // Coarsest scale: luminance enters here, through the mean of the full
      // per-pixel SSIM map (the reference implementation's convention).
      Var<T> term = weighted(mean_all(m.luminance * m.contrast_structure), cfg.alpha());
      total = total.defined() ? total * term : term;
    } else {
      Var<T> term =
          weighted(mean_all(m.contrast_structure), cfg.weights[static_cast<size_t>(j)]);
      total = total.defined() ? total * term : term;
      cur_x = avg_pool2(cur_x);
      cur_y = avg_pool2(cur_y);
    }
  }
  return total;
}

// Per-pixel MS-SSIM used inside the reprojection loss, where a spatial map is
// needed for the per-pixel minimum over source frames. Each scale's valid-
// region map is resized back to full resolution and the exponents are applied
// pixelwise; for constant images this agrees with ms_ssim exactly.
template <typename T>
Var<T> ms_ssim_map(const Var<T>& x, const Var<T>& y, const MsSsimConfig& cfg = {}) {
  cfg.validate();
  int c, h, w;
  vlora::detail::chw(x.shape(), c, h, w);
  const int feasible = max_feasible_scales(h, w, cfg.ssim.window);
  if (feasible < cfg.scales)
    throw ConfigError("ms_ssim_map: image supports at most " + std::to_string(feasible) +
                      " scales (requested " + std::to_string(cfg.scales) + ")");
  Var<T> cur_x = x, cur_y = y;
  Var<T> total;
  auto weighted = [](const Var<T>& v, double e) {
    return e == 1.0 ? v : pow_scalar(clamp_min(v, static_cast<T>(1e-8)), static_cast<T>(e));
  };
  for (int j = 0; j < cfg.scales; ++j) {
    auto m = detail::ssim_moments(cur_x, cur_y, cfg.ssim);
    if (j == cfg.scales - 1) {
      Var<T> full = weighted(detail::flatten_channels(m.luminance * m.contrast_structure),
                             cfg.alpha());
      Var<T> term = resize_bilinear(full, h, w);
      total = total.defined() ? total * term : term;
    } else {
      Var<T> cs = weighted(detail::flatten_channels(m.contrast_structure),
                           cfg.weights[static_cast<size_t>(j)]);
      total = total.defined() ? total * resize_bilinear(cs, h, w) : resize_bilinear(cs, h, w);
      cur_x = avg_pool2(cur_x);
      cur_y = avg_pool2(cur_y);
    }
  }
  return total;
}

// Reduces a config to the feasible scale count for small images, with the
// kept weights renormalized to sum to one.
inline MsSsimConfig reduce_scales(const MsSsimConfig& cfg, int h, int w, bool* reduced = nullptr) {
  const int feasible = max_feasible_scales(h, w, cfg.ssim.window);
  if (reduced) *reduced = false;
  if (feasible >= cfg.scales) return cfg;
  if (feasible < 1)
    throw ConfigError("ms_ssim: image smaller than one SSIM window");
  MsSsimConfig out = cfg;
  out.scales = feasible;
  out.weights.assign(cfg.weights.begin(), cfg.weights.begin() + feasible);
  double sum = 0;
  for (double v : out.weights) sum += v;
  for (double& v : out.weights) v /= sum;
  out.luminance_weight = -1.0;
  if (reduced) *reduced = true;
  return out;
}

}  // namespace vlora::losses
