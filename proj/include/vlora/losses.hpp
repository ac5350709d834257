#pragma once

#include <utility>
#include <vector>

#include "vlora/geometry.hpp"
#include "vlora/model.hpp"
#include "vlora/ssim.hpp"

namespace vlora::losses {

struct ReprojectionLossConfig {
  double alpha = 0.9;  // weight on (1 - MS-SSIM)
  double beta = 0.1;   // weight on mean absolute difference
  double smoothness_weight = 1e-3;
  bool per_pixel_min = true;

  void validate() const {
    if (alpha < 0 || beta < 0) throw ConfigError("reprojection loss: weights must be >= 0");
  }
};

template <typename T>
struct MsReprojectionResult {
  Var<T> loss;
  bool empty_mask = false;
};

// alpha*(1 - MS-SSIM) + beta*L1, the L1 averaged over valid pixels only.
// An empty mask yields a zero loss and a warning flag rather than an error.
template <typename T>
MsReprojectionResult<T> ms_reprojection_loss(const Var<T>& target, const Var<T>& estimate,
                                             const Tensor<T>& valid_mask,
                                             const ReprojectionLossConfig& cfg,
                                             const MsSsimConfig& ms_cfg) {
  cfg.validate();
  if (target.shape() != estimate.shape())
    throw ShapeError("ms_reprojection_loss: image shapes differ");
  int c, h, w;
  vlora::detail::chw(target.shape(), c, h, w);
  const double n_valid = valid_mask.sum();
  if (n_valid == 0.0) return {scalar_var<T>(T(0)), true};

  Var<T> similarity = ms_ssim(target, estimate, ms_cfg);
  Var<T> ssim_term = mul_scalar(add_scalar(neg(similarity), T(1)), static_cast<T>(cfg.alpha));

  Var<T> abs_diff = detail::flatten_channels(abs_op(target - estimate));
  Var<T> masked = abs_diff * constant(valid_mask);
  Var<T> l1_term = mul_scalar(sum_all(masked), static_cast<T>(cfg.beta / n_valid));
  return {ssim_term + l1_term, false};
}

// Edge-aware first-order smoothness on mean-normalized disparity: image
// gradients damp the penalty so depth edges may follow intensity edges.
template <typename T>
Var<T> edge_aware_smoothness(const Var<T>& disparity, const Tensor<T>& image) {
  if (disparity.shape().size() != 2) throw ShapeError("edge_aware_smoothness: disparity must be [H,W]");
  const int h = disparity.shape()[0], w = disparity.shape()[1];
  if (image.ndim() != 3 || image.shape()[1] != h || image.shape()[2] != w)
    throw ShapeError("edge_aware_smoothness: image/disparity shapes differ");

  Var<T> denom = add_scalar(mean_all(disparity), static_cast<T>(1e-7));
  Var<T> norm_disp = mul_broadcast(disparity, reciprocal(denom));

  auto edge_weight = [&](bool horizontal) {
    Var<T> img = constant(image);
    Var<T> g = horizontal ? diff_x(img) : diff_y(img);
    Tensor<T> wmap = channel_mean(abs_op(g)).value();
    for (int64_t i = 0; i < wmap.size(); ++i) wmap[i] = std::exp(-wmap[i]);
    return wmap;
  };

  Var<T> gx = abs_op(diff_x(norm_disp)) * constant(edge_weight(true));
  Var<T> gy = abs_op(diff_y(norm_disp)) * constant(edge_weight(false));
  return mean_all(gx) + mean_all(gy);
}

struct LossConfig {
  MsSsimConfig ms_ssim;
  ReprojectionLossConfig reproj;
  double min_depth = 0.1;
  double max_depth = 100.0;
  int loss_scales = 4;  // how many pyramid levels enter the loss

  void validate() const {
    ms_ssim.validate();
    reproj.validate();
    if (loss_scales < 1 || loss_scales > 4) throw ConfigError("loss_scales must be in [1,4]");
  }
};

template <typename T>
struct SslLossResult {
  Var<T> total;
  double reprojection = 0;  // detached per-term values for logging
  double smoothness = 0;
  bool empty_mask_warning = false;
  bool ms_scales_reduced = false;
};

// Per-source rigid motion from the target frame, as differentiable rotation
// and translation Vars.
template <typename T>
struct MotionVars {
  Var<T> rotation;     // [3,3]
  Var<T> translation;  // [3]
};

// The self-supervised objective for one target frame: every pyramid scale is
// upsampled to full resolution, each source frame is warped into the target
// view, the per-pixel reprojection map is reduced over sources (minimum by
// default), and the masked mean plus weighted smoothness is averaged over
// scales.
template <typename T>
SslLossResult<T> total_ssl_loss(const Tensor<T>& target_image,
                                const std::vector<Tensor<T>>& source_images,
                                const std::vector<Var<T>>& disparity_pyramid,
                                const std::vector<MotionVars<T>>& motions,
                                const geometry::CameraIntrinsics& K, const LossConfig& cfg) {
  cfg.validate();
  if (source_images.empty()) throw ConfigError("total_ssl_loss: need at least one source frame");
  if (source_images.size() != motions.size())
    throw ConfigError("total_ssl_loss: one motion per source frame required");
  if (disparity_pyramid.empty()) throw ConfigError("total_ssl_loss: empty disparity pyramid");
  const int h = target_image.shape()[1], w = target_image.shape()[2];

  SslLossResult<T> res;
  MsSsimConfig ms_cfg = reduce_scales(cfg.ms_ssim, h, w, &res.ms_scales_reduced);

  Var<T> target = constant(target_image);
  std::vector<Var<T>> sources;
  sources.reserve(source_images.size());
  for (const auto& s : source_images) sources.push_back(constant(s));

  const int n_scales = std::min<int>(cfg.loss_scales, static_cast<int>(disparity_pyramid.size()));
  Var<T> total;
  double reproj_acc = 0, smooth_acc = 0;
  for (int s = 0; s < n_scales; ++s) {
    const Var<T>& disp = disparity_pyramid[static_cast<size_t>(s)];
    Var<T> disp_full = (disp.shape()[0] == h && disp.shape()[1] == w)
                           ? disp
                           : resize_bilinear(disp, h, w);
    Var<T> depth = model::disparity_to_depth(disp_full, cfg.min_depth, cfg.max_depth);

    std::vector<Var<T>> per_source_maps;
    std::vector<Tensor<T>> masks;
    per_source_maps.reserve(sources.size());
    for (size_t i = 0; i < sources.size(); ++i) {
      auto view = geometry::synthesize_view(sources[i], depth, K, motions[i].rotation,
                                            motions[i].translation);
      Var<T> sim_map = ms_ssim_map(target, view.image, ms_cfg);
      Var<T> ssim_part =
          mul_scalar(add_scalar(neg(sim_map), T(1)), static_cast<T>(cfg.reproj.alpha));
      Var<T> l1_part = mul_scalar(detail::flatten_channels(abs_op(target - view.image)),
                                  static_cast<T>(cfg.reproj.beta));
      per_source_maps.push_back(ssim_part + l1_part);
      masks.push_back(std::move(view.valid));
    }

    // Invalid pixels are pushed to a large constant so a valid competitor
    // always wins the minimum; the union mask drops pixels valid nowhere.
    Tensor<T> union_mask({h, w});
    for (size_t i = 0; i < masks.size(); ++i)
      for (int64_t px = 0; px < union_mask.size(); ++px)
        if (masks[i][px] != T(0)) union_mask[px] = T(1);
    const double n_valid = union_mask.sum();
    Var<T> reduced;
    if (cfg.reproj.per_pixel_min) {
      for (size_t i = 0; i < per_source_maps.size(); ++i) {
        Tensor<T> big({h, w});
        for (int64_t px = 0; px < big.size(); ++px)
          big[px] = masks[i][px] != T(0) ? T(0) : T(1e6);
        Var<T> gated = per_source_maps[i] * constant(masks[i]) + constant(std::move(big));
        reduced = reduced.defined() ? minimum(reduced, gated) : gated;
      }
    } else {
      // Masked average over sources, pixelwise.
      Tensor<T> count({h, w});
      for (size_t i = 0; i < masks.size(); ++i)
        for (int64_t px = 0; px < count.size(); ++px) count[px] += masks[i][px];
      for (int64_t px = 0; px < count.size(); ++px)
        count[px] = count[px] > T(0) ? T(1) / count[px] : T(0);
      for (size_t i = 0; i < per_source_maps.size(); ++i) {
        Var<T> gated = per_source_maps[i] * constant(masks[i]);
        reduced = reduced.defined() ? reduced + gated : gated;
      }
      reduced = reduced * constant(std::move(count));
    }

    Var<T> scale_loss;
    if (n_valid > 0) {
      Var<T> masked = reduced * constant(union_mask);
      scale_loss = mul_scalar(sum_all(masked), static_cast<T>(1.0 / n_valid));
    } else {
      res.empty_mask_warning = true;
      scale_loss = scalar_var<T>(T(0));
    }
    reproj_acc += static_cast<double>(scale_loss.scalar());

    if (cfg.reproj.smoothness_weight > 0) {
      Tensor<T> img_at_scale = target_image;
      for (int k = 0; k < s; ++k) img_at_scale = avg_pool2_tensor(img_at_scale);
      if (img_at_scale.shape()[1] != disp.shape()[0] || img_at_scale.shape()[2] != disp.shape()[1])
        img_at_scale = resize_bilinear_tensor(img_at_scale, disp.shape()[0], disp.shape()[1]);
      Var<T> smooth = edge_aware_smoothness(disp, img_at_scale);
      smooth_acc += static_cast<double>(smooth.scalar()) * cfg.reproj.smoothness_weight;
      scale_loss = scale_loss + mul_scalar(smooth, static_cast<T>(cfg.reproj.smoothness_weight));
    }
    total = total.defined() ? total + scale_loss : scale_loss;
  }
  res.total = mul_scalar(total, T(1) / static_cast<T>(n_scales));
  res.reprojection = reproj_acc / n_scales;
  res.smoothness = smooth_acc / n_scales;
  return res;
}

}  // namespace vlora::losses
