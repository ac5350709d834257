#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vlora/core/image_ops.hpp"
#include "vlora/lora.hpp"

namespace vlora::model {

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

template <typename T>
using ParamSet = std::vector<NamedParam<T>>;

struct EncoderConfig {
  int blocks = 12;
  int embed_dim = 96;
  int heads = 4;
  int patch_size = 8;
  double mlp_ratio = 4.0;
  // Input resolution the position embedding is built for. Arbitrary-size
  // embedding interpolation is out of scope.
  int image_width = 64;
  int image_height = 64;
  // Scale of the (frozen) position embedding. Pretrained encoders carry
  // position signals comparable to the feature scale; a freshly seeded
  // stand-in needs a similar magnitude for its features to be
  // position-discriminative.
  double pos_embed_std = 0.02;

  void validate() const {
    if (blocks < 1) throw ConfigError("encoder: blocks must be >= 1");
    if (embed_dim % heads != 0) throw ConfigError("encoder: embed_dim must be divisible by heads");
    if (patch_size < 1) throw ConfigError("encoder: patch_size must be >= 1");
    if (image_width % patch_size != 0 || image_height % patch_size != 0)
      throw ConfigError("encoder: image size must be divisible by patch_size");
  }
};

template <typename T>
struct AttentionProjection {
  Var<T> weight;  // [out, in]
  Var<T> bias;    // [out]
  std::optional<lora::LoraAdapter<T>> adapter;

  Var<T> forward(const Var<T>& x) const {
    Var<T> y = linear(x, weight, bias);
    if (adapter) y = y + lora::adapter_delta(*adapter, x);
    return y;
  }
};

template <typename T>
struct EncoderBlock {
  AttentionProjection<T> q, k, v, o;
  Var<T> norm1_gain, norm1_bias, norm2_gain, norm2_bias;
  Var<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  int heads = 1;

  Var<T> forward(const Var<T>& x) const {
    const int dim = x.shape()[1];
    const int head_dim = dim / heads;
    Var<T> xn = layer_norm(x, norm1_gain, norm1_bias);
    Var<T> qs = q.forward(xn), ks = k.forward(xn), vs = v.forward(xn);
    std::vector<Var<T>> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    const T att_scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(head_dim)));
    for (int h = 0; h < heads; ++h) {
      Var<T> qh = slice_cols(qs, h * head_dim, head_dim);
      Var<T> kh = slice_cols(ks, h * head_dim, head_dim);
      Var<T> vh = slice_cols(vs, h * head_dim, head_dim);
      Var<T> scores = mul_scalar(matmul(qh, transpose2d(kh)), att_scale);
      head_outs.push_back(matmul(softmax_rows(scores), vh));
    }
    Var<T> attn = o.forward(concat_cols(head_outs));
    Var<T> res = x + attn;
    Var<T> mn = layer_norm(res, norm2_gain, norm2_bias);
    Var<T> mlp = linear(gelu(linear(mn, mlp_w1, mlp_b1)), mlp_w2, mlp_b2);
    return res + mlp;
  }
};

// Miniature ViT-style encoder: patch embedding, class token, learned position
// embedding, pre-norm attention/MLP blocks. Stands in for the foundation
// encoder; its weights are random but frozen during adaptation, which is all
// the adaptation mechanics care about.
template <typename T>
class TransformerEncoder {
 public:
  using scalar_type = T;

  TransformerEncoder() = default;

  TransformerEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const int d = cfg.embed_dim;
    const int patch_in = 3 * cfg.patch_size * cfg.patch_size;
    const T wstd = static_cast<T>(0.02);
    patch_weight_ = Var<T>(Tensor<T>::randn({d, patch_in}, rng, wstd), true);
    patch_bias_ = Var<T>(Tensor<T>::zeros({d}), true);
    cls_token_ = Var<T>(Tensor<T>::randn({1, d}, rng, wstd), true);
    const int tokens = (cfg.image_height / cfg.patch_size) * (cfg.image_width / cfg.patch_size);
    pos_embedding_ =
        Var<T>(Tensor<T>::randn({tokens + 1, d}, rng, static_cast<T>(cfg.pos_embed_std)), true);
    blocks_.resize(static_cast<size_t>(cfg.blocks));
    for (auto& b : blocks_) {
      b.heads = cfg.heads;
      auto proj = [&](int out, int in) {
        AttentionProjection<T> p;
        p.weight = Var<T>(Tensor<T>::randn({out, in}, rng, wstd), true);
        p.bias = Var<T>(Tensor<T>::zeros({out}), true);
        return p;
      };
      b.q = proj(d, d);
      b.k = proj(d, d);
      b.v = proj(d, d);
      b.o = proj(d, d);
      b.norm1_gain = Var<T>(Tensor<T>::ones({d}), true);
      b.norm1_bias = Var<T>(Tensor<T>::zeros({d}), true);
      b.norm2_gain = Var<T>(Tensor<T>::ones({d}), true);
      b.norm2_bias = Var<T>(Tensor<T>::zeros({d}), true);
      const int hidden = static_cast<int>(d * cfg.mlp_ratio);
      b.mlp_w1 = Var<T>(Tensor<T>::randn({hidden, d}, rng, wstd), true);
      b.mlp_b1 = Var<T>(Tensor<T>::zeros({hidden}), true);
      b.mlp_w2 = Var<T>(Tensor<T>::randn({d, hidden}, rng, wstd), true);
      b.mlp_b2 = Var<T>(Tensor<T>::zeros({d}), true);
    }
  }

  const EncoderConfig& config() const { return cfg_; }
  int block_count() const { return static_cast<int>(blocks_.size()); }

  // Position embedding is lazily sized to the token count of the first input
  // resolution seen; subsequent inputs must match.
  std::vector<Var<T>> forward(const Tensor<T>& image) const {
    const int h = image.shape()[1], w = image.shape()[2];
    const int p = cfg_.patch_size;
    if (h % p != 0 || w % p != 0)
      throw ShapeError("encoder: image dims must be divisible by patch size " + std::to_string(p));
    const int gh = h / p, gw = w / p;
    const int tokens = gh * gw;

    Tensor<T> patches({tokens, 3 * p * p});
    for (int gy = 0; gy < gh; ++gy)
      for (int gx = 0; gx < gw; ++gx) {
        T* dst = patches.data() + static_cast<int64_t>(gy * gw + gx) * 3 * p * p;
        for (int c = 0; c < 3; ++c)
          for (int py = 0; py < p; ++py)
            for (int px = 0; px < p; ++px)
              *dst++ = image.at(c, gy * p + py, gx * p + px);
      }

    Var<T> x = linear(constant(std::move(patches)), patch_weight_, patch_bias_);
    x = concat_rows<T>({cls_token_, x});
    if (pos_embedding_.shape()[0] != tokens + 1)
      throw ShapeError("encoder: token count " + std::to_string(tokens + 1) +
                       " does not match position embedding " +
                       std::to_string(pos_embedding_.shape()[0]));
    x = x + pos_embedding_;
    assert(x.shape()[0] == gh * gw + 1);

    std::vector<Var<T>> features;
    features.reserve(blocks_.size());
    for (const auto& b : blocks_) {
      x = b.forward(x);
      features.push_back(x);
    }
    return features;
  }

  template <typename Fn>
  void for_each_projection(Fn&& fn) {
    for (size_t i = 0; i < blocks_.size(); ++i) {
      fn(static_cast<int>(i), std::string("q"), blocks_[i].q);
      fn(static_cast<int>(i), std::string("k"), blocks_[i].k);
      fn(static_cast<int>(i), std::string("v"), blocks_[i].v);
      fn(static_cast<int>(i), std::string("o"), blocks_[i].o);
    }
  }

  template <typename Fn>
  void for_each_projection(Fn&& fn) const {
    for (size_t i = 0; i < blocks_.size(); ++i) {
      fn(static_cast<int>(i), std::string("q"), blocks_[i].q);
      fn(static_cast<int>(i), std::string("k"), blocks_[i].k);
      fn(static_cast<int>(i), std::string("v"), blocks_[i].v);
      fn(static_cast<int>(i), std::string("o"), blocks_[i].o);
    }
  }

  void freeze_all() {
    collect_params([](const std::string&, Var<T>& v) { v.set_requires_grad(false); });
  }

  void collect(ParamSet<T>& out, const std::string& prefix) const {
    const_cast<TransformerEncoder*>(this)->collect_params(
        [&](const std::string& name, Var<T>& v) { out.push_back({prefix + name, v}); });
  }

  template <typename Fn>
  void collect_params(Fn&& fn) {
    fn("patch.weight", patch_weight_);
    fn("patch.bias", patch_bias_);
    fn("cls_token", cls_token_);
    fn("pos_embedding", pos_embedding_);
    for (size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = "block" + std::to_string(i) + ".";
      auto& b = blocks_[i];
      auto proj = [&](const char* n, AttentionProjection<T>& pr) {
        fn(p + n + std::string(".weight"), pr.weight);
        fn(p + n + std::string(".bias"), pr.bias);
        if (pr.adapter) {
          fn(p + n + std::string(".lora_down"), pr.adapter->down);
          fn(p + n + std::string(".lora_up"), pr.adapter->up);
        }
      };
      proj("attn.q", b.q);
      proj("attn.k", b.k);
      proj("attn.v", b.v);
      proj("attn.o", b.o);
      fn(p + "norm1.gain", b.norm1_gain);
      fn(p + "norm1.bias", b.norm1_bias);
      fn(p + "norm2.gain", b.norm2_gain);
      fn(p + "norm2.bias", b.norm2_bias);
      fn(p + "mlp.w1", b.mlp_w1);
      fn(p + "mlp.b1", b.mlp_b1);
      fn(p + "mlp.w2", b.mlp_w2);
      fn(p + "mlp.b2", b.mlp_b2);
    }
  }

 private:
  EncoderConfig cfg_;
  Var<T> patch_weight_, patch_bias_, cls_token_, pos_embedding_;
  std::vector<EncoderBlock<T>> blocks_;
};

// The 4-resolution sigmoid disparity output, index 0 = full resolution.
template <typename T>
struct DepthPyramid {
  std::vector<Var<T>> disparities;
  double min_depth = 0.1;
  double max_depth = 100.0;
};

// depth = 1 / (1/max + (1/min - 1/max) * disp); disp in (0,1) maps onto
// [min_depth, max_depth], monotone decreasing.
template <typename T>
Var<T> disparity_to_depth(const Var<T>& disp, double min_depth, double max_depth) {
  if (!(0 < min_depth && min_depth < max_depth))
    throw ConfigError("disparity_to_depth requires 0 < min_depth < max_depth");
  const T inv_max = static_cast<T>(1.0 / max_depth);
  const T spread = static_cast<T>(1.0 / min_depth - 1.0 / max_depth);
  return reciprocal(add_scalar(mul_scalar(disp, spread), inv_max));
}

struct DecoderConfig {
  int channels = 24;
  int head_channels = 8;
  std::vector<int> tap_blocks = {3, 6, 9, 12};  // 1-indexed encoder blocks

  void validate(int encoder_blocks) const {
    if (static_cast<int>(tap_blocks.size()) != 4)
      throw ConfigError("decoder: exactly 4 tap blocks required");
    for (int t : tap_blocks)
      if (t < 1 || t > encoder_blocks)
        throw ConfigError("decoder: tap block " + std::to_string(t) + " out of range");
  }
};

// Convolutional neck + upsampling head over transformer features. Reads one
// token grid per tap block, projects to a common width, and fuses coarse to
// fine, emitting a sigmoid disparity at 1/8, 1/4, 1/2 and full resolution.
template <typename T>
class DepthDecoder {
 public:
  DepthDecoder() = default;

  DepthDecoder(const DecoderConfig& cfg, int embed_dim, Rng& rng) : cfg_(cfg) {
    const int c = cfg.channels, hc = cfg.head_channels;
    auto conv_init = [&](int out, int in, int k) {
      const double fan_in = static_cast<double>(in) * k * k;
      return Var<T>(Tensor<T>::randn({out, in, k, k}, rng, static_cast<T>(std::sqrt(2.0 / fan_in))),
                    true);
    };
    for (int s = 0; s < 4; ++s) {
      proj_w_[s] = conv_init(c, embed_dim, 1);
      proj_b_[s] = Var<T>(Tensor<T>::zeros({c}), true);
      fuse_w_[s] = conv_init(c, c, 3);
      fuse_b_[s] = Var<T>(Tensor<T>::zeros({c}), true);
      head1_w_[s] = conv_init(hc, c, 3);
      head1_b_[s] = Var<T>(Tensor<T>::zeros({hc}), true);
      head2_w_[s] = conv_init(1, hc, 1);
      head2_b_[s] = Var<T>(Tensor<T>::zeros({1}), true);
    }
  }

  // features: per-block token matrices [tokens+1, embed]; grid is the patch
  // grid of the encoder input. Returns disparities coarse-to-fine internally
  // but ordered full-resolution-first.
  std::vector<Var<T>> forward(const std::vector<Var<T>>& features, int grid_h, int grid_w,
                              int patch_size) const {
    std::array<Var<T>, 4> taps;
    for (int s = 0; s < 4; ++s) {
      const int blk = cfg_.tap_blocks[static_cast<size_t>(s)] - 1;
      const Var<T>& f = features[static_cast<size_t>(blk)];
      Var<T> tok = slice_rows(f, 1, grid_h * grid_w);       // drop class token
      Var<T> grid = reshape(transpose2d(tok), {f.shape()[1], grid_h, grid_w});
      taps[static_cast<size_t>(s)] = conv2d(grid, proj_w_[s], proj_b_[s]);
    }
    // stage s=3 is coarsest (1/8 of input): patch grid resolution
    std::vector<Var<T>> disp(4);
    Var<T> x;
    for (int s = 3; s >= 0; --s) {
      const int scale = 1 << s;                 // 8,4,2,1 relative to patch grid x8
      const int th = grid_h * patch_size / scale, tw = grid_w * patch_size / scale;
      Var<T> lateral = resize_bilinear(taps[static_cast<size_t>(s)], th, tw);
      x = (s == 3) ? lateral : resize_bilinear(x, th, tw) + lateral;
      x = relu(conv2d(x, fuse_w_[s], fuse_b_[s], 1, 1));
      Var<T> head = relu(conv2d(x, head1_w_[s], head1_b_[s], 1, 1));
      Var<T> logits = conv2d(head, head2_w_[s], head2_b_[s]);
      disp[static_cast<size_t>(s)] = reshape(sigmoid(logits), {th, tw});
    }
    return disp;
  }

  void collect(ParamSet<T>& out, const std::string& prefix) const {
    for (int s = 0; s < 4; ++s) {
      const std::string p = prefix + "stage" + std::to_string(s) + ".";
      auto& self = const_cast<DepthDecoder&>(*this);
      out.push_back({p + "proj.weight", self.proj_w_[s]});
      out.push_back({p + "proj.bias", self.proj_b_[s]});
      out.push_back({p + "fuse.weight", self.fuse_w_[s]});
      out.push_back({p + "fuse.bias", self.fuse_b_[s]});
      out.push_back({p + "head1.weight", self.head1_w_[s]});
      out.push_back({p + "head1.bias", self.head1_b_[s]});
      out.push_back({p + "head2.weight", self.head2_w_[s]});
      out.push_back({p + "head2.bias", self.head2_b_[s]});
    }
  }

  std::array<Var<T>, 4> proj_w_, proj_b_, fuse_w_, fuse_b_;
  std::array<Var<T>, 4> head1_w_, head1_b_, head2_w_, head2_b_;

 private:
  DecoderConfig cfg_;
};

struct DepthNetworkConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  double min_depth = 0.1;
  double max_depth = 100.0;
};

template <typename T>
class DepthNetwork {
 public:
  DepthNetwork() = default;
  DepthNetwork(const DepthNetworkConfig& cfg, Rng& rng)
      : cfg_(cfg), encoder_(cfg.encoder, rng), decoder_(cfg.decoder, cfg.encoder.embed_dim, rng) {
    cfg.decoder.validate(cfg.encoder.blocks);
  }

  // Produces the 4-resolution disparity pyramid for one [3,H,W] image.
  DepthPyramid<T> forward(const Tensor<T>& image) const {
    const int divisor = cfg_.encoder.patch_size * 8;
    if (image.ndim() != 3 || image.shape()[0] != 3)
      throw ShapeError("depth_forward: expected [3,H,W] image");
    const int h = image.shape()[1], w = image.shape()[2];
    if (h % divisor != 0 || w % divisor != 0)
      throw ShapeError("depth_forward: image dims must be divisible by " + std::to_string(divisor));
    auto features = encoder_.forward(image);
    DepthPyramid<T> pyr;
    pyr.min_depth = cfg_.min_depth;
    pyr.max_depth = cfg_.max_depth;
    pyr.disparities = decoder_.forward(features, h / cfg_.encoder.patch_size,
                                       w / cfg_.encoder.patch_size, cfg_.encoder.patch_size);
    return pyr;
  }

  TransformerEncoder<T>& encoder() { return encoder_; }
  const TransformerEncoder<T>& encoder() const { return encoder_; }
  DepthDecoder<T>& decoder() { return decoder_; }
  const DepthNetworkConfig& config() const { return cfg_; }

  void collect(ParamSet<T>& out) const {
    encoder_.collect(out, "encoder.");
    decoder_.collect(out, "decoder.");
  }

 private:
  DepthNetworkConfig cfg_;
  TransformerEncoder<T> encoder_;
  DepthDecoder<T> decoder_;
};

template <typename T>
struct PoseEstimate {
  Var<T> axis_angle;   // [3]
  Var<T> translation;  // [3]
};

struct PoseNetConfig {
  int base_channels = 16;
  double output_scale = 0.01;
};

// Small convolutional ego-motion regressor on a channel-concatenated frame
// pair; outputs are scaled down to keep early training near the identity.
template <typename T>
class PoseNet {
 public:
  PoseNet() = default;

  PoseNet(const PoseNetConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int c = cfg.base_channels;
    auto conv_init = [&](int out, int in, int k) {
      const double fan_in = static_cast<double>(in) * k * k;
      return Var<T>(Tensor<T>::randn({out, in, k, k}, rng, static_cast<T>(std::sqrt(2.0 / fan_in))),
                    true);
    };
    conv1_w_ = conv_init(c, 6, 3);
    conv1_b_ = Var<T>(Tensor<T>::zeros({c}), true);
    conv2_w_ = conv_init(2 * c, c, 3);
    conv2_b_ = Var<T>(Tensor<T>::zeros({2 * c}), true);
    conv3_w_ = conv_init(4 * c, 2 * c, 3);
    conv3_b_ = Var<T>(Tensor<T>::zeros({4 * c}), true);
    fc_w_ = Var<T>(Tensor<T>::randn({6, 4 * c}, rng, T(0.01)), true);
    fc_b_ = Var<T>(Tensor<T>::zeros({6}), true);
  }

  PoseEstimate<T> forward(const Tensor<T>& frame_a, const Tensor<T>& frame_b) const {
    if (frame_a.shape() != frame_b.shape())
      throw ShapeError("pose_forward: frame shapes differ");
    const int h = frame_a.shape()[1], w = frame_a.shape()[2];
    Tensor<T> stacked({6, h, w});
    std::copy_n(frame_a.data(), frame_a.size(), stacked.data());
    std::copy_n(frame_b.data(), frame_b.size(), stacked.data() + frame_a.size());
    Var<T> x = constant(std::move(stacked));
    x = relu(conv2d(x, conv1_w_, conv1_b_, 2, 1));
    x = relu(conv2d(x, conv2_w_, conv2_b_, 2, 1));
    x = relu(conv2d(x, conv3_w_, conv3_b_, 2, 1));
    Var<T> pooled = global_avg_pool(x);
    Var<T> out = mul_scalar(linear(pooled, fc_w_, fc_b_), static_cast<T>(cfg_.output_scale));
    PoseEstimate<T> est;
    est.axis_angle = reshape(slice_cols(out, 0, 3), {3});
    est.translation = reshape(slice_cols(out, 3, 3), {3});
    return est;
  }

  void collect(ParamSet<T>& out, const std::string& prefix) const {
    auto& self = const_cast<PoseNet&>(*this);
    out.push_back({prefix + "conv1.weight", self.conv1_w_});
    out.push_back({prefix + "conv1.bias", self.conv1_b_});
    out.push_back({prefix + "conv2.weight", self.conv2_w_});
    out.push_back({prefix + "conv2.bias", self.conv2_b_});
    out.push_back({prefix + "conv3.weight", self.conv3_w_});
    out.push_back({prefix + "conv3.bias", self.conv3_b_});
    out.push_back({prefix + "fc.weight", self.fc_w_});
    out.push_back({prefix + "fc.bias", self.fc_b_});
  }

  Var<T> conv1_w_, conv1_b_, conv2_w_, conv2_b_, conv3_w_, conv3_b_, fc_w_, fc_b_;

 private:
  PoseNetConfig cfg_;
};

}  // namespace vlora::model
