#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vlora/checkpoint.hpp"
#include "vlora/config.hpp"
#include "vlora/losses.hpp"
#include "vlora/metrics.hpp"
#include "vlora/model.hpp"
#include "vlora/synth.hpp"

namespace vlora::train {

struct TrainError : std::runtime_error {
  explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

inline lora::RankVector default_rank_vector(int blocks) {
  if (blocks == 12) return lora::RankVector({14, 14, 12, 12, 10, 10, 8, 8, 8, 8, 8, 8});
  throw ConfigError("lora: rank vector required for a " + std::to_string(blocks) +
                    "-block encoder (the built-in default exists only for 12 blocks)");
}

// Depth network + pose network built from one experiment config, with the
// adapters injected and the encoder frozen when adaptation is enabled.
template <typename T>
struct Pipeline {
  config::ExperimentConfig cfg;
  model::DepthNetwork<T> depth_net;
  model::PoseNet<T> pose_net;

  static Pipeline build(const config::ExperimentConfig& cfg_in) {
    config::ExperimentConfig cfg = cfg_in;
    cfg.loss.cfg.min_depth = cfg.model.depth.min_depth;
    cfg.loss.cfg.max_depth = cfg.model.depth.max_depth;
    Rng rng(cfg.model.seed);
    Rng depth_rng = rng.fork(1), pose_rng = rng.fork(2), lora_rng = rng.fork(3);
    Pipeline p{cfg, model::DepthNetwork<T>(cfg.model.depth, depth_rng),
               model::PoseNet<T>(cfg.model.pose, pose_rng)};
    if (cfg.lora.enabled) {
      auto spec = cfg.lora.injection;
      if (spec.rank_vector.ranks.empty())
        spec.rank_vector = default_rank_vector(cfg.model.depth.encoder.blocks);
      lora::inject_vector_lora(p.depth_net.encoder(), spec, lora_rng);
    }
    return p;
  }

  model::ParamSet<T> params() const {
    model::ParamSet<T> ps;
    depth_net.collect(ps);
    pose_net.collect(ps, "pose.");
    return ps;
  }

  // Motion from the target camera into the source camera, as differentiable
  // rotation/translation built from the pose-network output.
  losses::MotionVars<T> estimate_motion(const Tensor<T>& target, const Tensor<T>& source) const {
    auto est = pose_net.forward(target, source);
    return {geometry::rotation_var(est.axis_angle), est.translation};
  }
};

template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  AdamOptimizer(const model::ParamSet<T>& params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params)
      if (p.var.requires_grad()) {
        params_.push_back(p.var);
        slots_.push_back({p.name, Tensor<T>::zeros({static_cast<int>(p.var.size())}),
                          Tensor<T>::zeros({static_cast<int>(p.var.size())})});
      }
  }

  size_t trainable_count() const { return params_.size(); }

  // One update with the gradients currently stored on the parameters;
  // timestep comes from the caller so a resumed run continues bias
  // correction where it left off.
  void step(double lr, int64_t timestep) {
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(timestep));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(timestep));
    for (size_t i = 0; i < params_.size(); ++i) {
      Var<T>& p = params_[i];
      MomentSlot<T>& s = slots_[i];
      const bool has_grad = p.has_grad();
      for (int64_t k = 0; k < p.size(); ++k) {
        const T g = has_grad ? p.grad()[k] : T(0);
        s.first[k] = static_cast<T>(beta1_) * s.first[k] + static_cast<T>(1.0 - beta1_) * g;
        s.second[k] =
            static_cast<T>(beta2_) * s.second[k] + static_cast<T>(1.0 - beta2_) * g * g;
        const double m_hat = static_cast<double>(s.first[k]) / bc1;
        const double v_hat = static_cast<double>(s.second[k]) / bc2;
        p.value()[k] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + eps_));
      }
      p.zero_grad();
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::vector<MomentSlot<T>>& moments() { return slots_; }
  const std::vector<MomentSlot<T>>& moments() const { return slots_; }

  void restore_moments(const std::vector<MomentSlot<T>>& saved) {
    std::map<std::string, const MomentSlot<T>*> by_name;
    for (const auto& s : saved) by_name[s.name] = &s;
    for (auto& s : slots_) {
      auto it = by_name.find(s.name);
      if (it == by_name.end())
        throw IoError("optimizer state: missing moments for '" + s.name + "'");
      if (it->second->first.size() != s.first.size())
        throw IoError("optimizer state: size mismatch for '" + s.name + "'");
      s.first = it->second->first;
      s.second = it->second->second;
    }
  }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::vector<Var<T>> params_;
  std::vector<MomentSlot<T>> slots_;
};

struct LossBreakdown {
  double total = 0;
  double reprojection = 0;
  double smoothness = 0;
  double lr = 0;
  int64_t step = 0;
  bool empty_mask_warning = false;
  bool ms_scales_reduced = false;
};

struct EvalResult {
  metrics::DepthMetrics depth;
  double ate = 0;
  int frames_evaluated = 0;
  std::vector<Tensor<double>> predicted_depths;  // full resolution, per frame
};

struct FitResult {
  double best_val_abs_rel = 0;
  int epochs_run = 0;
  std::string best_checkpoint;
  std::string last_checkpoint;
};

// The self-supervised optimization loop binding the model, geometry, and
// losses. Single-threaded and deterministic for a given config and seed.
template <typename T>
class Trainer {
 public:
  Trainer(const config::ExperimentConfig& cfg, const synth::SyntheticScene& dataset)
      : pipeline_(Pipeline<T>::build(cfg)), cfg_(pipeline_.cfg), dataset_(&dataset) {
    cfg_.train.validate();
    if (dataset.frames.empty()) throw ConfigError("trainer: empty dataset");
    for (const auto& f : dataset.frames) frames_t_.push_back(f.template cast<T>());
    const int n = static_cast<int>(dataset.frames.size());
    n_train_ = n - static_cast<int>(std::floor(n * cfg_.train.val_fraction));
    if (n_train_ < 3) throw ConfigError("trainer: too few training frames");
    int min_off = 0, max_off = 0;
    for (int o : cfg_.train.frame_offsets) {
      min_off = std::min(min_off, o);
      max_off = std::max(max_off, o);
    }
    for (int t = std::max(0, -min_off); t < n_train_ - std::max(0, max_off); ++t)
      all_centers_.push_back(t);
    if (all_centers_.empty()) throw ConfigError("trainer: no valid frame triplets");
    optimizer_ = AdamOptimizer<T>(pipeline_.params());
    rng_ = Rng(cfg_.train.seed);
  }

  Pipeline<T>& pipeline() { return pipeline_; }
  const config::ExperimentConfig& config() const { return cfg_; }
  TrainState& state() { return state_; }
  int train_frame_count() const { return n_train_; }

  // One optimizer step on a batch of triplet centers. The batch loss is the
  // mean over elements; a non-finite loss aborts with the term breakdown.
  LossBreakdown train_step(const std::vector<int>& centers, double lr) {
    Var<T> batch_loss;
    LossBreakdown bd;
    for (int t : centers) {
      auto pyramid = pipeline_.depth_net.forward(frames_t_[static_cast<size_t>(t)]);
      std::vector<Tensor<T>> sources;
      std::vector<losses::MotionVars<T>> motions;
      for (int off : cfg_.train.frame_offsets) {
        const auto& src = frames_t_[static_cast<size_t>(t + off)];
        sources.push_back(src);
        motions.push_back(
            pipeline_.estimate_motion(frames_t_[static_cast<size_t>(t)], src));
      }
      auto res = losses::total_ssl_loss<T>(frames_t_[static_cast<size_t>(t)], sources,
                                           pyramid.disparities, motions, dataset_->intrinsics,
                                           cfg_.loss.cfg);
      bd.reprojection += res.reprojection;
      bd.smoothness += res.smoothness;
      bd.empty_mask_warning |= res.empty_mask_warning;
      bd.ms_scales_reduced |= res.ms_scales_reduced;
      batch_loss = batch_loss.defined() ? batch_loss + res.total : res.total;
    }
    const double inv_n = 1.0 / static_cast<double>(centers.size());
    batch_loss = mul_scalar(batch_loss, static_cast<T>(inv_n));
    bd.total = static_cast<double>(batch_loss.scalar());
    bd.reprojection *= inv_n;
    bd.smoothness *= inv_n;
    bd.lr = lr;
    if (!std::isfinite(bd.total))
      throw TrainError("non-finite loss at step " + std::to_string(state_.step + 1) +
                       ": total=" + std::to_string(bd.total) +
                       " reprojection=" + std::to_string(bd.reprojection) +
                       " smoothness=" + std::to_string(bd.smoothness));
    optimizer_.zero_grad();
    batch_loss.backward();
    ++state_.step;
    optimizer_.step(lr, state_.step);
    bd.step = state_.step;
    return bd;
  }

  // Validation depth error on the held-out frames (median-scaled Abs Rel).
  double validate() const {
    if (n_train_ >= static_cast<int>(dataset_->frames.size())) return 0.0;
    metrics::DepthMetrics sum;
    int count = 0;
    for (size_t f = static_cast<size_t>(n_train_); f < dataset_->frames.size(); ++f) {
      Tensor<double> depth = predict_depth(static_cast<int>(f));
      sum.accumulate(metrics::depth_metrics(depth, dataset_->gt_depths[f], true, 150.0));
      ++count;
    }
    return count ? sum.abs_rel / count : 0.0;
  }

  Tensor<double> predict_depth(int frame) const {
    auto pyramid = pipeline_.depth_net.forward(frames_t_[static_cast<size_t>(frame)]);
    Var<T> depth = model::disparity_to_depth(pyramid.disparities[0], cfg_.model.depth.min_depth,
                                             cfg_.model.depth.max_depth);
    return depth.value().template cast<double>();
  }

  // Epoch loop with the step-decay schedule; checkpoints the best validation
  // model and the rolling last state. With `resume` the last checkpoint is
  // loaded and the loop continues where it stopped.
  FitResult fit(const std::string& out_dir, bool resume = false) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const std::string last_path = (fs::path(out_dir) / "last.ckpt").string();
    const std::string best_path = (fs::path(out_dir) / "best.ckpt").string();
    const std::string log_path = (fs::path(out_dir) / "train_log.csv").string();

    int64_t start_epoch = 0;
    if (resume && fs::exists(last_path)) {
      auto params = pipeline_.params();
      std::vector<MomentSlot<T>> saved;
      const auto stored_cfg = read_checkpoint_config(last_path);
      // identical experiment required, but the epoch budget may be extended
      auto run_hash = [](config::ExperimentConfig c) {
        c.train.epochs = 0;
        return c.hash();
      };
      if (run_hash(stored_cfg) != run_hash(cfg_))
        throw ConfigError("resume: checkpoint was built from a different config");
      load_checkpoint<T>(last_path, params, &state_, &saved);
      optimizer_.restore_moments(saved);
      rng_.set_state(state_.rng_state);
      start_epoch = state_.epoch;
    }

    std::FILE* log = std::fopen(log_path.c_str(), resume && start_epoch > 0 ? "ab" : "wb");
    if (!log) throw IoError("fit: cannot open " + log_path);
    if (!resume || start_epoch == 0) std::fputs("step,total,ms_reproj,smoothness,lr\n", log);

    FitResult result;
    result.best_checkpoint = best_path;
    result.last_checkpoint = last_path;
    for (int64_t epoch = start_epoch; epoch < cfg_.train.epochs; ++epoch) {
      const double lr = cfg_.train.lr_at_epoch(static_cast<int>(epoch));
      std::vector<int> order = all_centers_;
      vlora::shuffle(order, rng_);
      for (size_t i = 0; i < order.size(); i += static_cast<size_t>(cfg_.train.batch_size)) {
        std::vector<int> batch(order.begin() + static_cast<int64_t>(i),
                               order.begin() +
                                   static_cast<int64_t>(std::min(order.size(),
                                                                 i + static_cast<size_t>(
                                                                         cfg_.train.batch_size))));
        auto bd = train_step(batch, lr);
        std::fprintf(log, "%lld,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(bd.step), bd.total,
                     bd.reprojection, bd.smoothness, bd.lr);
      }
      state_.epoch = epoch + 1;
      state_.rng_state = rng_.state();
      const double val = validate();
      const bool improved = val < state_.best_val_abs_rel;
      if (improved) state_.best_val_abs_rel = val;
      auto params = pipeline_.params();
      save_checkpoint<T>(last_path, cfg_, params, &state_, &optimizer_.moments());
      if (improved) save_checkpoint<T>(best_path, cfg_, params, &state_, &optimizer_.moments());
      result.epochs_run = static_cast<int>(epoch) + 1;
    }
    std::fclose(log);
    result.best_val_abs_rel = state_.best_val_abs_rel;
    return result;
  }

  // Full-dataset evaluation: full-resolution depth against ground truth and
  // the chained ego-motion trajectory against the ground-truth trajectory.
  EvalResult evaluate(metrics::Alignment align = metrics::Alignment::kSimilarity,
                      bool keep_depths = false) const {
    EvalResult res;
    metrics::DepthMetrics sum;
    for (size_t f = 0; f < dataset_->frames.size(); ++f) {
      Tensor<double> depth = predict_depth(static_cast<int>(f));
      sum.accumulate(metrics::depth_metrics(depth, dataset_->gt_depths[f], true, 150.0));
      if (keep_depths) res.predicted_depths.push_back(std::move(depth));
      ++res.frames_evaluated;
    }
    res.depth = sum.scale(1.0 / res.frames_evaluated);

    std::vector<geometry::Pose> increments;
    for (size_t f = 0; f + 1 < dataset_->frames.size(); ++f) {
      auto est = pipeline_.pose_net.forward(frames_t_[f], frames_t_[f + 1]);
      geometry::Vec3 aa{static_cast<double>(est.axis_angle.value()[0]),
                        static_cast<double>(est.axis_angle.value()[1]),
                        static_cast<double>(est.axis_angle.value()[2])};
      geometry::Vec3 tr{static_cast<double>(est.translation.value()[0]),
                        static_cast<double>(est.translation.value()[1]),
                        static_cast<double>(est.translation.value()[2])};
      // warp-convention motion (target -> source); its inverse moves the
      // camera, which is what the trajectory chains
      increments.push_back(geometry::axis_angle_to_pose(aa, tr).inverse());
    }
    metrics::Trajectory pred = metrics::accumulate_trajectory(increments);
    metrics::Trajectory gt;
    for (const auto& p : dataset_->gt_poses) gt.positions.push_back(p.translation);
    res.ate = metrics::ate(pred, gt, align);
    return res;
  }

 private:
  Pipeline<T> pipeline_;
  config::ExperimentConfig cfg_;
  const synth::SyntheticScene* dataset_;
  std::vector<Tensor<T>> frames_t_;
  std::vector<int> all_centers_;
  int n_train_ = 0;
  AdamOptimizer<T> optimizer_;
  TrainState state_;
  Rng rng_;
};

}  // namespace vlora::train
