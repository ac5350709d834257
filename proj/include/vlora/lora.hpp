#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vlora/core/autograd.hpp"

namespace vlora::lora {

// Per-transformer-block rank allocation. Earlier blocks may get larger ranks;
// that is a modelling choice, not a structural requirement, so monotonicity
// is only surfaced as a warning.
struct RankVector {
  std::vector<int> ranks;

  RankVector() = default;
  explicit RankVector(std::vector<int> r) : ranks(std::move(r)) {}

  int size() const { return static_cast<int>(ranks.size()); }

  void validate(int block_count) const {
    if (size() != block_count)
      throw ConfigError("rank vector length " + std::to_string(size()) + " does not match block count " +
                        std::to_string(block_count));
    for (int r : ranks)
      if (r < 1) throw ConfigError("rank vector entries must be >= 1");
  }

  bool is_non_increasing() const {
    for (size_t i = 1; i < ranks.size(); ++i)
      if (ranks[i] > ranks[i - 1]) return false;
    return true;
  }

  int64_t total() const {
    int64_t s = 0;
    for (int r : ranks) s += r;
    return s;
  }
};

// Trainable low-rank pair attached beside a frozen projection.
// down: [rank, in], up: [out, rank]. up starts at zero so an adapted layer is
// exactly the frozen layer until the first update.
template <typename T>
struct LoraAdapter {
  Var<T> down;
  Var<T> up;
  T scale = T(1);
  int rank = 0;

  int64_t param_count() const { return down.size() + up.size(); }
};

template <typename T>
LoraAdapter<T> make_adapter(int out_dim, int in_dim, int rank, Rng& rng, T scale = T(1),
                            T init_std = T(0.02)) {
  if (rank < 1) throw ConfigError("lora rank must be >= 1");
  if (rank >= std::min(out_dim, in_dim))
    throw ConfigError("lora rank " + std::to_string(rank) + " must be < min(out,in) = " +
                      std::to_string(std::min(out_dim, in_dim)));
  LoraAdapter<T> a;
  a.rank = rank;
  a.scale = scale;
  a.down = Var<T>(Tensor<T>::randn({rank, in_dim}, rng, init_std), true);
  a.up = Var<T>(Tensor<T>::zeros({out_dim, rank}), true);
  return a;
}

// Adapter path on row-major activations: x [n, in] -> scale * (x A^T) B^T.
template <typename T>
Var<T> adapter_delta(const LoraAdapter<T>& a, const Var<T>& x) {
  return mul_scalar(linear(linear(x, a.down), a.up), a.scale);
}

// A frozen linear map plus its adapter; the standalone form of the adapted
// projection used throughout the encoder.
template <typename T>
struct LoraLinear {
  Var<T> base_weight;  // [out, in], frozen
  LoraAdapter<T> adapter;

  int out_dim() const { return base_weight.shape()[0]; }
  int in_dim() const { return base_weight.shape()[1]; }

  static LoraLinear create(Tensor<T> frozen_weight, int rank, Rng& rng, T scale = T(1),
                           T init_std = T(0.02)) {
    LoraLinear l;
    const int out = frozen_weight.shape()[0], in = frozen_weight.shape()[1];
    l.base_weight = Var<T>(std::move(frozen_weight), false);
    l.adapter = make_adapter<T>(out, in, rank, rng, scale, init_std);
    return l;
  }
};

// Adapted forward pass: base output plus the scaled low-rank update.
// Accepts a batch [n, in] or a single vector [in].
template <typename T>
Var<T> lora_forward(const LoraLinear<T>& layer, const Var<T>& x) {
  const bool vector_input = x.shape().size() == 1;
  if (vector_input && x.shape()[0] != layer.in_dim())
    throw ShapeError("lora_forward: input length " + std::to_string(x.shape()[0]) +
                     " vs in_dim " + std::to_string(layer.in_dim()));
  Var<T> rows = vector_input ? reshape(x, {1, x.shape()[0]}) : x;
  Var<T> y = linear(rows, layer.base_weight) + adapter_delta(layer.adapter, rows);
  return vector_input ? reshape(y, {y.shape()[1]}) : y;
}

struct LoraInjectionSpec {
  std::set<std::string> targets{"q", "v"};
  RankVector rank_vector;
  double scale = 1.0;
  double init_std = 0.02;

  void validate() const {
    static const std::set<std::string> allowed{"q", "k", "v", "o"};
    for (const auto& t : targets)
      if (!allowed.count(t)) throw ConfigError("lora target must be one of q,k,v,o: got '" + t + "'");
    for (int r : rank_vector.ranks)
      if (r < 1) throw ConfigError("rank vector entries must be >= 1");
  }
};

// Attaches adapters to the targeted projections of every block and freezes
// everything else in the encoder. The encoder type must expose block_count(),
// freeze_all(), and for_each_projection(fn(block_idx, name, projection&))
// where a projection holds `weight` (Var [out,in]) and `adapter`
// (std::optional<LoraAdapter>).
template <typename Encoder>
void inject_vector_lora(Encoder& encoder, const LoraInjectionSpec& spec, Rng& rng) {
  using T = typename Encoder::scalar_type;
  spec.validate();
  spec.rank_vector.validate(encoder.block_count());
  encoder.freeze_all();
  encoder.for_each_projection([&](int block, const std::string& name, auto& proj) {
    if (!spec.targets.count(name)) return;
    const int out = proj.weight.shape()[0], in = proj.weight.shape()[1];
    proj.adapter = make_adapter<T>(out, in, spec.rank_vector.ranks[static_cast<size_t>(block)],
                                   rng, static_cast<T>(spec.scale), static_cast<T>(spec.init_std));
  });
}

// Formula-side count of adapted parameters: sum of rank * (out + in) over
// adapted projections. Tests cross-check this against enumerating tensors
// flagged trainable.
template <typename Encoder>
int64_t trainable_param_count(const Encoder& encoder) {
  int64_t total = 0;
  encoder.for_each_projection([&](int, const std::string&, const auto& proj) {
    if (proj.adapter)
      total += static_cast<int64_t>(proj.adapter->rank) *
               (proj.weight.shape()[0] + proj.weight.shape()[1]);
  });
  return total;
}

}  // namespace vlora::lora
