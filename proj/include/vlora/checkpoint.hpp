#pragma once

#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "vlora/config.hpp"
#include "vlora/model.hpp"

namespace vlora::train {

// Unreadable, mismatched, or tampered checkpoint files.
struct CheckpointError : IoError {
  explicit CheckpointError(const std::string& msg) : IoError(msg) {}
};

// Optimizer/loop state that rides along in the checkpoint so a resumed run is
// bit-identical to an uninterrupted one.
struct TrainState {
  int64_t epoch = 0;  // completed epochs
  int64_t step = 0;   // optimizer steps taken (also the Adam timestep)
  uint64_t rng_state = 0;
  double best_val_abs_rel = std::numeric_limits<double>::infinity();
};

template <typename T>
struct MomentSlot {
  std::string name;
  Tensor<T> first;   // running mean of gradients
  Tensor<T> second;  // running mean of squared gradients
};

namespace ckpt_detail {

constexpr char kMagic[8] = {'V', 'L', 'O', 'R', 'A', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

struct Writer {
  std::ofstream out;
  explicit Writer(const std::string& path) : out(path, std::ios::binary) {
    if (!out) throw CheckpointError("checkpoint: cannot open for write: " + path);
  }
  template <typename U>
  void pod(const U& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(U));
  }
  void bytes(const void* p, size_t n) { out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void str(const std::string& s) {
    pod(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
};

struct Reader {
  std::ifstream in;
  std::string path;
  explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw CheckpointError("checkpoint: cannot open " + p);
  }
  template <typename U>
  U pod() {
    U v;
    in.read(reinterpret_cast<char*>(&v), sizeof(U));
    if (!in) throw CheckpointError("checkpoint: truncated file " + path);
    return v;
  }
  void bytes(void* p, size_t n) {
    in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw CheckpointError("checkpoint: truncated file " + path);
  }
  std::string str() {
    const auto n = pod<uint32_t>();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
};

template <typename T>
constexpr uint32_t scalar_code() {
  return sizeof(T) == 4 ? 4u : 8u;
}

}  // namespace ckpt_detail

// Named tensors (frozen base weights and adapter factors are separate
// entries), the JSON config that built them plus its hash, and optionally the
// training state with Adam moments.
template <typename T>
void save_checkpoint(const std::string& path, const config::ExperimentConfig& cfg,
                     const model::ParamSet<T>& params, const TrainState* state = nullptr,
                     const std::vector<MomentSlot<T>>* moments = nullptr) {
  ckpt_detail::Writer w(path);
  w.bytes(ckpt_detail::kMagic, sizeof ckpt_detail::kMagic);
  w.pod(ckpt_detail::kVersion);
  w.pod(ckpt_detail::scalar_code<T>());
  const std::string cfg_str = cfg.canonical_string();
  w.str(cfg_str);
  w.pod(io::fnv1a(cfg_str));
  w.pod(static_cast<uint64_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.pod(static_cast<uint8_t>(p.var.requires_grad() ? 1 : 0));
    const auto& shape = p.var.shape();
    w.pod(static_cast<uint8_t>(shape.size()));
    for (int d : shape) w.pod(static_cast<uint32_t>(d));
    w.bytes(p.var.value().data(), static_cast<size_t>(p.var.size()) * sizeof(T));
  }
  w.pod(static_cast<uint8_t>(state ? 1 : 0));
  if (state) {
    w.pod(state->epoch);
    w.pod(state->step);
    w.pod(state->rng_state);
    w.pod(state->best_val_abs_rel);
    w.pod(static_cast<uint64_t>(moments ? moments->size() : 0));
    if (moments)
      for (const auto& s : *moments) {
        w.str(s.name);
        w.pod(static_cast<uint64_t>(s.first.size()));
        w.bytes(s.first.data(), static_cast<size_t>(s.first.size()) * sizeof(T));
        w.bytes(s.second.data(), static_cast<size_t>(s.second.size()) * sizeof(T));
      }
  }
  if (!w.out) throw CheckpointError("checkpoint: write failed for " + path);
}

// Reads only the embedded config (used to rebuild the pipeline before the
// tensors are loaded). Validates magic, version, and config hash.
inline config::ExperimentConfig read_checkpoint_config(const std::string& path,
                                                       uint32_t* scalar_code_out = nullptr) {
  ckpt_detail::Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, ckpt_detail::kMagic, sizeof magic) != 0)
    throw CheckpointError("checkpoint: bad magic in " + path);
  const auto version = r.pod<uint32_t>();
  if (version != ckpt_detail::kVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version) + " in " + path);
  const auto code = r.pod<uint32_t>();
  if (scalar_code_out) *scalar_code_out = code;
  const std::string cfg_str = r.str();
  const auto stored_hash = r.pod<uint64_t>();
  if (io::fnv1a(cfg_str) != stored_hash)
    throw CheckpointError("checkpoint: config hash mismatch (corrupted file?) in " + path);
  return config::ExperimentConfig::from_json(io::json::parse(cfg_str));
}

// Loads tensors into an existing parameter set (matched by name, shapes
// checked) and returns the stored train state if present.
template <typename T>
bool load_checkpoint(const std::string& path, model::ParamSet<T>& params,
                     TrainState* state = nullptr, std::vector<MomentSlot<T>>* moments = nullptr) {
  ckpt_detail::Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, ckpt_detail::kMagic, sizeof magic) != 0)
    throw CheckpointError("checkpoint: bad magic in " + path);
  if (r.pod<uint32_t>() != ckpt_detail::kVersion)
    throw CheckpointError("checkpoint: unsupported version in " + path);
  if (r.pod<uint32_t>() != ckpt_detail::scalar_code<T>())
    throw CheckpointError("checkpoint: precision mismatch in " + path);
  const std::string cfg_str = r.str();
  if (io::fnv1a(cfg_str) != r.pod<uint64_t>())
    throw CheckpointError("checkpoint: config hash mismatch (corrupted file?) in " + path);

  std::map<std::string, model::NamedParam<T>*> by_name;
  for (auto& p : params) by_name[p.name] = &p;

  const auto n_tensors = r.pod<uint64_t>();
  size_t loaded = 0;
  for (uint64_t i = 0; i < n_tensors; ++i) {
    const std::string name = r.str();
    r.pod<uint8_t>();  // stored trainable flag; ownership stays with the pipeline
    const auto ndim = r.pod<uint8_t>();
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<int>(r.pod<uint32_t>());
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint: unexpected tensor '" + name + "' in " + path);
    if (it->second->var.shape() != shape)
      throw CheckpointError("checkpoint: shape mismatch for '" + name + "' in " + path);
    r.bytes(it->second->var.value().data(), static_cast<size_t>(shape_numel(shape)) * sizeof(T));
    ++loaded;
  }
  if (loaded != params.size())
    throw CheckpointError("checkpoint: missing tensors in " + path + " (" + std::to_string(loaded) +
                  " of " + std::to_string(params.size()) + ")");

  const auto has_state = r.pod<uint8_t>();
  if (has_state) {
    TrainState s;
    s.epoch = r.pod<int64_t>();
    s.step = r.pod<int64_t>();
    s.rng_state = r.pod<uint64_t>();
    s.best_val_abs_rel = r.pod<double>();
    if (state) *state = s;
    const auto n_slots = r.pod<uint64_t>();
    if (moments) moments->clear();
    for (uint64_t i = 0; i < n_slots; ++i) {
      const std::string name = r.str();
      const auto numel = r.pod<uint64_t>();
      MomentSlot<T> slot;
      slot.name = name;
      slot.first = Tensor<T>({static_cast<int>(numel)});
      slot.second = Tensor<T>({static_cast<int>(numel)});
      r.bytes(slot.first.data(), numel * sizeof(T));
      r.bytes(slot.second.data(), numel * sizeof(T));
      if (moments) moments->push_back(std::move(slot));
    }
  }
  return has_state != 0;
}

}  // namespace vlora::train
