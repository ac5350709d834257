#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vlora/core/rng.hpp"

namespace vlora {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major tensor. Rank is dynamic but in practice 1..4.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    assert(static_cast<int64_t>(data_.size()) == shape_numel(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }
  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), T mean = T(0)) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = static_cast<T>(rng.normal(mean, stddev));
    return t;
  }

  static Tensor rand_uniform(Shape shape, Rng& rng, T lo = T(0), T hi = T(1)) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 2D / 3D accessors (row-major; 3D is [channel, row, col]).
  T& at(int r, int c) { return data_[static_cast<size_t>(r) * shape_[1] + c]; }
  const T& at(int r, int c) const { return data_[static_cast<size_t>(r) * shape_[1] + c]; }
  T& at(int ch, int r, int c) {
    return data_[(static_cast<size_t>(ch) * shape_[1] + r) * shape_[2] + c];
  }
  const T& at(int ch, int r, int c) const {
    return data_[(static_cast<size_t>(ch) * shape_[1] + r) * shape_[2] + c];
  }

  Tensor reshaped(Shape new_shape) const {
    if (shape_numel(new_shape) != size())
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape));
    Tensor t = *this;
    t.shape_ = std::move(new_shape);
    return t;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  double sum() const {
    double acc = 0;
    for (const T& v : data_) acc += static_cast<double>(v);
    return acc;
  }
  double mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(size()); }
  T min() const { return *std::min_element(data_.begin(), data_.end()); }
  T max() const { return *std::max_element(data_.begin(), data_.end()); }

  double max_abs_diff(const Tensor& other) const {
    assert(size() == other.size());
    double m = 0;
    for (int64_t i = 0; i < size(); ++i)
      m = std::max(m, std::abs(static_cast<double>(data_[i]) - static_cast<double>(other.data_[i])));
    return m;
  }

  bool bitwise_equal(const Tensor& other) const {
    return shape_ == other.shape_ &&
           std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(T)) == 0;
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (int64_t i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  void add_inplace(const Tensor& other) {
    assert(size() == other.size());
    for (int64_t i = 0; i < size(); ++i) data_[i] += other.data_[i];
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

}  // namespace vlora
