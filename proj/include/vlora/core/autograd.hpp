#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vlora/core/tensor.hpp"

namespace vlora {

// Reverse-mode tape. Vars share nodes; ops build the graph eagerly and each
// node stores a closure that scatters its output gradient to its parents.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;

  Tensor<T>& grad_buf() {
    if (!has_grad) {
      grad = Tensor<T>::zeros(value.shape());
      has_grad = true;
    }
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  bool has_grad() const { return node_ && node_->has_grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  std::shared_ptr<Node<T>> node() const { return node_; }

  const Shape& shape() const { return node_->value.shape(); }
  int64_t size() const { return node_->value.size(); }
  T scalar() const {
    assert(size() == 1);
    return node_->value[0];
  }

  void zero_grad() {
    if (node_) {
      node_->has_grad = false;
      node_->grad = Tensor<T>();
    }
  }

  // Backpropagates from this scalar. Frees the tape afterwards unless told
  // otherwise so activations release promptly.
  void backward(bool free_graph = true) {
    if (size() != 1) throw ShapeError("backward() root must be scalar, got " + shape_str(shape()));
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        Node<T>* p = n->parents[idx++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad_buf()[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backprop && n->has_grad) n->backprop(*n);
    }
    if (free_graph) {
      for (Node<T>* n : order) {
        n->backprop = nullptr;
        n->parents.clear();
      }
    }
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  for (const auto& p : parents)
    if (p.requires_grad()) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(backprop);
  }
  return Var<T>(std::move(n));
}

template <typename T>
void accum(const std::shared_ptr<Node<T>>& n, const Tensor<T>& g) {
  if (!n->requires_grad) return;
  Tensor<T>& buf = n->grad_buf();
  for (int64_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

}  // namespace detail

template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

template <typename T>
Var<T> scalar_var(T v, bool requires_grad = false) {
  return Var<T>(Tensor<T>({1}, std::vector<T>{v}), requires_grad);
}

// ---- elementwise binary ----

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return detail::make_op<T>(std::move(out), {a, b}, [an = a.node(), bn = b.node()](Node<T>& n) {
    detail::accum(an, n.grad);
    detail::accum(bn, n.grad);
  });
}

template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return detail::make_op<T>(std::move(out), {a, b}, [an = a.node(), bn = b.node()](Node<T>& n) {
    detail::accum(an, n.grad);
    if (bn->requires_grad) {
      Tensor<T>& buf = bn->grad_buf();
      for (int64_t i = 0; i < n.grad.size(); ++i) buf[i] -= n.grad[i];
    }
  });
}

template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return detail::make_op<T>(
      std::move(out), {a, b},
      [an = a.node(), bn = b.node(), av = a.value(), bv = b.value()](Node<T>& n) {
        if (an->requires_grad) {
          Tensor<T>& buf = an->grad_buf();
          for (int64_t i = 0; i < n.grad.size(); ++i) buf[i] += n.grad[i] * bv[i];
        }
        if (bn->requires_grad) {
          Tensor<T>& buf = bn->grad_buf();
          for (int64_t i = 0; i < n.grad.size(); ++i) buf[i] += n.grad[i] * av[i];
        }
      });
}

template <typename T>
Var<T> operator/(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "div");
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
  return detail::make_op<T>(
      std::move(out), {a, b},
      [an = a.node(), bn = b.node(), av = a.value(), bv = b.value()](Node<T>& n) {
        if (an->requires_grad) {
          Tensor<T>& buf = an->grad_buf();
          for (int64_t i = 0; i < n.grad.size(); ++i) buf[i] += n.grad[i] / bv[i];
        }
        if (bn->requires_grad) {
          Tensor<T>& buf = bn->grad_buf();
          for (int64_t i = 0; i < n.grad.size(); ++i)
            buf[i] -= n.grad[i] * av[i] / (bv[i] * bv[i]);
        }
      });
}

// Elementwise minimum; gradient follows the selected branch (ties go to a).
template <typename T>
Var<T> minimum(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "minimum");
  Tensor<T> out = a.value();
  std::vector<uint8_t> pick_b(static_cast<size_t>(out.size()), 0);
  for (int64_t i = 0; i < out.size(); ++i) {
    if (b.value()[i] < out[i]) {
      out[i] = b.value()[i];
      pick_b[static_cast<size_t>(i)] = 1;
    }
  }
  return detail::make_op<T>(std::move(out), {a, b},
                            [an = a.node(), bn = b.node(), pick_b](Node<T>& n) {
                              if (an->requires_grad) {
                                Tensor<T>& buf = an->grad_buf();
                                for (int64_t i = 0; i < n.grad.size(); ++i)
                                  if (!pick_b[static_cast<size_t>(i)]) buf[i] += n.grad[i];
                              }
                              if (bn->requires_grad) {
                                Tensor<T>& buf = bn->grad_buf();
                                for (int64_t i = 0; i < n.grad.size(); ++i)
                                  if (pick_b[static_cast<size_t>(i)]) buf[i] += n.grad[i];
                              }
                            });
}

// ---- scalar ops ----

template <typename T>
Var<T> add_scalar(const Var<T>& a, T c) {
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] += c;
  return detail::make_op<T>(std::move(out), {a},
                            [an = a.node()](Node<T>& n) { detail::accum(an, n.grad); });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T c) {
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= c;
  return detail::make_op<T>(std::move(out), {a}, [an = a.node(), c](Node<T>& n) {
    if (!an->requires_grad) return;
    Tensor<T>& buf = an->grad_buf();
    for (int64_t i = 0; i < n.grad.size(); ++i) buf[i] += c * n.grad[i];
  });
}

// x^p for strictly positive x (the MS-SSIM exponents).
template <typename T>
Var<T> pow_scalar(const Var<T>& a, T p) {
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::pow(out[i], p);
  return detail::make_op<T>(std::move(out), {a},
                            [an = a.node(), av = a.value(), p](Node<T>& n) {
                              if (!an->requires_grad) return;
                              Tensor<T>& buf = an->grad_buf();
                              for (int64_t i = 0; i < n.grad.size(); ++i)
                                buf[i] += n.grad[i] * p * std::pow(av[i], p - T(1));
                            });
}

// Multiplies a tensor by a one-element Var (shared scalar with gradient).
template <typename T>
Var<T> mul_broadcast(const Var<T>& a, const Var<T>& s) {
  if (s.size() != 1) throw ShapeError("mul_broadcast: scalar operand must have one element");
  const T sv = s.value()[0];
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= sv;
  return detail::make_op<T>(
      std::move(out), {a, s}, [an = a.node(), sn = s.node(), av = a.value(), sv](Node<T>& n) {
        if (an->requires_grad) {
          Tensor<T>& buf = an->grad_buf();
          for (int64_t i = 0; i < n.grad.size(); ++i) buf[i] += n.grad[i] * sv;
        }
        if (sn->requires_grad) {
          T acc = T(0);
          for (int64_t i = 0; i < n.grad.size(); ++i) acc += n.grad[i] * av[i];
          sn->grad_buf()[0] += acc;
        }
      });
}

// max(x, c) with zero subgradient below the floor.
template <typename T>
Var<T> clamp_min(const Var<T>& a, T floor) {
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], floor);
  return detail::make_op<T>(std::move(out), {a},
                            [an = a.node(), av = a.value(), floor](Node<T>& n) {
                              if (!an->requires_grad) return;
                              Tensor<T>& buf = an->grad_buf();
                              for (int64_t i = 0; i < n.grad.size(); ++i)
                                if (av[i] > floor) buf[i] += n.grad[i];
                            });
}

// ---- elementwise unary ----

namespace detail {
template <typename T, typename FwdFn, typename GradFn>
Var<T> unary_op(const Var<T>& a, FwdFn fwd, GradFn dfd) {
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = fwd(out[i]);
  return detail::make_op<T>(std::move(out), {a},
                            [an = a.node(), av = a.value(), dfd](Node<T>& n) {
                              if (!an->requires_grad) return;
                              Tensor<T>& buf = an->grad_buf();
                              for (int64_t i = 0; i < n.grad.size(); ++i)
                                buf[i] += n.grad[i] * dfd(av[i], n.value[i]);
                            });
}
}  // namespace detail

template <typename T>
Var<T> neg(const Var<T>& a) {
  return mul_scalar(a, T(-1));
}

template <typename T>
Var<T> exp_op(const Var<T>& a) {
  return detail::unary_op(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log_op(const Var<T>& a) {
  return detail::unary_op(
      a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> sqrt_op(const Var<T>& a) {
  return detail::unary_op(
      a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Var<T> reciprocal(const Var<T>& a) {
  return detail::unary_op(
      a, [](T x) { return T(1) / x; }, [](T, T y) { return -y * y; });
}

template <typename T>
Var<T> abs_op(const Var<T>& a) {
  return detail::unary_op(
      a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary_op(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return detail::unary_op(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  return detail::unary_op(
      a, [=](T x) { return T(0.5) * x * (T(1) + T(std::erf(double(x) * kInvSqrt2))); },
      [=](T x, T) {
        const double cdf = 0.5 * (1.0 + std::erf(double(x) * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * double(x) * double(x));
        return T(cdf + double(x) * pdf);
      });
}

// ---- reductions ----

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  Tensor<T> out({1});
  T acc = T(0);
  for (int64_t i = 0; i < a.size(); ++i) acc += a.value()[i];
  out[0] = acc;
  return detail::make_op<T>(std::move(out), {a}, [an = a.node()](Node<T>& n) {
    if (!an->requires_grad) return;
    Tensor<T>& buf = an->grad_buf();
    const T g = n.grad[0];
    for (int64_t i = 0; i < buf.size(); ++i) buf[i] += g;
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  return mul_scalar(sum_all(a), T(1) / T(a.size()));
}

// ---- shape ops ----

template <typename T>
Var<T> reshape(const Var<T>& a, Shape new_shape) {
  Tensor<T> out = a.value().reshaped(new_shape);
  return detail::make_op<T>(std::move(out), {a}, [an = a.node()](Node<T>& n) {
    if (!an->requires_grad) return;
    Tensor<T>& buf = an->grad_buf();
    for (int64_t i = 0; i < n.grad.size(); ++i) buf[i] += n.grad[i];
  });
}

template <typename T>
Var<T> transpose2d(const Var<T>& a) {
  const int r = a.shape()[0], c = a.shape()[1];
  Tensor<T> out({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(j, i) = a.value().at(i, j);
  return detail::make_op<T>(std::move(out), {a}, [an = a.node(), r, c](Node<T>& n) {
    if (!an->requires_grad) return;
    Tensor<T>& buf = an->grad_buf();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) buf[static_cast<int64_t>(i) * c + j] += n.grad.at(j, i);
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, int r0, int len) {
  const int c = a.shape()[1];
  Tensor<T> out({len, c});
  std::copy_n(a.value().data() + static_cast<int64_t>(r0) * c, static_cast<int64_t>(len) * c,
              out.data());
  return detail::make_op<T>(std::move(out), {a}, [an = a.node(), r0, c](Node<T>& n) {
    if (!an->requires_grad) return;
    Tensor<T>& buf = an->grad_buf();
    T* dst = buf.data() + static_cast<int64_t>(r0) * c;
    for (int64_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, int c0, int len) {
  const int r = a.shape()[0], c = a.shape()[1];
  Tensor<T> out({r, len});
  for (int i = 0; i < r; ++i)
    std::copy_n(a.value().data() + static_cast<int64_t>(i) * c + c0, len,
                out.data() + static_cast<int64_t>(i) * len);
  return detail::make_op<T>(std::move(out), {a}, [an = a.node(), c0, c, len, r](Node<T>& n) {
    if (!an->requires_grad) return;
    Tensor<T>& buf = an->grad_buf();
    for (int i = 0; i < r; ++i) {
      T* dst = buf.data() + static_cast<int64_t>(i) * c + c0;
      const T* src = n.grad.data() + static_cast<int64_t>(i) * len;
      for (int j = 0; j < len; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  assert(!parts.empty());
  const int c = parts[0].shape()[1];
  int rows = 0;
  for (const auto& p : parts) rows += p.shape()[0];
  Tensor<T> out({rows, c});
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.size(), out.data() + off);
    off += p.size();
  }
  std::vector<int64_t> offsets;
  offsets.reserve(parts.size());
  int64_t o = 0;
  for (const auto& p : parts) {
    offsets.push_back(o);
    o += p.size();
  }
  return detail::make_op<T>(std::move(out), parts, [offsets](Node<T>& n) {
    for (size_t k = 0; k < n.parents.size(); ++k) {
      auto& p = n.parents[k];
      if (!p->requires_grad) continue;
      Tensor<T>& buf = p->grad_buf();
      const T* src = n.grad.data() + offsets[k];
      for (int64_t i = 0; i < buf.size(); ++i) buf[i] += src[i];
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  assert(!parts.empty());
  const int r = parts[0].shape()[0];
  int cols = 0;
  for (const auto& p : parts) cols += p.shape()[1];
  Tensor<T> out({r, cols});
  int c0 = 0;
  for (const auto& p : parts) {
    const int pc = p.shape()[1];
    for (int i = 0; i < r; ++i)
      std::copy_n(p.value().data() + static_cast<int64_t>(i) * pc, pc,
                  out.data() + static_cast<int64_t>(i) * cols + c0);
    c0 += pc;
  }
  std::vector<int> col_offsets, col_lens;
  int o = 0;
  for (const auto& p : parts) {
    col_offsets.push_back(o);
    col_lens.push_back(p.shape()[1]);
    o += p.shape()[1];
  }
  return detail::make_op<T>(std::move(out), parts, [col_offsets, col_lens, r, cols](Node<T>& n) {
    for (size_t k = 0; k < n.parents.size(); ++k) {
      auto& p = n.parents[k];
      if (!p->requires_grad) continue;
      Tensor<T>& buf = p->grad_buf();
      const int pc = col_lens[k], c0 = col_offsets[k];
      for (int i = 0; i < r; ++i) {
        const T* src = n.grad.data() + static_cast<int64_t>(i) * cols + c0;
        T* dst = buf.data() + static_cast<int64_t>(i) * pc;
        for (int j = 0; j < pc; ++j) dst[j] += src[j];
      }
    }
  });
}

// ---- matrix ops (Eigen-backed) ----

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const int m = a.shape()[0], k = a.shape()[1];
  if (b.shape()[0] != k)
    throw ShapeError("matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int n_cols = b.shape()[1];
  Tensor<T> out({m, n_cols});
  detail::ECMap<T> A(a.value().data(), m, k), B(b.value().data(), k, n_cols);
  detail::EMap<T>(out.data(), m, n_cols).noalias() = A * B;
  return detail::make_op<T>(
      std::move(out), {a, b},
      [an = a.node(), bn = b.node(), av = a.value(), bv = b.value(), m, k, n_cols](Node<T>& n) {
        detail::ECMap<T> G(n.grad.data(), m, n_cols);
        if (an->requires_grad) {
          Tensor<T>& buf = an->grad_buf();
          detail::ECMap<T> B(bv.data(), k, n_cols);
          detail::EMap<T>(buf.data(), m, k).noalias() += G * B.transpose();
        }
        if (bn->requires_grad) {
          Tensor<T>& buf = bn->grad_buf();
          detail::ECMap<T> A(av.data(), m, k);
          detail::EMap<T>(buf.data(), k, n_cols).noalias() += A.transpose() * G;
        }
      });
}

// y = x * W^T (+ bias per output column). x: [n, in], W: [out, in], b: [out].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b = Var<T>()) {
  const int n = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[0];
  if (w.shape()[1] != in)
    throw ShapeError("linear: weight " + shape_str(w.shape()) + " vs input " +
                     shape_str(x.shape()));
  Tensor<T> out({n, out_dim});
  detail::ECMap<T> X(x.value().data(), n, in), W(w.value().data(), out_dim, in);
  detail::EMap<T> Y(out.data(), n, out_dim);
  Y.noalias() = X * W.transpose();
  if (b.defined()) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < out_dim; ++j) out.at(i, j) += b.value()[j];
  }
  std::vector<Var<T>> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  return detail::make_op<T>(
      std::move(out), parents,
      [xn = x.node(), wn = w.node(), bnode = b.defined() ? b.node() : nullptr, xv = x.value(),
       wv = w.value(), n, in, out_dim](Node<T>& nd) {
        detail::ECMap<T> G(nd.grad.data(), n, out_dim);
        if (xn->requires_grad) {
          detail::EMap<T>(xn->grad_buf().data(), n, in).noalias() +=
              G * detail::ECMap<T>(wv.data(), out_dim, in);
        }
        if (wn->requires_grad) {
          detail::EMap<T>(wn->grad_buf().data(), out_dim, in).noalias() +=
              G.transpose() * detail::ECMap<T>(xv.data(), n, in);
        }
        if (bnode && bnode->requires_grad) {
          Tensor<T>& buf = bnode->grad_buf();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < out_dim; ++j) buf[j] += nd.grad.at(i, j);
        }
      });
}

// Row-wise softmax on [n, d].
template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  const int n = a.shape()[0], d = a.shape()[1];
  Tensor<T> out({n, d});
  for (int i = 0; i < n; ++i) {
    T mx = a.value().at(i, 0);
    for (int j = 1; j < d; ++j) mx = std::max(mx, a.value().at(i, j));
    T denom = T(0);
    for (int j = 0; j < d; ++j) {
      const T e = std::exp(a.value().at(i, j) - mx);
      out.at(i, j) = e;
      denom += e;
    }
    for (int j = 0; j < d; ++j) out.at(i, j) /= denom;
  }
  return detail::make_op<T>(std::move(out), {a}, [an = a.node(), n, d](Node<T>& nd) {
    if (!an->requires_grad) return;
    Tensor<T>& buf = an->grad_buf();
    for (int i = 0; i < n; ++i) {
      T dot = T(0);
      for (int j = 0; j < d; ++j) dot += nd.grad.at(i, j) * nd.value.at(i, j);
      for (int j = 0; j < d; ++j) buf.at(i, j) += nd.value.at(i, j) * (nd.grad.at(i, j) - dot);
    }
  });
}

// Row-wise layer norm with affine parameters. x: [n, d], gamma/beta: [d].
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const int n = x.shape()[0], d = x.shape()[1];
  Tensor<T> out({n, d});
  Tensor<T> xhat({n, d});
  std::vector<T> inv_std(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    T mean = T(0);
    for (int j = 0; j < d; ++j) mean += x.value().at(i, j);
    mean /= T(d);
    T var = T(0);
    for (int j = 0; j < d; ++j) {
      const T c = x.value().at(i, j) - mean;
      var += c * c;
    }
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = is;
    for (int j = 0; j < d; ++j) {
      const T h = (x.value().at(i, j) - mean) * is;
      xhat.at(i, j) = h;
      out.at(i, j) = h * gamma.value()[j] + beta.value()[j];
    }
  }
  return detail::make_op<T>(
      std::move(out), {x, gamma, beta},
      [xn = x.node(), gn = gamma.node(), bn = beta.node(), xhat, inv_std,
       gv = gamma.value(), n, d](Node<T>& nd) {
        if (gn->requires_grad) {
          Tensor<T>& buf = gn->grad_buf();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) buf[j] += nd.grad.at(i, j) * xhat.at(i, j);
        }
        if (bn->requires_grad) {
          Tensor<T>& buf = bn->grad_buf();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) buf[j] += nd.grad.at(i, j);
        }
        if (xn->requires_grad) {
          Tensor<T>& buf = xn->grad_buf();
          for (int i = 0; i < n; ++i) {
            T sum_g = T(0), sum_gh = T(0);
            for (int j = 0; j < d; ++j) {
              const T g = nd.grad.at(i, j) * gv[j];
              sum_g += g;
              sum_gh += g * xhat.at(i, j);
            }
            const T is = inv_std[static_cast<size_t>(i)];
            for (int j = 0; j < d; ++j) {
              const T g = nd.grad.at(i, j) * gv[j];
              buf.at(i, j) +=
                  is * (g - (sum_g + xhat.at(i, j) * sum_gh) / T(d));
            }
          }
        }
      });
}

}  // namespace vlora
