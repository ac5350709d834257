#pragma once

#include "vlora/core/autograd.hpp"

// Ops on image-shaped tensors. Images are [C, H, W]; single-channel maps may
// be [H, W]. All ops are differentiable where the forward math is.
namespace vlora {

namespace detail {
inline void chw(const Shape& s, int& c, int& h, int& w) {
  if (s.size() == 3) {
    c = s[0];
    h = s[1];
    w = s[2];
  } else if (s.size() == 2) {
    c = 1;
    h = s[0];
    w = s[1];
  } else {
    throw ShapeError("expected [C,H,W] or [H,W], got " + shape_str(s));
  }
}

inline Shape like(const Shape& s, int h, int w) {
  return s.size() == 3 ? Shape{s[0], h, w} : Shape{h, w};
}
}  // namespace detail

// 2D convolution via im2col. x: [Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout].
// Zero padding.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride = 1, int pad = 0) {
  const int cin = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  const int cout = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[1] != cin)
    throw ShapeError("conv2d: weight channels " + shape_str(w.shape()) + " vs input " +
                     shape_str(x.shape()));
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  const int patch = cin * kh * kw;

  Tensor<T> cols({patch, oh * ow});
  const Tensor<T>& xv = x.value();
  for (int ci = 0; ci < cin; ++ci)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const int prow = (ci * kh + ky) * kw + kx;
        T* dst = cols.data() + static_cast<int64_t>(prow) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            dst[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < wd) ? xv.at(ci, iy, ix) : T(0);
          }
        }
      }

  Tensor<T> out({cout, oh, ow});
  detail::ECMap<T> W(w.value().data(), cout, patch), C(cols.data(), patch, oh * ow);
  detail::EMap<T>(out.data(), cout, oh * ow).noalias() = W * C;
  if (b.defined())
    for (int co = 0; co < cout; ++co) {
      T* dst = out.data() + static_cast<int64_t>(co) * oh * ow;
      const T bias = b.value()[co];
      for (int i = 0; i < oh * ow; ++i) dst[i] += bias;
    }

  std::vector<Var<T>> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  return detail::make_op<T>(
      std::move(out), parents,
      [xn = x.node(), wn = w.node(), bnode = b.defined() ? b.node() : nullptr, cols,
       wv = w.value(), cin, h, wd, cout, kh, kw, oh, ow, stride, pad, patch](Node<T>& nd) {
        detail::ECMap<T> G(nd.grad.data(), cout, oh * ow);
        if (wn->requires_grad) {
          detail::EMap<T>(wn->grad_buf().data(), cout, patch).noalias() +=
              G * detail::ECMap<T>(cols.data(), patch, oh * ow).transpose();
        }
        if (bnode && bnode->requires_grad) {
          Tensor<T>& buf = bnode->grad_buf();
          for (int co = 0; co < cout; ++co) {
            T acc = T(0);
            const T* src = nd.grad.data() + static_cast<int64_t>(co) * oh * ow;
            for (int i = 0; i < oh * ow; ++i) acc += src[i];
            buf[co] += acc;
          }
        }
        if (xn->requires_grad) {
          Tensor<T> dcols({patch, oh * ow});
          detail::EMap<T>(dcols.data(), patch, oh * ow).noalias() =
              detail::ECMap<T>(wv.data(), cout, patch).transpose() * G;
          Tensor<T>& buf = xn->grad_buf();
          for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int prow = (ci * kh + ky) * kw + kx;
                const T* src = dcols.data() + static_cast<int64_t>(prow) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                  const int iy = oy * stride + ky - pad;
                  if (iy < 0 || iy >= h) continue;
                  for (int ox = 0; ox < ow; ++ox) {
                    const int ix = ox * stride + kx - pad;
                    if (ix >= 0 && ix < wd) buf.at(ci, iy, ix) += src[oy * ow + ox];
                  }
                }
              }
        }
      });
}

// Mean filter over w x w windows, valid positions only. Output is
// [H-w+1, W-w+1] per channel. Running-sum implementation, O(N).
template <typename T>
Var<T> box_filter_valid(const Var<T>& x, int win) {
  int c, h, w;
  detail::chw(x.shape(), c, h, w);
  if (h < win || w < win)
    throw ShapeError("box_filter_valid: image " + shape_str(x.shape()) + " smaller than window " +
                     std::to_string(win));
  const int oh = h - win + 1, ow = w - win + 1;
  Tensor<T> out(detail::like(x.shape(), oh, ow));
  const T norm = T(1) / T(win * win);
  std::vector<T> rowsum(static_cast<size_t>(h) * ow);
  const Tensor<T>& xv = x.value();
  for (int ci = 0; ci < c; ++ci) {
    const T* src = xv.data() + static_cast<int64_t>(ci) * h * w;
    for (int y = 0; y < h; ++y) {
      T s = T(0);
      const T* row = src + static_cast<int64_t>(y) * w;
      for (int k = 0; k < win; ++k) s += row[k];
      rowsum[static_cast<size_t>(y) * ow] = s;
      for (int xcol = 1; xcol < ow; ++xcol) {
        s += row[xcol + win - 1] - row[xcol - 1];
        rowsum[static_cast<size_t>(y) * ow + xcol] = s;
      }
    }
    T* dst = out.data() + static_cast<int64_t>(ci) * oh * ow;
    std::vector<T> colsum(static_cast<size_t>(ow), T(0));
    for (int k = 0; k < win; ++k)
      for (int xcol = 0; xcol < ow; ++xcol)
        colsum[static_cast<size_t>(xcol)] += rowsum[static_cast<size_t>(k) * ow + xcol];
    for (int xcol = 0; xcol < ow; ++xcol) dst[xcol] = colsum[static_cast<size_t>(xcol)] * norm;
    for (int y = 1; y < oh; ++y) {
      for (int xcol = 0; xcol < ow; ++xcol) {
        colsum[static_cast<size_t>(xcol)] += rowsum[static_cast<size_t>(y + win - 1) * ow + xcol] -
                                             rowsum[static_cast<size_t>(y - 1) * ow + xcol];
        dst[static_cast<int64_t>(y) * ow + xcol] = colsum[static_cast<size_t>(xcol)] * norm;
      }
    }
  }
  return detail::make_op<T>(std::move(out), {x},
                            [xn = x.node(), c, h, w, oh, ow, win, norm](Node<T>& nd) {
                              if (!xn->requires_grad) return;
                              Tensor<T>& buf = xn->grad_buf();
                              for (int ci = 0; ci < c; ++ci) {
                                const T* g = nd.grad.data() + static_cast<int64_t>(ci) * oh * ow;
                                T* dst = buf.data() + static_cast<int64_t>(ci) * h * w;
                                for (int oy = 0; oy < oh; ++oy)
                                  for (int ox = 0; ox < ow; ++ox) {
                                    const T gv = g[static_cast<int64_t>(oy) * ow + ox] * norm;
                                    for (int ky = 0; ky < win; ++ky) {
                                      T* row = dst + static_cast<int64_t>(oy + ky) * w + ox;
                                      for (int kx = 0; kx < win; ++kx) row[kx] += gv;
                                    }
                                  }
                              }
                            });
}

// Replicate-pad by p pixels on each side.
template <typename T>
Var<T> pad_replicate(const Var<T>& x, int p) {
  int c, h, w;
  detail::chw(x.shape(), c, h, w);
  const int oh = h + 2 * p, ow = w + 2 * p;
  Tensor<T> out(detail::like(x.shape(), oh, ow));
  const Tensor<T>& xv = x.value();
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < oh; ++y) {
      const int sy = std::clamp(y - p, 0, h - 1);
      for (int xcol = 0; xcol < ow; ++xcol) {
        const int sx = std::clamp(xcol - p, 0, w - 1);
        out.data()[(static_cast<int64_t>(ci) * oh + y) * ow + xcol] =
            xv.data()[(static_cast<int64_t>(ci) * h + sy) * w + sx];
      }
    }
  return detail::make_op<T>(std::move(out), {x}, [xn = x.node(), c, h, w, oh, ow, p](Node<T>& nd) {
    if (!xn->requires_grad) return;
    Tensor<T>& buf = xn->grad_buf();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < oh; ++y) {
        const int sy = std::clamp(y - p, 0, h - 1);
        for (int xcol = 0; xcol < ow; ++xcol) {
          const int sx = std::clamp(xcol - p, 0, w - 1);
          buf.data()[(static_cast<int64_t>(ci) * h + sy) * w + sx] +=
              nd.grad.data()[(static_cast<int64_t>(ci) * oh + y) * ow + xcol];
        }
      }
  });
}

// 2x2 average pooling with stride 2; trailing odd row/col is dropped.
template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
  int c, h, w;
  detail::chw(x.shape(), c, h, w);
  const int oh = h / 2, ow = w / 2;
  Tensor<T> out(detail::like(x.shape(), oh, ow));
  const Tensor<T>& xv = x.value();
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < oh; ++y)
      for (int xcol = 0; xcol < ow; ++xcol) {
        const T* base = xv.data() + (static_cast<int64_t>(ci) * h + 2 * y) * w + 2 * xcol;
        out.data()[(static_cast<int64_t>(ci) * oh + y) * ow + xcol] =
            (base[0] + base[1] + base[w] + base[w + 1]) * T(0.25);
      }
  return detail::make_op<T>(std::move(out), {x}, [xn = x.node(), c, h, w, oh, ow](Node<T>& nd) {
    if (!xn->requires_grad) return;
    Tensor<T>& buf = xn->grad_buf();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < oh; ++y)
        for (int xcol = 0; xcol < ow; ++xcol) {
          const T g = nd.grad.data()[(static_cast<int64_t>(ci) * oh + y) * ow + xcol] * T(0.25);
          T* base = buf.data() + (static_cast<int64_t>(ci) * h + 2 * y) * w + 2 * xcol;
          base[0] += g;
          base[1] += g;
          base[w] += g;
          base[w + 1] += g;
        }
  });
}

// Bilinear resize to (oh, ow), half-pixel centers, edges clamped.
template <typename T>
Var<T> resize_bilinear(const Var<T>& x, int oh, int ow) {
  int c, h, w;
  detail::chw(x.shape(), c, h, w);
  const double sy = static_cast<double>(h) / oh, sx = static_cast<double>(w) / ow;
  struct Tap {
    int i0, i1;
    T w0, w1;
  };
  std::vector<Tap> ty(static_cast<size_t>(oh)), tx(static_cast<size_t>(ow));
  auto make_tap = [](double scale, int out_i, int in_n) {
    double pos = (out_i + 0.5) * scale - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(in_n - 1));
    const int i0 = std::min(static_cast<int>(pos), in_n - 1);
    const int i1 = std::min(i0 + 1, in_n - 1);
    const double f = pos - i0;
    return Tap{i0, i1, static_cast<T>(1.0 - f), static_cast<T>(f)};
  };
  for (int y = 0; y < oh; ++y) ty[static_cast<size_t>(y)] = make_tap(sy, y, h);
  for (int xcol = 0; xcol < ow; ++xcol) tx[static_cast<size_t>(xcol)] = make_tap(sx, xcol, w);

  Tensor<T> out(detail::like(x.shape(), oh, ow));
  const Tensor<T>& xv = x.value();
  for (int ci = 0; ci < c; ++ci) {
    const T* src = xv.data() + static_cast<int64_t>(ci) * h * w;
    T* dst = out.data() + static_cast<int64_t>(ci) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const Tap& a = ty[static_cast<size_t>(y)];
      for (int xcol = 0; xcol < ow; ++xcol) {
        const Tap& b = tx[static_cast<size_t>(xcol)];
        dst[static_cast<int64_t>(y) * ow + xcol] =
            a.w0 * (b.w0 * src[static_cast<int64_t>(a.i0) * w + b.i0] +
                    b.w1 * src[static_cast<int64_t>(a.i0) * w + b.i1]) +
            a.w1 * (b.w0 * src[static_cast<int64_t>(a.i1) * w + b.i0] +
                    b.w1 * src[static_cast<int64_t>(a.i1) * w + b.i1]);
      }
    }
  }
  return detail::make_op<T>(
      std::move(out), {x}, [xn = x.node(), ty, tx, c, h, w, oh, ow](Node<T>& nd) {
        if (!xn->requires_grad) return;
        Tensor<T>& buf = xn->grad_buf();
        for (int ci = 0; ci < c; ++ci) {
          T* dst = buf.data() + static_cast<int64_t>(ci) * h * w;
          const T* g = nd.grad.data() + static_cast<int64_t>(ci) * oh * ow;
          for (int y = 0; y < oh; ++y) {
            const auto& a = ty[static_cast<size_t>(y)];
            for (int xcol = 0; xcol < ow; ++xcol) {
              const auto& b = tx[static_cast<size_t>(xcol)];
              const T gv = g[static_cast<int64_t>(y) * ow + xcol];
              dst[static_cast<int64_t>(a.i0) * w + b.i0] += a.w0 * b.w0 * gv;
              dst[static_cast<int64_t>(a.i0) * w + b.i1] += a.w0 * b.w1 * gv;
              dst[static_cast<int64_t>(a.i1) * w + b.i0] += a.w1 * b.w0 * gv;
              dst[static_cast<int64_t>(a.i1) * w + b.i1] += a.w1 * b.w1 * gv;
            }
          }
        }
      });
}

// Horizontal forward differences: out[...,y,x] = in[...,y,x+1] - in[...,y,x].
template <typename T>
Var<T> diff_x(const Var<T>& x) {
  int c, h, w;
  detail::chw(x.shape(), c, h, w);
  Tensor<T> out(detail::like(x.shape(), h, w - 1));
  const Tensor<T>& xv = x.value();
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y) {
      const T* src = xv.data() + (static_cast<int64_t>(ci) * h + y) * w;
      T* dst = out.data() + (static_cast<int64_t>(ci) * h + y) * (w - 1);
      for (int i = 0; i < w - 1; ++i) dst[i] = src[i + 1] - src[i];
    }
  return detail::make_op<T>(std::move(out), {x}, [xn = x.node(), c, h, w](Node<T>& nd) {
    if (!xn->requires_grad) return;
    Tensor<T>& buf = xn->grad_buf();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < h; ++y) {
        T* dst = buf.data() + (static_cast<int64_t>(ci) * h + y) * w;
        const T* g = nd.grad.data() + (static_cast<int64_t>(ci) * h + y) * (w - 1);
        for (int i = 0; i < w - 1; ++i) {
          dst[i + 1] += g[i];
          dst[i] -= g[i];
        }
      }
  });
}

// Vertical forward differences.
template <typename T>
Var<T> diff_y(const Var<T>& x) {
  int c, h, w;
  detail::chw(x.shape(), c, h, w);
  Tensor<T> out(detail::like(x.shape(), h - 1, w));
  const Tensor<T>& xv = x.value();
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h - 1; ++y)
      for (int xcol = 0; xcol < w; ++xcol)
        out.data()[(static_cast<int64_t>(ci) * (h - 1) + y) * w + xcol] =
            xv.data()[(static_cast<int64_t>(ci) * h + y + 1) * w + xcol] -
            xv.data()[(static_cast<int64_t>(ci) * h + y) * w + xcol];
  return detail::make_op<T>(std::move(out), {x}, [xn = x.node(), c, h, w](Node<T>& nd) {
    if (!xn->requires_grad) return;
    Tensor<T>& buf = xn->grad_buf();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < h - 1; ++y)
        for (int xcol = 0; xcol < w; ++xcol) {
          const T g = nd.grad.data()[(static_cast<int64_t>(ci) * (h - 1) + y) * w + xcol];
          buf.data()[(static_cast<int64_t>(ci) * h + y + 1) * w + xcol] += g;
          buf.data()[(static_cast<int64_t>(ci) * h + y) * w + xcol] -= g;
        }
  });
}

// Mean over the channel axis: [C,H,W] -> [H,W].
template <typename T>
Var<T> channel_mean(const Var<T>& x) {
  if (x.shape().size() != 3) throw ShapeError("channel_mean expects [C,H,W]");
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  Tensor<T> out({h, w});
  const T norm = T(1) / T(c);
  for (int ci = 0; ci < c; ++ci)
    for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i)
      out[i] += x.value()[static_cast<int64_t>(ci) * h * w + i];
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= norm;
  return detail::make_op<T>(std::move(out), {x}, [xn = x.node(), c, h, w, norm](Node<T>& nd) {
    if (!xn->requires_grad) return;
    Tensor<T>& buf = xn->grad_buf();
    for (int ci = 0; ci < c; ++ci)
      for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i)
        buf[static_cast<int64_t>(ci) * h * w + i] += nd.grad[i] * norm;
  });
}

// [C,H,W] -> [1,C]: spatial mean per channel.
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  if (x.shape().size() != 3) throw ShapeError("global_avg_pool expects [C,H,W]");
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const T norm = T(1) / T(h * w);
  Tensor<T> out({1, c});
  for (int ci = 0; ci < c; ++ci) {
    T acc = T(0);
    const T* src = x.value().data() + static_cast<int64_t>(ci) * h * w;
    for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) acc += src[i];
    out[ci] = acc * norm;
  }
  return detail::make_op<T>(std::move(out), {x}, [xn = x.node(), c, h, w, norm](Node<T>& nd) {
    if (!xn->requires_grad) return;
    Tensor<T>& buf = xn->grad_buf();
    for (int ci = 0; ci < c; ++ci) {
      const T g = nd.grad[ci] * norm;
      T* dst = buf.data() + static_cast<int64_t>(ci) * h * w;
      for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) dst[i] += g;
    }
  });
}

// Non-differentiable helpers for constant images.
template <typename T>
Tensor<T> avg_pool2_tensor(const Tensor<T>& x) {
  return avg_pool2(constant(x)).value();
}

template <typename T>
Tensor<T> resize_bilinear_tensor(const Tensor<T>& x, int oh, int ow) {
  return resize_bilinear(constant(x), oh, ow).value();
}

}  // namespace vlora
