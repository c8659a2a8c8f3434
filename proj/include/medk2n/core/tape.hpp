#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "medk2n/core/tensor.hpp"

namespace medk2n {

// Reverse-mode autodiff over a linear tape. One tape per forward pass;
// ops append nodes, backward() walks the tape in reverse. All ops are
// defined for any floating scalar T (float for training, double for
// finite-difference verification).
template <class T>
class Tape {
 public:
  struct Var {
    int i = -1;
    bool valid() const { return i >= 0; }
  };

  // Leaf that should receive gradient (model parameter or probed input).
  Var leaf(Tensor<T> v) {
    return push(std::move(v), {}, nullptr, /*needs_grad=*/true);
  }

  // Constant input; no gradient is tracked through it.
  Var constant(Tensor<T> v) {
    return push(std::move(v), {}, nullptr, /*needs_grad=*/false);
  }
  Var constant_scalar(T v) { return constant(Tensor<T>::scalar(v)); }

  const Tensor<T>& val(Var a) const { return nodes_[a.i].val; }
  const Tensor<T>& grad(Var a) const { return nodes_[a.i].grad; }
  T scalar(Var a) const { return nodes_[a.i].val.x.at(0); }

  std::size_t size() const { return nodes_.size(); }

  // ---- elementwise binary ----

  Var add(Var a, Var b) { return ew2(a, b, [](T u, T v) { return u + v; },
                                    [](T, T, T g) { return std::pair<T, T>{g, g}; }); }
  Var sub(Var a, Var b) { return ew2(a, b, [](T u, T v) { return u - v; },
                                    [](T, T, T g) { return std::pair<T, T>{g, -g}; }); }
  Var mul(Var a, Var b) { return ew2(a, b, [](T u, T v) { return u * v; },
                                    [](T u, T v, T g) { return std::pair<T, T>{g * v, g * u}; }); }

  Var div(Var a, Var b) {
    return ew2(a, b, [](T u, T v) { return u / v; },
               [](T u, T v, T g) { return std::pair<T, T>{g / v, -g * u / (v * v)}; });
  }

  // ---- elementwise unary ----

  Var scale(Var a, T s) {
    return ew1(a, [s](T u) { return s * u; }, [s](T, T, T g) { return s * g; });
  }
  Var add_const(Var a, T c) {
    return ew1(a, [c](T u) { return u + c; }, [](T, T, T g) { return g; });
  }
  Var neg(Var a) { return scale(a, T(-1)); }
  Var sigmoid(Var a) {
    return ew1(a, [](T u) { return T(1) / (T(1) + std::exp(-u)); },
               [](T, T y, T g) { return g * y * (T(1) - y); });
  }
  Var tanh_(Var a) {
    return ew1(a, [](T u) { return std::tanh(u); },
               [](T, T y, T g) { return g * (T(1) - y * y); });
  }
  Var exp_(Var a) {
    return ew1(a, [](T u) { return std::exp(u); }, [](T, T y, T g) { return g * y; });
  }
  Var log_(Var a) {
    return ew1(a, [](T u) { return std::log(u); }, [](T u, T, T g) { return g / u; });
  }
  Var sqrt_(Var a) {
    return ew1(a, [](T u) { return std::sqrt(u); },
               [](T, T y, T g) { return y > T(0) ? g / (T(2) * y) : T(0); });
  }
  Var abs_(Var a) {
    return ew1(a, [](T u) { return std::abs(u); },
               [](T u, T, T g) { return u >= T(0) ? g : -g; });
  }
  Var relu(Var a) {
    return ew1(a, [](T u) { return u > T(0) ? u : T(0); },
               [](T u, T, T g) { return u > T(0) ? g : T(0); });
  }
  Var square(Var a) {
    return ew1(a, [](T u) { return u * u; }, [](T u, T, T g) { return T(2) * u * g; });
  }
  // Pass-through gradient inside [lo,hi], zero outside (hard clamp).
  Var clamp(Var a, T lo, T hi) {
    return ew1(a, [lo, hi](T u) { return std::min(hi, std::max(lo, u)); },
               [lo, hi](T u, T, T g) { return (u >= lo && u <= hi) ? g : T(0); });
  }

  // ---- reductions / vector ops ----

  Var sum(Var a) {
    const Tensor<T>& av = val(a);
    T s = 0;
    for (T v : av.x) s += v;
    return push(Tensor<T>::scalar(s), {a}, [](Tape& t, int self) {
      auto& n = t.nodes_[self];
      T g = n.grad.x[0];
      auto& pg = t.nodes_[n.parents[0]].grad;
      for (auto& v : pg.x) v += g;
    });
  }
  Var mean(Var a) { return scale(sum(a), T(1) / T(val(a).numel())); }

  Var dot(Var a, Var b) {
    const auto& av = val(a);
    const auto& bv = val(b);
    check(av.numel() == bv.numel(), "dot: size mismatch");
    T s = 0;
    for (std::size_t i = 0; i < av.numel(); ++i) s += av.x[i] * bv.x[i];
    return push(Tensor<T>::scalar(s), {a, b}, [](Tape& t, int self) {
      auto& n = t.nodes_[self];
      T g = n.grad.x[0];
      auto& pa = t.nodes_[n.parents[0]];
      auto& pb = t.nodes_[n.parents[1]];
      for (std::size_t i = 0; i < pa.val.numel(); ++i) {
        pa.grad.x[i] += g * pb.val.x[i];
        pb.grad.x[i] += g * pa.val.x[i];
      }
    });
  }

  // Concatenate flattened inputs into one vector.
  Var concat(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat: empty");
    std::size_t n = 0;
    for (Var p : parts) n += val(p).numel();
    Tensor<T> out({static_cast<int>(n)});
    std::size_t off = 0;
    for (Var p : parts) {
      const auto& pv = val(p);
      std::copy(pv.x.begin(), pv.x.end(), out.x.begin() + off);
      off += pv.numel();
    }
    return push(std::move(out), parts, [](Tape& t, int self) {
      auto& n2 = t.nodes_[self];
      std::size_t off2 = 0;
      for (int pi : n2.parents) {
        auto& p = t.nodes_[pi];
        for (std::size_t i = 0; i < p.val.numel(); ++i) p.grad.x[i] += n2.grad.x[off2 + i];
        off2 += p.val.numel();
      }
    });
  }

  // y = W x + b, W shape (out,in), x vector.
  Var linear(Var w, Var b, Var x) {
    const auto& wv = val(w);
    const auto& xv = val(x);
    check(wv.rank() == 2, "linear: W must be rank 2");
    int out = wv.dim(0), in = wv.dim(1);
    check(static_cast<int>(xv.numel()) == in, "linear: x size mismatch");
    const auto& bv = val(b);
    check(static_cast<int>(bv.numel()) == out, "linear: b size mismatch");
    Tensor<T> y({out});
    for (int o = 0; o < out; ++o) {
      T s = bv.x[o];
      const T* wr = wv.x.data() + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) s += wr[i] * xv.x[i];
      y.x[o] = s;
    }
    return push(std::move(y), {w, b, x}, [out, in](Tape& t, int self) {
      auto& n = t.nodes_[self];
      auto& W = t.nodes_[n.parents[0]];
      auto& B = t.nodes_[n.parents[1]];
      auto& X = t.nodes_[n.parents[2]];
      for (int o = 0; o < out; ++o) {
        T g = n.grad.x[o];
        if (g == T(0)) continue;
        B.grad.x[o] += g;
        T* wg = W.grad.x.data() + static_cast<std::size_t>(o) * in;
        const T* wv2 = W.val.x.data() + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) {
          wg[i] += g * X.val.x[i];
          X.grad.x[i] += g * wv2[i];
        }
      }
    });
  }

  // y = M v with M rank-2 (rows, cols), v of length cols.
  Var matvec(Var m, Var v) {
    const auto& mv = val(m);
    const auto& vv = val(v);
    check(mv.rank() == 2, "matvec: rank-2 matrix expected");
    int rows = mv.dim(0), cols = mv.dim(1);
    check(static_cast<int>(vv.numel()) == cols, "matvec: size mismatch");
    Tensor<T> y({rows});
    for (int r = 0; r < rows; ++r) {
      T s = 0;
      const T* mr = mv.x.data() + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) s += mr[c] * vv.x[c];
      y.x[r] = s;
    }
    return push(std::move(y), {m, v}, [rows, cols](Tape& t, int self) {
      auto& n = t.nodes_[self];
      auto& M = t.nodes_[n.parents[0]];
      auto& V = t.nodes_[n.parents[1]];
      for (int r = 0; r < rows; ++r) {
        T g = n.grad.x[r];
        if (g == T(0)) continue;
        T* mg = M.grad.x.data() + static_cast<std::size_t>(r) * cols;
        const T* mvr = M.val.x.data() + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) {
          mg[c] += g * V.val.x[c];
          V.grad.x[c] += g * mvr[c];
        }
      }
    });
  }

  // y = Mᵀ v with M rank-2 (rows, cols), v of length rows; result length cols.
  Var matvec_t(Var m, Var v) {
    const auto& mv = val(m);
    const auto& vv = val(v);
    check(mv.rank() == 2, "matvec_t: rank-2 matrix expected");
    int rows = mv.dim(0), cols = mv.dim(1);
    check(static_cast<int>(vv.numel()) == rows, "matvec_t: size mismatch");
    Tensor<T> y({cols});
    for (int r = 0; r < rows; ++r) {
      const T* mr = mv.x.data() + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) y.x[c] += mr[c] * vv.x[r];
    }
    return push(std::move(y), {m, v}, [rows, cols](Tape& t, int self) {
      auto& n = t.nodes_[self];
      auto& M = t.nodes_[n.parents[0]];
      auto& V = t.nodes_[n.parents[1]];
      for (int r = 0; r < rows; ++r) {
        T* mg = M.grad.x.data() + static_cast<std::size_t>(r) * cols;
        const T* mvr = M.val.x.data() + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) {
          T g = n.grad.x[c];
          mg[c] += g * V.val.x[r];
          V.grad.x[r] += g * mvr[c];
        }
      }
    });
  }

  Var softmax_vec(Var a) {
    const auto& av = val(a);
    Tensor<T> y(av.shape);
    T mx = av.x[0];
    for (T v : av.x) mx = std::max(mx, v);
    T z = 0;
    for (std::size_t i = 0; i < av.numel(); ++i) {
      y.x[i] = std::exp(av.x[i] - mx);
      z += y.x[i];
    }
    for (auto& v : y.x) v /= z;
    return push(std::move(y), {a}, [](Tape& t, int self) {
      auto& n = t.nodes_[self];
      auto& p = t.nodes_[n.parents[0]];
      T gy = 0;
      for (std::size_t i = 0; i < n.val.numel(); ++i) gy += n.grad.x[i] * n.val.x[i];
      for (std::size_t i = 0; i < n.val.numel(); ++i)
        p.grad.x[i] += n.val.x[i] * (n.grad.x[i] - gy);
    });
  }

  // log(sum(exp(a))) over a vector, numerically stable.
  Var logsumexp(Var a) {
    const auto& av = val(a);
    T mx = av.x[0];
    for (T v : av.x) mx = std::max(mx, v);
    T z = 0;
    for (T v : av.x) z += std::exp(v - mx);
    T out = mx + std::log(z);
    return push(Tensor<T>::scalar(out), {a}, [](Tape& t, int self) {
      auto& n = t.nodes_[self];
      auto& p = t.nodes_[n.parents[0]];
      T g = n.grad.x[0];
      T lse = n.val.x[0];
      for (std::size_t i = 0; i < p.val.numel(); ++i)
        p.grad.x[i] += g * std::exp(p.val.x[i] - lse);
    });
  }

  Var l2_normalize(Var a, T eps = T(1e-12)) {
    const auto& av = val(a);
    T nrm2 = 0;
    for (T v : av.x) nrm2 += v * v;
    T nrm = std::sqrt(nrm2 + eps);
    Tensor<T> y(av.shape);
    for (std::size_t i = 0; i < av.numel(); ++i) y.x[i] = av.x[i] / nrm;
    return push(std::move(y), {a}, [nrm](Tape& t, int self) {
      auto& n = t.nodes_[self];
      auto& p = t.nodes_[n.parents[0]];
      T gy = 0;
      for (std::size_t i = 0; i < n.val.numel(); ++i) gy += n.grad.x[i] * n.val.x[i];
      for (std::size_t i = 0; i < n.val.numel(); ++i)
        p.grad.x[i] += (n.grad.x[i] - gy * n.val.x[i]) / nrm;
    });
  }

  // ---- spatial ops (rank-3 maps: channels, height, width) ----

  // 2D convolution; w shape (oc, ic, k, k), zero padding `pad`, stride `stride`.
  Var conv2d(Var x, Var w, Var b, int stride, int pad) {
    const auto& xv = val(x);
    const auto& wv = val(w);
    check(xv.rank() == 3 && wv.rank() == 4, "conv2d: rank");
    int ic = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
    int oc = wv.dim(0), k = wv.dim(2);
    check(wv.dim(1) == ic && wv.dim(3) == k, "conv2d: weight shape");
    int oh = (h + 2 * pad - k) / stride + 1;
    int ow = (wd + 2 * pad - k) / stride + 1;
    check(oh >= 1 && ow >= 1, "conv2d: output collapsed");
    const auto& bv = val(b);
    check(static_cast<int>(bv.numel()) == oc, "conv2d: bias size");
    Tensor<T> y({oc, oh, ow});
    // boundary ranges hoisted out of the inner loops so they can vectorize
    for (int o = 0; o < oc; ++o)
      for (int r = 0; r < oh; ++r) {
        int r0 = r * stride - pad;
        int dr_lo = std::max(0, -r0), dr_hi = std::min(k, h - r0);
        for (int c = 0; c < ow; ++c) {
          T s = bv.x[o];
          int c0 = c * stride - pad;
          int dc_lo = std::max(0, -c0), dc_hi = std::min(k, wd - c0);
          for (int q = 0; q < ic; ++q)
            for (int dr = dr_lo; dr < dr_hi; ++dr) {
              const T* xr = &xv.at(q, r0 + dr, c0 + dc_lo);
              const T* wr =
                  &wv.x[((static_cast<std::size_t>(o) * ic + q) * k + dr) * k + dc_lo];
              for (int dc = 0; dc < dc_hi - dc_lo; ++dc) s += wr[dc] * xr[dc];
            }
          y.at(o, r, c) = s;
        }
      }
    return push(std::move(y), {x, w, b},
                [stride, pad, ic, h, wd, oc, k, oh, ow](Tape& t, int self) {
      auto& n = t.nodes_[self];
      auto& X = t.nodes_[n.parents[0]];
      auto& W = t.nodes_[n.parents[1]];
      auto& B = t.nodes_[n.parents[2]];
      for (int o = 0; o < oc; ++o)
        for (int r = 0; r < oh; ++r) {
          int r0 = r * stride - pad;
          int dr_lo = std::max(0, -r0), dr_hi = std::min(k, h - r0);
          for (int c = 0; c < ow; ++c) {
            T g = n.grad.at(o, r, c);
            if (g == T(0)) continue;
            B.grad.x[o] += g;
            int c0 = c * stride - pad;
            int dc_lo = std::max(0, -c0), dc_hi = std::min(k, wd - c0);
            for (int q = 0; q < ic; ++q)
              for (int dr = dr_lo; dr < dr_hi; ++dr) {
                const T* xr = &X.val.at(q, r0 + dr, c0 + dc_lo);
                T* xg = &X.grad.at(q, r0 + dr, c0 + dc_lo);
                std::size_t wo =
                    ((static_cast<std::size_t>(o) * ic + q) * k + dr) * k + dc_lo;
                for (int dc = 0; dc < dc_hi - dc_lo; ++dc) {
                  W.grad.x[wo + dc] += g * xr[dc];
                  xg[dc] += g * W.val.x[wo + dc];
                }
              }
          }
        }
    });
  }

  // Depthwise convolution with a fixed (non-learnable) k×k kernel, pad k/2.
  // Used for Gaussian windowing in the differentiable SSIM.
  Var conv2d_fixed(Var x, const Tensor<T>& kernel) {
    const auto& xv = val(x);
    check(xv.rank() == 3 && kernel.rank() == 2, "conv2d_fixed: rank");
    int ch = xv.dim(0), h = xv.dim(1), wd = xv.dim(2), k = kernel.dim(0);
    int pad = k / 2;
    Tensor<T> y(xv.shape);
    auto apply = [&](const Tensor<T>& src, Tensor<T>& dst) {
      for (int q = 0; q < ch; ++q)
        for (int r = 0; r < h; ++r) {
          int dr_lo = std::max(0, pad - r), dr_hi = std::min(k, h - r + pad);
          for (int c = 0; c < wd; ++c) {
            T s = 0;
            int dc_lo = std::max(0, pad - c), dc_hi = std::min(k, wd - c + pad);
            for (int dr = dr_lo; dr < dr_hi; ++dr) {
              const T* xr = &src.at(q, r + dr - pad, c + dc_lo - pad);
              const T* kr = &kernel.x[static_cast<std::size_t>(dr) * k + dc_lo];
              for (int dc = 0; dc < dc_hi - dc_lo; ++dc) s += kr[dc] * xr[dc];
            }
            dst.at(q, r, c) = s;
          }
        }
    };
    apply(xv, y);
    Tensor<T> ker = kernel;
    return push(std::move(y), {x}, [ker, apply_k = k, ch, h, wd](Tape& t, int self) {
      auto& n = t.nodes_[self];
      auto& X = t.nodes_[n.parents[0]];
      int k = apply_k, pad = k / 2;
      // scatter the gradient through the window (self-adjoint up to the flip)
      for (int q = 0; q < ch; ++q)
        for (int r = 0; r < h; ++r) {
          int dr_lo = std::max(0, pad - r), dr_hi = std::min(k, h - r + pad);
          for (int c = 0; c < wd; ++c) {
            T g = n.grad.at(q, r, c);
            if (g == T(0)) continue;
            int dc_lo = std::max(0, pad - c), dc_hi = std::min(k, wd - c + pad);
            for (int dr = dr_lo; dr < dr_hi; ++dr) {
              T* xg = &X.grad.at(q, r + dr - pad, c + dc_lo - pad);
              const T* kr = &ker.x[static_cast<std::size_t>(dr) * k + dc_lo];
              for (int dc = 0; dc < dc_hi - dc_lo; ++dc) xg[dc] += g * kr[dc];
            }
          }
        }
    });
  }

  Var upsample2(Var x) {
    const auto& xv = val(x);
    check(xv.rank() == 3, "upsample2: rank");
    int ch = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
    Tensor<T> y({ch, 2 * h, 2 * wd});
    for (int q = 0; q < ch; ++q)
      for (int r = 0; r < 2 * h; ++r)
        for (int c = 0; c < 2 * wd; ++c) y.at(q, r, c) = xv.at(q, r / 2, c / 2);
    return push(std::move(y), {x}, [ch, h, wd](Tape& t, int self) {
      auto& n = t.nodes_[self];
      auto& X = t.nodes_[n.parents[0]];
      for (int q = 0; q < ch; ++q)
        for (int r = 0; r < 2 * h; ++r)
          for (int c = 0; c < 2 * wd; ++c)
            X.grad.at(q, r / 2, c / 2) += n.grad.at(q, r, c);
    });
  }

  // Global average pool (c,h,w) -> (c).
  Var gap(Var x) {
    const auto& xv = val(x);
    check(xv.rank() == 3, "gap: rank");
    int ch = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
    Tensor<T> y({ch});
    T inv = T(1) / T(h * wd);
    for (int q = 0; q < ch; ++q) {
      T s = 0;
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < wd; ++c) s += xv.at(q, r, c);
      y.x[q] = s * inv;
    }
    return push(std::move(y), {x}, [ch, h, wd, inv](Tape& t, int self) {
      auto& n = t.nodes_[self];
      auto& X = t.nodes_[n.parents[0]];
      for (int q = 0; q < ch; ++q) {
        T g = n.grad.x[q] * inv;
        for (int r = 0; r < h; ++r)
          for (int c = 0; c < wd; ++c) X.grad.at(q, r, c) += g;
      }
    });
  }

  // map (1,h,w) times features (c,h,w), broadcast over channels.
  Var broadcast_mul_map(Var map, Var x) {
    const auto& mv = val(map);
    const auto& xv = val(x);
    check(mv.rank() == 3 && mv.dim(0) == 1 && xv.rank() == 3, "broadcast_mul_map: rank");
    check(mv.dim(1) == xv.dim(1) && mv.dim(2) == xv.dim(2), "broadcast_mul_map: hw");
    int ch = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
    Tensor<T> y(xv.shape);
    for (int q = 0; q < ch; ++q)
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < wd; ++c) y.at(q, r, c) = mv.at(0, r, c) * xv.at(q, r, c);
    return push(std::move(y), {map, x}, [ch, h, wd](Tape& t, int self) {
      auto& n = t.nodes_[self];
      auto& M = t.nodes_[n.parents[0]];
      auto& X = t.nodes_[n.parents[1]];
      for (int q = 0; q < ch; ++q)
        for (int r = 0; r < h; ++r)
          for (int c = 0; c < wd; ++c) {
            T g = n.grad.at(q, r, c);
            M.grad.at(0, r, c) += g * X.val.at(q, r, c);
            X.grad.at(q, r, c) += g * M.val.at(0, r, c);
          }
    });
  }

  // Add a scalar var to every element of a map.
  Var broadcast_add_scalar(Var x, Var s) {
    const auto& xv = val(x);
    check(val(s).numel() == 1, "broadcast_add_scalar: scalar expected");
    Tensor<T> y(xv.shape);
    T sv = scalar(s);
    for (std::size_t i = 0; i < xv.numel(); ++i) y.x[i] = xv.x[i] + sv;
    return push(std::move(y), {x, s}, [](Tape& t, int self) {
      auto& n = t.nodes_[self];
      auto& X = t.nodes_[n.parents[0]];
      auto& S = t.nodes_[n.parents[1]];
      for (std::size_t i = 0; i < n.val.numel(); ++i) {
        X.grad.x[i] += n.grad.x[i];
        S.grad.x[0] += n.grad.x[i];
      }
    });
  }

  // Add a channel vector (c) to every spatial position of a (c,h,w) map.
  Var broadcast_add_channels(Var x, Var v) {
    const auto& xv = val(x);
    const auto& vv = val(v);
    check(xv.rank() == 3, "broadcast_add_channels: rank");
    check(static_cast<int>(vv.numel()) == xv.dim(0), "broadcast_add_channels: size");
    int ch = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
    Tensor<T> y(xv.shape);
    for (int q = 0; q < ch; ++q)
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < wd; ++c) y.at(q, r, c) = xv.at(q, r, c) + vv.x[q];
    return push(std::move(y), {x, v}, [ch, h, wd](Tape& t, int self) {
      auto& n = t.nodes_[self];
      auto& X = t.nodes_[n.parents[0]];
      auto& V = t.nodes_[n.parents[1]];
      for (int q = 0; q < ch; ++q)
        for (int r = 0; r < h; ++r)
          for (int c = 0; c < wd; ++c) {
            X.grad.at(q, r, c) += n.grad.at(q, r, c);
            V.grad.x[q] += n.grad.at(q, r, c);
          }
    });
  }

  // Scale a tensor by a scalar var.
  Var scale_by(Var x, Var s) {
    const auto& xv = val(x);
    check(val(s).numel() == 1, "scale_by: scalar expected");
    Tensor<T> y(xv.shape);
    T sv = scalar(s);
    for (std::size_t i = 0; i < xv.numel(); ++i) y.x[i] = xv.x[i] * sv;
    return push(std::move(y), {x, s}, [](Tape& t, int self) {
      auto& n = t.nodes_[self];
      auto& X = t.nodes_[n.parents[0]];
      auto& S = t.nodes_[n.parents[1]];
      for (std::size_t i = 0; i < n.val.numel(); ++i) {
        X.grad.x[i] += n.grad.x[i] * S.val.x[0];
        S.grad.x[0] += n.grad.x[i] * X.val.x[i];
      }
    });
  }

  // Gated linear scan along a fixed pixel order:
  //   h_t = a ⊙ h_{t-1} + (1-a) ⊙ x_t,  a = sigmoid(decay) per channel.
  // `order` lists (row, col) pairs covering the grid; `reverse` walks it backwards.
  Var gated_scan(Var x, Var decay, const std::vector<std::pair<int, int>>& order,
                 bool reverse) {
    const auto& xv = val(x);
    check(xv.rank() == 3, "gated_scan: rank");
    int ch = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
    check(static_cast<int>(order.size()) == h * wd, "gated_scan: order size");
    const auto& dv = val(decay);
    check(static_cast<int>(dv.numel()) == ch, "gated_scan: decay size");
    std::vector<T> a(ch);
    for (int q = 0; q < ch; ++q) a[q] = T(1) / (T(1) + std::exp(-dv.x[q]));
    int L = h * wd;
    Tensor<T> y(xv.shape);
    for (int q = 0; q < ch; ++q) {
      T hq = 0;
      for (int t = 0; t < L; ++t) {
        auto [r, c] = order[reverse ? L - 1 - t : t];
        hq = a[q] * hq + (T(1) - a[q]) * xv.at(q, r, c);
        y.at(q, r, c) = hq;
      }
    }
    std::vector<std::pair<int, int>> ord = order;
    return push(std::move(y), {x, decay},
                [ord, reverse, ch, L, a](Tape& t, int self) {
      auto& n = t.nodes_[self];
      auto& X = t.nodes_[n.parents[0]];
      auto& D = t.nodes_[n.parents[1]];
      // dy_t/dh_{t-1} = a; accumulate running gradient backwards over the order.
      for (int q = 0; q < ch; ++q) {
        T aq = a[q];
        T run = 0;        // gradient w.r.t. h_t flowing from later steps
        T da_sum = 0;     // gradient w.r.t. gate a[q]
        // reconstruct h_{t-1} by rescanning forward, store h values
        std::vector<T> hs(L);
        T hq = 0;
        for (int s = 0; s < L; ++s) {
          auto [r, c] = ord[reverse ? L - 1 - s : s];
          hq = aq * hq + (T(1) - aq) * X.val.at(q, r, c);
          hs[s] = hq;
        }
        for (int s = L - 1; s >= 0; --s) {
          auto [r, c] = ord[reverse ? L - 1 - s : s];
          T g = run + n.grad.at(q, r, c);
          T hprev = s > 0 ? hs[s - 1] : T(0);
          T xv2 = X.val.at(q, r, c);
          X.grad.at(q, r, c) += g * (T(1) - aq);
          da_sum += g * (hprev - xv2);
          run = g * aq;
        }
        D.grad.x[q] += da_sum * aq * (T(1) - aq);  // chain through sigmoid
      }
    });
  }

  // Seed d(out)/d(out)=1 and propagate. `out` must be scalar.
  void backward(Var out) {
    check(val(out).numel() == 1, "backward: scalar output required");
    for (auto& n : nodes_) n.grad.fill(T(0));
    nodes_[out.i].grad.x[0] = T(1);
    for (int i = out.i; i >= 0; --i)
      if (nodes_[i].back) nodes_[i].back(*this, i);
  }

 private:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    std::vector<int> parents;
    std::function<void(Tape&, int)> back;
  };

  std::vector<Node> nodes_;

  static void check(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
  }

  Var push(Tensor<T> v, std::vector<Var> parents, std::function<void(Tape&, int)> back,
           bool = false) {
    Node n;
    n.grad = Tensor<T>(v.shape);
    n.val = std::move(v);
    for (Var p : parents) n.parents.push_back(p.i);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  template <class F, class B>
  Var ew1(Var a, F f, B b) {
    const auto& av = val(a);
    Tensor<T> y(av.shape);
    for (std::size_t i = 0; i < av.numel(); ++i) y.x[i] = f(av.x[i]);
    return push(std::move(y), {a}, [b](Tape& t, int self) {
      auto& n = t.nodes_[self];
      auto& p = t.nodes_[n.parents[0]];
      for (std::size_t i = 0; i < n.val.numel(); ++i)
        p.grad.x[i] += b(p.val.x[i], n.val.x[i], n.grad.x[i]);
    });
  }

  template <class F, class B>
  Var ew2(Var a, Var bvar, F f, B b) {
    const auto& av = val(a);
    const auto& bv = val(bvar);
    check(av.shape == bv.shape, "elementwise: shape mismatch");
    Tensor<T> y(av.shape);
    for (std::size_t i = 0; i < av.numel(); ++i) y.x[i] = f(av.x[i], bv.x[i]);
    return push(std::move(y), {a, bvar}, [b](Tape& t, int self) {
      auto& n = t.nodes_[self];
      auto& pa = t.nodes_[n.parents[0]];
      auto& pb = t.nodes_[n.parents[1]];
      for (std::size_t i = 0; i < n.val.numel(); ++i) {
        auto [ga, gb] = b(pa.val.x[i], pb.val.x[i], n.grad.x[i]);
        pa.grad.x[i] += ga;
        pb.grad.x[i] += gb;
      }
    });
  }
};

}  // namespace medk2n
