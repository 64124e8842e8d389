#pragma once

#include <algorithm>
#include <cmath>

#include "dgssm/tensor.hpp"

// Differentiable op library. Every op takes the tape as its first argument
// (nullptr = plain forward evaluation), materializes its output, and records
// a backward closure when any input participates in differentiation.
// Backward closures capture tensor handles by value; handles are shallow, so
// gradients accumulate into the shared buffers of the original inputs.

namespace dgssm {

namespace detail {

inline long floor_div(long a, long b) {
  long q = a / b, r = a % b;
  return (r != 0 && ((r < 0) != (b < 0))) ? q - 1 : q;
}

inline long ceil_div(long a, long b) { return -floor_div(-a, b); }

// Row-major strides, with 0 where a dimension is broadcast (size 1).
inline std::vector<long> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<long> st(out.size(), 0);
  long run = 1;
  for (int i = static_cast<int>(in.size()) - 1, o = static_cast<int>(out.size()) - 1; i >= 0;
       --i, --o) {
    const long di = in[static_cast<size_t>(i)];
    const long dn = out[static_cast<size_t>(o)];
    if (di != dn && di != 1)
      throw Error("cannot broadcast " + shape_str(in) + " to " + shape_str(out));
    st[static_cast<size_t>(o)] = (di == 1) ? 0 : run;
    run *= di;
  }
  return st;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t nd = std::max(a.size(), b.size());
  Shape out(nd, 1);
  for (size_t k = 0; k < nd; ++k) {
    const long da = (k < nd - a.size()) ? 1 : a[k - (nd - a.size())];
    const long db = (k < nd - b.size()) ? 1 : b[k - (nd - b.size())];
    if (da != db && da != 1 && db != 1)
      throw Error("incompatible shapes " + shape_str(a) + " and " + shape_str(b));
    out[k] = std::max(da, db);
  }
  return out;
}

// Walks every output index alongside the two (possibly broadcast) input
// offsets. fn(i_out, off_a, off_b).
template <typename Fn>
void for_each_pair(const Shape& out, const std::vector<long>& sa, const std::vector<long>& sb,
                   Fn&& fn) {
  const long n = numel_of(out);
  const int nd = static_cast<int>(out.size());
  std::vector<long> idx(static_cast<size_t>(nd), 0);
  long oa = 0, ob = 0;
  for (long i = 0; i < n; ++i) {
    fn(i, oa, ob);
    for (int d = nd - 1; d >= 0; --d) {
      idx[static_cast<size_t>(d)]++;
      oa += sa[static_cast<size_t>(d)];
      ob += sb[static_cast<size_t>(d)];
      if (idx[static_cast<size_t>(d)] < out[static_cast<size_t>(d)]) break;
      oa -= sa[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
      ob -= sb[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops (numpy-style trailing broadcast)

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> binary_op(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b, const char* name,
                    FwdFn fwd, BwdFn bwd) {
  const bool rec = tape_wants(tape, {&a, &b});
  if (a.shape() == b.shape()) {
    const long n = a.numel();
    std::vector<T> out(static_cast<size_t>(n));
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    for (long i = 0; i < n; ++i) out[static_cast<size_t>(i)] = fwd(pa[i], pb[i]);
    ensure_finite(out, name);
    Tensor<T> y(a.shape(), std::move(out));
    if (tape != nullptr && rec) {
      Tensor<T> ac = a, bc = b;
      tape->record(y, [ac, bc, y, bwd]() mutable {
        const long n = y.numel();
        const T* go = y.grad().data();
        const T* pa = ac.data().data();
        const T* pb = bc.data().data();
        T* ga = ac.needs_grad() ? ac.mutable_grad().data() : nullptr;
        T* gb = bc.needs_grad() ? bc.mutable_grad().data() : nullptr;
        for (long i = 0; i < n; ++i) {
          T da, db;
          bwd(pa[i], pb[i], go[i], da, db);
          if (ga) ga[i] += da;
          if (gb) gb[i] += db;
        }
      });
    }
    return y;
  }
  const Shape os = detail::broadcast_shape(a.shape(), b.shape());
  const auto sa = detail::broadcast_strides(a.shape(), os);
  const auto sb = detail::broadcast_strides(b.shape(), os);
  std::vector<T> out(static_cast<size_t>(numel_of(os)));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  detail::for_each_pair(os, sa, sb, [&](long i, long oa, long ob) {
    out[static_cast<size_t>(i)] = fwd(pa[oa], pb[ob]);
  });
  ensure_finite(out, name);
  Tensor<T> y(os, std::move(out));
  if (tape != nullptr && rec) {
    Tensor<T> ac = a, bc = b;
    tape->record(y, [ac, bc, y, os, sa, sb, bwd]() mutable {
      const T* go = y.grad().data();
      const T* pa = ac.data().data();
      const T* pb = bc.data().data();
      T* ga = ac.needs_grad() ? ac.mutable_grad().data() : nullptr;
      T* gb = bc.needs_grad() ? bc.mutable_grad().data() : nullptr;
      detail::for_each_pair(os, sa, sb, [&](long i, long oa, long ob) {
        T da, db;
        bwd(pa[oa], pb[ob], go[i], da, db);
        if (ga) ga[oa] += da;
        if (gb) gb[ob] += db;
      });
    });
  }
  return y;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      tape, a, b, "add", [](T x, T y) { return x + y; },
      [](T, T, T g, T& da, T& db) {
        da = g;
        db = g;
      });
}

template <typename T>
Tensor<T> sub(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      tape, a, b, "sub", [](T x, T y) { return x - y; },
      [](T, T, T g, T& da, T& db) {
        da = g;
        db = -g;
      });
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      tape, a, b, "mul", [](T x, T y) { return x * y; },
      [](T x, T y, T g, T& da, T& db) {
        da = g * y;
        db = g * x;
      });
}

template <typename T>
Tensor<T> div(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      tape, a, b, "div", [](T x, T y) { return x / y; },
      [](T x, T y, T g, T& da, T& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

// ---------------------------------------------------------------------------
// elementwise unary ops

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> unary_op(Tape<T>* tape, const Tensor<T>& a, const char* name, FwdFn fwd, BwdFn bwd) {
  const bool rec = tape_wants(tape, {&a});
  const long n = a.numel();
  std::vector<T> out(static_cast<size_t>(n));
  const T* pa = a.data().data();
  for (long i = 0; i < n; ++i) out[static_cast<size_t>(i)] = fwd(pa[i]);
  ensure_finite(out, name);
  Tensor<T> y(a.shape(), std::move(out));
  if (tape != nullptr && rec) {
    Tensor<T> ac = a;
    tape->record(y, [ac, y, bwd]() mutable {
      const long n = y.numel();
      const T* go = y.grad().data();
      const T* pa = ac.data().data();
      const T* py = y.data().data();
      T* ga = ac.mutable_grad().data();
      for (long i = 0; i < n; ++i) ga[i] += bwd(pa[i], py[i], go[i]);
    });
  }
  return y;
}

template <typename T>
Tensor<T> neg(Tape<T>* tape, const Tensor<T>& a) {
  return unary_op(
      tape, a, "neg", [](T x) { return -x; }, [](T, T, T g) { return -g; });
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& a, T c) {
  return unary_op(
      tape, a, "scale", [c](T x) { return c * x; }, [c](T, T, T g) { return c * g; });
}

template <typename T>
Tensor<T> add_scalar(Tape<T>* tape, const Tensor<T>& a, T c) {
  return unary_op(
      tape, a, "add_scalar", [c](T x) { return x + c; }, [](T, T, T g) { return g; });
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& a) {
  return unary_op(
      tape, a, "relu", [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T, T g) { return x > T(0) ? g : T(0); });
}

template <typename T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& a) {
  return unary_op(
      tape, a, "sigmoid",
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y, T g) { return g * y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(Tape<T>* tape, const Tensor<T>& a) {
  return unary_op(
      tape, a, "tanh", [](T x) { return std::tanh(x); },
      [](T, T y, T g) { return g * (T(1) - y * y); });
}

template <typename T>
Tensor<T> exp(Tape<T>* tape, const Tensor<T>& a) {
  return unary_op(
      tape, a, "exp", [](T x) { return std::exp(x); }, [](T, T y, T g) { return g * y; });
}

template <typename T>
Tensor<T> log(Tape<T>* tape, const Tensor<T>& a) {
  return unary_op(
      tape, a, "log", [](T x) { return std::log(x); }, [](T x, T, T g) { return g / x; });
}

template <typename T>
Tensor<T> sqrt(Tape<T>* tape, const Tensor<T>& a) {
  return unary_op(
      tape, a, "sqrt", [](T x) { return std::sqrt(x); },
      [](T, T y, T g) { return g / (T(2) * y); });
}

// Subgradient 0 at the kink.
template <typename T>
Tensor<T> abs(Tape<T>* tape, const Tensor<T>& a) {
  return unary_op(
      tape, a, "abs", [](T x) { return std::abs(x); },
      [](T x, T, T g) { return x > T(0) ? g : (x < T(0) ? -g : T(0)); });
}

// Gradient passes only strictly inside [lo, hi].
template <typename T>
Tensor<T> clamp(Tape<T>* tape, const Tensor<T>& a, T lo, T hi) {
  return unary_op(
      tape, a, "clamp", [lo, hi](T x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](T x, T, T g) { return (x > lo && x < hi) ? g : T(0); });
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& a) {
  const bool rec = tape_wants(tape, {&a});
  T s = T(0);
  for (T v : a.data()) s += v;
  std::vector<T> out{s};
  ensure_finite(out, "sum_all");
  Tensor<T> y(Shape{1}, std::move(out));
  if (tape != nullptr && rec) {
    Tensor<T> ac = a;
    tape->record(y, [ac, y]() mutable {
      const T g = y.grad()[0];
      for (auto& gi : ac.mutable_grad()) gi += g;
    });
  }
  return y;
}

template <typename T>
Tensor<T> mean_all(Tape<T>* tape, const Tensor<T>& a) {
  Tensor<T> s = sum_all(tape, a);
  return scale(tape, s, T(1) / static_cast<T>(a.numel()));
}

// (C,H,W) -> (C): spatial mean per channel.
template <typename T>
Tensor<T> global_avg_pool(Tape<T>* tape, const Tensor<T>& a) {
  if (a.ndim() != 3) throw Error("global_avg_pool expects (C,H,W), got " + shape_str(a.shape()));
  const bool rec = tape_wants(tape, {&a});
  const long C = a.dim(0), HW = a.dim(1) * a.dim(2);
  std::vector<T> out(static_cast<size_t>(C), T(0));
  const T* p = a.data().data();
  for (long c = 0; c < C; ++c) {
    T s = T(0);
    for (long i = 0; i < HW; ++i) s += p[c * HW + i];
    out[static_cast<size_t>(c)] = s / static_cast<T>(HW);
  }
  ensure_finite(out, "global_avg_pool");
  Tensor<T> y(Shape{C}, std::move(out));
  if (tape != nullptr && rec) {
    Tensor<T> ac = a;
    tape->record(y, [ac, y, C, HW]() mutable {
      const T* go = y.grad().data();
      T* ga = ac.mutable_grad().data();
      for (long c = 0; c < C; ++c) {
        const T g = go[c] / static_cast<T>(HW);
        for (long i = 0; i < HW; ++i) ga[c * HW + i] += g;
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// linear algebra

// (m,k) x (k,n) -> (m,n)
template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw Error("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const bool rec = tape_wants(tape, {&a, &b});
  const long m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(static_cast<size_t>(m * n), T(0));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (long i = 0; i < m; ++i)
    for (long p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      const T* br = pb + p * n;
      T* yr = out.data() + i * n;
      for (long j = 0; j < n; ++j) yr[j] += av * br[j];
    }
  ensure_finite(out, "matmul");
  Tensor<T> y(Shape{m, n}, std::move(out));
  if (tape != nullptr && rec) {
    Tensor<T> ac = a, bc = b;
    tape->record(y, [ac, bc, y, m, k, n]() mutable {
      const T* go = y.grad().data();
      const T* pa = ac.data().data();
      const T* pb = bc.data().data();
      if (ac.needs_grad()) {
        T* ga = ac.mutable_grad().data();
        for (long i = 0; i < m; ++i)
          for (long j = 0; j < n; ++j) {
            const T g = go[i * n + j];
            const T* br = pb + j;
            for (long p = 0; p < k; ++p) ga[i * k + p] += g * br[p * n];
          }
      }
      if (bc.needs_grad()) {
        T* gb = bc.mutable_grad().data();
        for (long i = 0; i < m; ++i)
          for (long p = 0; p < k; ++p) {
            const T av = pa[i * k + p];
            const T* gr = go + i * n;
            T* gbr = gb + p * n;
            for (long j = 0; j < n; ++j) gbr[j] += av * gr[j];
          }
      }
    });
  }
  return y;
}

// W (dout,din), b (dout) optional, x (din) -> (dout)
template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& w, const Tensor<T>& b, const Tensor<T>& x) {
  if (w.ndim() != 2 || x.ndim() != 1 || w.dim(1) != x.dim(0))
    throw Error("linear shape mismatch: " + shape_str(w.shape()) + " x " + shape_str(x.shape()));
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != w.dim(0)))
    throw Error("linear bias shape mismatch");
  const bool rec = b.defined() ? tape_wants(tape, {&w, &b, &x}) : tape_wants(tape, {&w, &x});
  const long dout = w.dim(0), din = w.dim(1);
  std::vector<T> out(static_cast<size_t>(dout), T(0));
  const T* pw = w.data().data();
  const T* px = x.data().data();
  for (long i = 0; i < dout; ++i) {
    T s = b.defined() ? b.at(i) : T(0);
    const T* wr = pw + i * din;
    for (long j = 0; j < din; ++j) s += wr[j] * px[j];
    out[static_cast<size_t>(i)] = s;
  }
  ensure_finite(out, "linear");
  Tensor<T> y(Shape{dout}, std::move(out));
  if (tape != nullptr && rec) {
    Tensor<T> wc = w, bc = b, xc = x;
    tape->record(y, [wc, bc, xc, y, dout, din]() mutable {
      const T* go = y.grad().data();
      const T* pw = wc.data().data();
      const T* px = xc.data().data();
      if (wc.needs_grad()) {
        T* gw = wc.mutable_grad().data();
        for (long i = 0; i < dout; ++i)
          for (long j = 0; j < din; ++j) gw[i * din + j] += go[i] * px[j];
      }
      if (bc.defined() && bc.needs_grad()) {
        T* gb = bc.mutable_grad().data();
        for (long i = 0; i < dout; ++i) gb[i] += go[i];
      }
      if (xc.needs_grad()) {
        T* gx = xc.mutable_grad().data();
        for (long i = 0; i < dout; ++i)
          for (long j = 0; j < din; ++j) gx[j] += go[i] * pw[i * din + j];
      }
    });
  }
  return y;
}

// y = v / sqrt(sum(v^2) + eps)
template <typename T>
Tensor<T> l2_normalize(Tape<T>* tape, const Tensor<T>& v, T eps) {
  const bool rec = tape_wants(tape, {&v});
  const long n = v.numel();
  const T* pv = v.data().data();
  T s = T(0);
  for (long i = 0; i < n; ++i) s += pv[i] * pv[i];
  const T nrm = std::sqrt(s + eps);
  std::vector<T> out(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pv[i] / nrm;
  ensure_finite(out, "l2_normalize");
  Tensor<T> y(v.shape(), std::move(out));
  if (tape != nullptr && rec) {
    Tensor<T> vc = v;
    tape->record(y, [vc, y, nrm, n]() mutable {
      const T* go = y.grad().data();
      const T* py = y.data().data();
      T* gv = vc.mutable_grad().data();
      T dot = T(0);
      for (long i = 0; i < n; ++i) dot += go[i] * py[i];
      for (long i = 0; i < n; ++i) gv[i] += (go[i] - py[i] * dot) / nrm;
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// spatial ops on (C,H,W)

// Cross-correlation with zero padding. x (Ci,H,W), w (Co,Ci,kh,kw), optional
// bias (Co). Output (Co,Ho,Wo) with Ho = (H + 2p - kh)/s + 1.
template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 long stride = 1, long pad = 0) {
  if (x.ndim() != 3 || w.ndim() != 4 || x.dim(0) != w.dim(1))
    throw Error("conv2d shape mismatch: x " + shape_str(x.shape()) + ", w " +
                shape_str(w.shape()));
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != w.dim(0)))
    throw Error("conv2d bias shape mismatch");
  const long Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
  const long Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const long Ho = (H + 2 * pad - kh) / stride + 1;
  const long Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw Error("conv2d output would be empty");
  const bool rec = bias.defined() ? tape_wants(tape, {&x, &w, &bias}) : tape_wants(tape, {&x, &w});

  std::vector<T> out(static_cast<size_t>(Co * Ho * Wo), T(0));
  const T* px = x.data().data();
  const T* pw = w.data().data();
  if (bias.defined()) {
    for (long co = 0; co < Co; ++co)
      std::fill_n(out.data() + co * Ho * Wo, Ho * Wo, bias.at(co));
  }
  for (long co = 0; co < Co; ++co)
    for (long ci = 0; ci < Ci; ++ci)
      for (long ky = 0; ky < kh; ++ky)
        for (long kx = 0; kx < kw; ++kx) {
          const T wv = pw[((co * Ci + ci) * kh + ky) * kw + kx];
          if (wv == T(0)) continue;
          const long oy_lo = std::max(0L, detail::ceil_div(pad - ky, stride));
          const long oy_hi = std::min(Ho - 1, detail::floor_div(H - 1 + pad - ky, stride));
          const long ox_lo = std::max(0L, detail::ceil_div(pad - kx, stride));
          const long ox_hi = std::min(Wo - 1, detail::floor_div(W - 1 + pad - kx, stride));
          for (long oy = oy_lo; oy <= oy_hi; ++oy) {
            const long iy = oy * stride + ky - pad;
            const T* xr = px + (ci * H + iy) * W + (kx - pad);
            T* yr = out.data() + (co * Ho + oy) * Wo;
            if (stride == 1) {
              for (long ox = ox_lo; ox <= ox_hi; ++ox) yr[ox] += wv * xr[ox];
            } else {
              for (long ox = ox_lo; ox <= ox_hi; ++ox) yr[ox] += wv * xr[ox * stride];
            }
          }
        }
  ensure_finite(out, "conv2d");
  Tensor<T> y(Shape{Co, Ho, Wo}, std::move(out));
  if (tape != nullptr && rec) {
    Tensor<T> xc = x, wc = w, bc = bias;
    tape->record(y, [xc, wc, bc, y, Ci, H, W, Co, kh, kw, Ho, Wo, stride, pad]() mutable {
      const T* go = y.grad().data();
      const T* px = xc.data().data();
      const T* pw = wc.data().data();
      if (bc.defined() && bc.needs_grad()) {
        T* gb = bc.mutable_grad().data();
        for (long co = 0; co < Co; ++co) {
          T s = T(0);
          const T* gr = go + co * Ho * Wo;
          for (long i = 0; i < Ho * Wo; ++i) s += gr[i];
          gb[co] += s;
        }
      }
      const bool need_x = xc.needs_grad();
      const bool need_w = wc.needs_grad();
      if (!need_x && !need_w) return;
      T* gx = need_x ? xc.mutable_grad().data() : nullptr;
      T* gw = need_w ? wc.mutable_grad().data() : nullptr;
      for (long co = 0; co < Co; ++co)
        for (long ci = 0; ci < Ci; ++ci)
          for (long ky = 0; ky < kh; ++ky)
            for (long kx = 0; kx < kw; ++kx) {
              const long wi = ((co * Ci + ci) * kh + ky) * kw + kx;
              const T wv = pw[wi];
              const long oy_lo = std::max(0L, detail::ceil_div(pad - ky, stride));
              const long oy_hi = std::min(Ho - 1, detail::floor_div(H - 1 + pad - ky, stride));
              const long ox_lo = std::max(0L, detail::ceil_div(pad - kx, stride));
              const long ox_hi = std::min(Wo - 1, detail::floor_div(W - 1 + pad - kx, stride));
              T wacc = T(0);
              for (long oy = oy_lo; oy <= oy_hi; ++oy) {
                const long iy = oy * stride + ky - pad;
                const T* gr = go + (co * Ho + oy) * Wo;
                const long xbase = (ci * H + iy) * W + (kx - pad);
                for (long ox = ox_lo; ox <= ox_hi; ++ox) {
                  const T g = gr[ox];
                  const long xi = xbase + ox * stride;
                  if (need_w) wacc += g * px[xi];
                  if (need_x) gx[xi] += g * wv;
                }
              }
              if (need_w) gw[wi] += wacc;
            }
    });
  }
  return y;
}

template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, long stride = 1,
                 long pad = 0) {
  return conv2d(tape, x, w, Tensor<T>{}, stride, pad);
}

// (C,H,W) -> (C,H+2p,W+2p), border values repeated.
template <typename T>
Tensor<T> pad_replicate(Tape<T>* tape, const Tensor<T>& x, long p) {
  if (x.ndim() != 3) throw Error("pad_replicate expects (C,H,W)");
  const bool rec = tape_wants(tape, {&x});
  const long C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const long Ho = H + 2 * p, Wo = W + 2 * p;
  std::vector<T> out(static_cast<size_t>(C * Ho * Wo));
  const T* px = x.data().data();
  for (long c = 0; c < C; ++c)
    for (long oy = 0; oy < Ho; ++oy) {
      const long iy = std::clamp(oy - p, 0L, H - 1);
      for (long ox = 0; ox < Wo; ++ox) {
        const long ix = std::clamp(ox - p, 0L, W - 1);
        out[static_cast<size_t>((c * Ho + oy) * Wo + ox)] = px[(c * H + iy) * W + ix];
      }
    }
  Tensor<T> y(Shape{C, Ho, Wo}, std::move(out));
  if (tape != nullptr && rec) {
    Tensor<T> xc = x;
    tape->record(y, [xc, y, C, H, W, Ho, Wo, p]() mutable {
      const T* go = y.grad().data();
      T* gx = xc.mutable_grad().data();
      for (long c = 0; c < C; ++c)
        for (long oy = 0; oy < Ho; ++oy) {
          const long iy = std::clamp(oy - p, 0L, H - 1);
          for (long ox = 0; ox < Wo; ++ox) {
            const long ix = std::clamp(ox - p, 0L, W - 1);
            gx[(c * H + iy) * W + ix] += go[(c * Ho + oy) * Wo + ox];
          }
        }
    });
  }
  return y;
}

// Non-overlapping k x k mean pooling; H and W must divide evenly.
template <typename T>
Tensor<T> avg_pool(Tape<T>* tape, const Tensor<T>& x, long k) {
  if (x.ndim() != 3) throw Error("avg_pool expects (C,H,W)");
  const long C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H % k != 0 || W % k != 0)
    throw Error("avg_pool: " + shape_str(x.shape()) + " not divisible by " + std::to_string(k));
  const bool rec = tape_wants(tape, {&x});
  const long Ho = H / k, Wo = W / k;
  const T inv = T(1) / static_cast<T>(k * k);
  std::vector<T> out(static_cast<size_t>(C * Ho * Wo), T(0));
  const T* px = x.data().data();
  for (long c = 0; c < C; ++c)
    for (long oy = 0; oy < Ho; ++oy)
      for (long ox = 0; ox < Wo; ++ox) {
        T s = T(0);
        for (long dy = 0; dy < k; ++dy)
          for (long dx = 0; dx < k; ++dx) s += px[(c * H + oy * k + dy) * W + ox * k + dx];
        out[static_cast<size_t>((c * Ho + oy) * Wo + ox)] = s * inv;
      }
  ensure_finite(out, "avg_pool");
  Tensor<T> y(Shape{C, Ho, Wo}, std::move(out));
  if (tape != nullptr && rec) {
    Tensor<T> xc = x;
    tape->record(y, [xc, y, C, H, W, Ho, Wo, k, inv]() mutable {
      const T* go = y.grad().data();
      T* gx = xc.mutable_grad().data();
      for (long c = 0; c < C; ++c)
        for (long oy = 0; oy < Ho; ++oy)
          for (long ox = 0; ox < Wo; ++ox) {
            const T g = go[(c * Ho + oy) * Wo + ox] * inv;
            for (long dy = 0; dy < k; ++dy)
              for (long dx = 0; dx < k; ++dx) gx[(c * H + oy * k + dy) * W + ox * k + dx] += g;
          }
    });
  }
  return y;
}

// Nearest-neighbour resize with floor index mapping: src = (dst * in) / out.
template <typename T>
Tensor<T> resize_nearest(Tape<T>* tape, const Tensor<T>& x, long Ho, long Wo) {
  if (x.ndim() != 3) throw Error("resize_nearest expects (C,H,W)");
  const bool rec = tape_wants(tape, {&x});
  const long C = x.dim(0), H = x.dim(1), W = x.dim(2);
  std::vector<T> out(static_cast<size_t>(C * Ho * Wo));
  const T* px = x.data().data();
  for (long oy = 0; oy < Ho; ++oy) {
    const long iy = oy * H / Ho;
    for (long ox = 0; ox < Wo; ++ox) {
      const long ix = ox * W / Wo;
      for (long c = 0; c < C; ++c)
        out[static_cast<size_t>((c * Ho + oy) * Wo + ox)] = px[(c * H + iy) * W + ix];
    }
  }
  Tensor<T> y(Shape{C, Ho, Wo}, std::move(out));
  if (tape != nullptr && rec) {
    Tensor<T> xc = x;
    tape->record(y, [xc, y, C, H, W, Ho, Wo]() mutable {
      const T* go = y.grad().data();
      T* gx = xc.mutable_grad().data();
      for (long oy = 0; oy < Ho; ++oy) {
        const long iy = oy * H / Ho;
        for (long ox = 0; ox < Wo; ++ox) {
          const long ix = ox * W / Wo;
          for (long c = 0; c < C; ++c) gx[(c * H + iy) * W + ix] += go[(c * Ho + oy) * Wo + ox];
        }
      }
    });
  }
  return y;
}

// Concatenate (Ci,H,W) tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw Error("concat_channels: no inputs");
  const long H = parts[0].dim(1), W = parts[0].dim(2);
  long Ctot = 0;
  bool rec = false;
  for (const auto& t : parts) {
    if (t.ndim() != 3 || t.dim(1) != H || t.dim(2) != W)
      throw Error("concat_channels: mismatched spatial dims");
    if (t.on_tape() && (!tape || t.tape_id() != tape->id()))
      throw Error("tensor was recorded on a different tape");
    if (t.needs_grad()) rec = true;
    Ctot += t.dim(0);
  }
  rec = rec && tape != nullptr;
  std::vector<T> out(static_cast<size_t>(Ctot * H * W));
  long off = 0;
  for (const auto& t : parts) {
    std::copy(t.data().begin(), t.data().end(), out.begin() + off);
    off += t.numel();
  }
  Tensor<T> y(Shape{Ctot, H, W}, std::move(out));
  if (tape != nullptr && rec) {
    std::vector<Tensor<T>> pc = parts;
    tape->record(y, [pc, y]() mutable {
      const T* go = y.grad().data();
      long off = 0;
      for (auto& t : pc) {
        if (t.needs_grad()) {
          T* g = t.mutable_grad().data();
          for (long i = 0; i < t.numel(); ++i) g[i] += go[off + i];
        }
        off += t.numel();
      }
    });
  }
  return y;
}

// Same elements, new shape (values copied to keep buffers immutable).
template <typename T>
Tensor<T> reshape(Tape<T>* tape, const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw Error("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                " changes element count");
  const bool rec = tape_wants(tape, {&x});
  Tensor<T> y(std::move(shape), x.data());
  if (tape != nullptr && rec) {
    Tensor<T> xc = x;
    tape->record(y, [xc, y]() mutable {
      const T* go = y.grad().data();
      T* gx = xc.mutable_grad().data();
      for (long i = 0; i < y.numel(); ++i) gx[i] += go[i];
    });
  }
  return y;
}

}  // namespace dgssm
