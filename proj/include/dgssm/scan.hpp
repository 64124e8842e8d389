#pragma once

#include <array>

#include "dgssm/ops.hpp"

// Selective state-space scanning over 2D feature grids. A line (row or
// column, depending on direction) is an independent 1D sequence driven by
// the diagonal linear recurrence
//     h_i = a ⊙ h_{i-1} + B_eff x_i,   y_i = C h_i,   h_{-1} = 0,
// where a is the sigmoid-bounded transition diagonal after prompt
// modulation. Two kernels compute the recurrence: a sequential reference
// and a block-decoupled parallel kernel with a fixed combination tree, so
// parallel results are bit-identical for any worker count.

namespace dgssm {

enum class ScanDirection { kLeftToRight, kRightToLeft, kTopToBottom, kBottomToTop };

inline const char* to_string(ScanDirection d) {
  switch (d) {
    case ScanDirection::kLeftToRight: return "l2r";
    case ScanDirection::kRightToLeft: return "r2l";
    case ScanDirection::kTopToBottom: return "t2b";
    case ScanDirection::kBottomToTop: return "b2t";
  }
  throw Error("bad ScanDirection");
}

inline ScanDirection parse_direction(const std::string& s) {
  if (s == "l2r") return ScanDirection::kLeftToRight;
  if (s == "r2l") return ScanDirection::kRightToLeft;
  if (s == "t2b") return ScanDirection::kTopToBottom;
  if (s == "b2t") return ScanDirection::kBottomToTop;
  throw Error("unknown scan direction '" + s + "' (expected l2r|r2l|t2b|b2t)");
}

constexpr std::array<ScanDirection, 4> kAllDirections = {
    ScanDirection::kLeftToRight, ScanDirection::kRightToLeft, ScanDirection::kTopToBottom,
    ScanDirection::kBottomToTop};

// Transition diagonal is parameterized by logits: a = 0.999·σ(logit), kept
// strictly inside the unit circle for stability; the prompt then scales it
// (clamped back to [-0.999, 0.999]) and shifts the input projection.
template <typename T>
struct ScanParams {
  Tensor<T> a_logit;       // (Dh)       transition diagonal logits
  Tensor<T> input_proj;    // (Dh,Din)
  Tensor<T> readout;       // (Dout,Dh)
  Tensor<T> prompt_scale;  // (Dh)       1 at rest
  Tensor<T> prompt_shift;  // (Dh)       0 at rest

  long state_dim() const { return a_logit.dim(0); }
  long in_dim() const { return input_proj.dim(1); }
  long out_dim() const { return readout.dim(0); }

  void validate() const {
    if (a_logit.ndim() != 1 || input_proj.ndim() != 2 || readout.ndim() != 2 ||
        prompt_scale.ndim() != 1 || prompt_shift.ndim() != 1)
      throw Error("ScanParams: wrong tensor ranks");
    const long dh = a_logit.dim(0);
    if (input_proj.dim(0) != dh || readout.dim(1) != dh || prompt_scale.dim(0) != dh ||
        prompt_shift.dim(0) != dh)
      throw Error("ScanParams: inconsistent state dimension");
  }

  static ScanParams init(long dh, long din, long dout, Rng& rng) {
    if (dh <= 0 || din <= 0 || dout <= 0) throw Error("ScanParams: dims must be positive");
    // decay logits spread evenly so the state mixes several timescales
    std::vector<T> logits(static_cast<size_t>(dh));
    for (long i = 0; i < dh; ++i)
      logits[static_cast<size_t>(i)] =
          dh == 1 ? T(0) : T(-1.5) + T(3) * static_cast<T>(i) / static_cast<T>(dh - 1);
    ScanParams p;
    p.a_logit = Tensor<T>(Shape{dh}, std::move(logits), true);
    p.input_proj = Tensor<T>::randn(Shape{dh, din}, rng, 1.0 / std::sqrt(double(din)), true);
    p.readout = Tensor<T>::randn(Shape{dout, dh}, rng, 1.0 / std::sqrt(double(dh)), true);
    p.prompt_scale = Tensor<T>::full(Shape{dh}, T(1));
    p.prompt_shift = Tensor<T>::zeros(Shape{dh});
    return p;
  }
};

struct MultiScaleConfig {
  std::vector<long> scales;                 // downsample factors, ascending, first = 1
  std::vector<ScanDirection> directions;

  void validate() const {
    if (scales.empty() || scales.front() != 1) throw Error("scales must start with 1");
    for (size_t i = 1; i < scales.size(); ++i)
      if (scales[i] <= scales[i - 1]) throw Error("scales must be strictly ascending");
    if (directions.empty()) throw Error("direction set must be non-empty");
  }
};

// a_eff = clamp(0.999·σ(logit) · prompt_scale, -0.999, 0.999)
template <typename T>
Tensor<T> effective_decay(Tape<T>* tape, const ScanParams<T>& p) {
  Tensor<T> bounded = scale(tape, sigmoid(tape, p.a_logit), T(0.999));
  return clamp(tape, mul(tape, bounded, p.prompt_scale), T(-0.999), T(0.999));
}

// B_eff = B + prompt_shift broadcast across input columns
template <typename T>
Tensor<T> effective_input(Tape<T>* tape, const ScanParams<T>& p) {
  Tensor<T> col = reshape(tape, p.prompt_shift, Shape{p.state_dim(), 1});
  return add(tape, p.input_proj, col);
}

// prompt_scale = 1 + tanh(W_s p), prompt_shift = W_b p. Zero-initialized
// projections make this a no-op, which the init contract relies on.
template <typename T>
ScanParams<T> apply_prompt(Tape<T>* tape, const ScanParams<T>& params, const Tensor<T>& p,
                           const Tensor<T>& w_scale, const Tensor<T>& w_shift) {
  ScanParams<T> out = params;
  out.prompt_scale = add_scalar(tape, tanh(tape, linear(tape, w_scale, Tensor<T>{}, p)), T(1));
  out.prompt_shift = linear(tape, w_shift, Tensor<T>{}, p);
  return out;
}

namespace scan_detail {

// Token order for a traversal: lines are independent sequences of equal
// length; idx[t] is the flat spatial index of token t. Right-to-left and
// bottom-to-top are index-mirrored versions of their opposites, so a scan
// over a mirrored input reproduces the mirrored-output identity exactly.
struct TokenMap {
  std::vector<long> idx;
  long n_lines = 0;
  long len = 0;
};

inline TokenMap token_map(long H, long W, ScanDirection dir) {
  TokenMap m;
  const bool horizontal =
      dir == ScanDirection::kLeftToRight || dir == ScanDirection::kRightToLeft;
  m.n_lines = horizontal ? H : W;
  m.len = horizontal ? W : H;
  m.idx.resize(static_cast<size_t>(H * W));
  long t = 0;
  for (long line = 0; line < m.n_lines; ++line)
    for (long pos = 0; pos < m.len; ++pos, ++t) {
      long y, x;
      switch (dir) {
        case ScanDirection::kLeftToRight: y = line, x = pos; break;
        case ScanDirection::kRightToLeft: y = line, x = W - 1 - pos; break;
        case ScanDirection::kTopToBottom: y = pos, x = line; break;
        default: y = H - 1 - pos, x = line; break;
      }
      m.idx[static_cast<size_t>(t)] = y * W + x;
    }
  return m;
}

// out (N,M) = X (N,K) · Wᵀ with W (M,K); rows split across threads.
template <typename T>
void gemm_nt(const T* X, long N, long K, const T* W, long M, T* out, int threads) {
  parallel_for(N, threads, [&](long t) {
    const T* xr = X + t * K;
    T* yr = out + t * M;
    for (long m = 0; m < M; ++m) {
      const T* wr = W + m * K;
      T s = T(0);
      for (long k = 0; k < K; ++k) s += xr[k] * wr[k];
      yr[m] = s;
    }
  });
}

// In-place h_i = a ⊙ h_{i-1} + u_i per line; U (n_lines·len, Dh) becomes
// the stored state sequence.
template <typename T>
void recurrence_sequential(T* U, long n_lines, long len, const T* a, long dh) {
  std::vector<T> h(static_cast<size_t>(dh));
  for (long line = 0; line < n_lines; ++line) {
    std::fill(h.begin(), h.end(), T(0));
    T* u = U + line * len * dh;
    for (long i = 0; i < len; ++i, u += dh)
      for (long d = 0; d < dh; ++d) {
        h[static_cast<size_t>(d)] = a[d] * h[static_cast<size_t>(d)] + u[d];
        u[d] = h[static_cast<size_t>(d)];
      }
  }
}

constexpr long kScanBlock = 256;

// Block-decoupled scan with a fixed tree: (1) local scans per block from a
// zero state, (2) per-line carry propagation across block totals using a
// precomputed power table, (3) h_i = a^{off+1} ⊙ carry + local_i. The block
// size is a constant, so the arithmetic — and therefore the result — does
// not depend on the worker count.
template <typename T>
void recurrence_blocks(T* U, long n_lines, long len, const T* a, long dh, int threads) {
  const long n_blocks = (len + kScanBlock - 1) / kScanBlock;
  if (n_blocks <= 1) {
    parallel_for(n_lines, threads, [&](long line) {
      recurrence_sequential(U + line * len * dh, 1, len, a, dh);
    });
    return;
  }
  // powers[o*dh + d] = a_d^(o+1)
  std::vector<T> powers(static_cast<size_t>(kScanBlock * dh));
  for (long d = 0; d < dh; ++d) powers[static_cast<size_t>(d)] = a[d];
  for (long o = 1; o < kScanBlock; ++o)
    for (long d = 0; d < dh; ++d)
      powers[static_cast<size_t>(o * dh + d)] = powers[static_cast<size_t>((o - 1) * dh + d)] * a[d];

  parallel_for(n_lines * n_blocks, threads, [&](long task) {
    const long line = task / n_blocks, blk = task % n_blocks;
    const long lo = blk * kScanBlock;
    const long blen = std::min(kScanBlock, len - lo);
    recurrence_sequential(U + (line * len + lo) * dh, 1, blen, a, dh);
  });

  // carries[(line, blk)] = incoming state of block blk
  std::vector<T> carries(static_cast<size_t>(n_lines * n_blocks * dh), T(0));
  parallel_for(n_lines, threads, [&](long line) {
    for (long blk = 0; blk + 1 < n_blocks; ++blk) {
      const long blen = std::min(kScanBlock, len - blk * kScanBlock);
      const T* total = U + (line * len + blk * kScanBlock + blen - 1) * dh;
      const T* apow = powers.data() + (blen - 1) * dh;
      const T* cin = carries.data() + (line * n_blocks + blk) * dh;
      T* cout = carries.data() + (line * n_blocks + blk + 1) * dh;
      for (long d = 0; d < dh; ++d) cout[d] = apow[d] * cin[d] + total[d];
    }
  });

  parallel_for(n_lines * (n_blocks - 1), threads, [&](long task) {
    const long line = task / (n_blocks - 1), blk = task % (n_blocks - 1) + 1;
    const long lo = blk * kScanBlock;
    const long blen = std::min(kScanBlock, len - lo);
    const T* carry = carries.data() + (line * n_blocks + blk) * dh;
    T* u = U + (line * len + lo) * dh;
    for (long o = 0; o < blen; ++o, u += dh) {
      const T* apow = powers.data() + o * dh;
      for (long d = 0; d < dh; ++d) u[d] = apow[d] * carry[d] + u[d];
    }
  });
}

}  // namespace scan_detail

// Fused differentiable scan op. The recurrence uses the sequential kernel;
// backward is the mirrored recurrence (gradients flow right-to-left along
// each line) plus the four projection gradients.
template <typename T>
Tensor<T> ssm_scan(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& a_eff,
                   const Tensor<T>& b_eff, const Tensor<T>& readout, ScanDirection dir) {
  if (x.ndim() != 3) throw Error("ssm_scan expects x (Din,H,W)");
  const long Din = x.dim(0), H = x.dim(1), W = x.dim(2);
  const long Dh = a_eff.dim(0), Dout = readout.dim(0);
  if (a_eff.ndim() != 1 || b_eff.ndim() != 2 || b_eff.dim(0) != Dh || b_eff.dim(1) != Din ||
      readout.ndim() != 2 || readout.dim(1) != Dh)
    throw Error("ssm_scan parameter shape mismatch");
  const bool rec = tape_wants(tape, {&x, &a_eff, &b_eff, &readout});

  auto map = std::make_shared<scan_detail::TokenMap>(scan_detail::token_map(H, W, dir));
  const long N = H * W;
  auto xtok = std::make_shared<std::vector<T>>(static_cast<size_t>(N * Din));
  const T* px = x.data().data();
  for (long t = 0; t < N; ++t) {
    const long s = map->idx[static_cast<size_t>(t)];
    T* row = xtok->data() + t * Din;
    for (long c = 0; c < Din; ++c) row[c] = px[c * N + s];
  }

  auto states = std::make_shared<std::vector<T>>(static_cast<size_t>(N * Dh));
  scan_detail::gemm_nt(xtok->data(), N, Din, b_eff.data().data(), Dh, states->data(), 1);
  scan_detail::recurrence_sequential(states->data(), map->n_lines, map->len,
                                     a_eff.data().data(), Dh);

  std::vector<T> ytok(static_cast<size_t>(N * Dout));
  scan_detail::gemm_nt(states->data(), N, Dh, readout.data().data(), Dout, ytok.data(), 1);

  std::vector<T> out(static_cast<size_t>(Dout * N));
  for (long t = 0; t < N; ++t) {
    const long s = map->idx[static_cast<size_t>(t)];
    const T* row = ytok.data() + t * Dout;
    for (long c = 0; c < Dout; ++c) out[static_cast<size_t>(c * N + s)] = row[c];
  }
  ensure_finite(out, "ssm_scan (transition diagonal unstable?)");
  Tensor<T> y(Shape{Dout, H, W}, std::move(out));

  if (tape != nullptr && rec) {
    Tensor<T> xc = x, ac = a_eff, bc = b_eff, cc = readout;
    tape->record(y, [xc, ac, bc, cc, y, map, xtok, states, Din, H, W, Dh, Dout]() mutable {
      const long N = H * W;
      const T* gy = y.grad().data();
      const T* pa = ac.data().data();
      const T* pb = bc.data().data();
      const T* pc = cc.data().data();

      // upstream gradient in token order
      std::vector<T> gytok(static_cast<size_t>(N * Dout));
      for (long t = 0; t < N; ++t) {
        const long s = map->idx[static_cast<size_t>(t)];
        T* row = gytok.data() + t * Dout;
        for (long c = 0; c < Dout; ++c) row[c] = gy[c * N + s];
      }

      // dL/d(state_i) readout contribution + readout weight gradient
      std::vector<T> gstate(static_cast<size_t>(N * Dh), T(0));
      T* gc = cc.needs_grad() ? cc.mutable_grad().data() : nullptr;
      for (long t = 0; t < N; ++t) {
        const T* gr = gytok.data() + t * Dout;
        const T* hs = states->data() + t * Dh;
        T* gs = gstate.data() + t * Dh;
        for (long o = 0; o < Dout; ++o) {
          const T g = gr[o];
          const T* crow = pc + o * Dh;
          for (long d = 0; d < Dh; ++d) gs[d] += g * crow[d];
          if (gc) {
            T* gcr = gc + o * Dh;
            for (long d = 0; d < Dh; ++d) gcr[d] += g * hs[d];
          }
        }
      }

      // mirrored recurrence: gh_i = gstate_i + a ⊙ gh_{i+1}; gh doubles as
      // the gradient on the pre-recurrence inputs u_i. The transition
      // gradient needs the previous state h_{i-1}.
      T* ga = ac.needs_grad() ? ac.mutable_grad().data() : nullptr;
      std::vector<T> gh(static_cast<size_t>(Dh));
      for (long line = 0; line < map->n_lines; ++line) {
        std::fill(gh.begin(), gh.end(), T(0));
        const long base = line * map->len;
        for (long i = map->len - 1; i >= 0; --i) {
          T* gs = gstate.data() + (base + i) * Dh;
          const T* hprev = i > 0 ? states->data() + (base + i - 1) * Dh : nullptr;
          for (long d = 0; d < Dh; ++d) {
            gh[static_cast<size_t>(d)] = gs[d] + pa[d] * gh[static_cast<size_t>(d)];
            gs[d] = gh[static_cast<size_t>(d)];
            if (ga && hprev) ga[d] += gh[static_cast<size_t>(d)] * hprev[d];
          }
        }
      }

      if (bc.needs_grad()) {
        T* gb = bc.mutable_grad().data();
        for (long t = 0; t < N; ++t) {
          const T* gu = gstate.data() + t * Dh;
          const T* xr = xtok->data() + t * Din;
          for (long d = 0; d < Dh; ++d) {
            const T g = gu[d];
            T* gbr = gb + d * Din;
            for (long c = 0; c < Din; ++c) gbr[c] += g * xr[c];
          }
        }
      }

      if (xc.needs_grad()) {
        T* gx = xc.mutable_grad().data();
        for (long t = 0; t < N; ++t) {
          const long s = map->idx[static_cast<size_t>(t)];
          const T* gu = gstate.data() + t * Dh;
          for (long d = 0; d < Dh; ++d) {
            const T g = gu[d];
            const T* br = pb + d * Din;
            for (long c = 0; c < Din; ++c) gx[c * N + s] += g * br[c];
          }
        }
      }
    });
  }
  return y;
}

// Reference kernel, plain evaluation per the current prompt state.
template <typename T>
Tensor<T> scan_sequential(const Tensor<T>& x, const ScanParams<T>& params, ScanDirection dir) {
  params.validate();
  Tensor<T> a = effective_decay<T>(nullptr, params);
  Tensor<T> b = effective_input<T>(nullptr, params);
  return ssm_scan<T>(nullptr, x, a, b, params.readout, dir);
}

// Parallel kernel: work-efficient block scan; gathers, projections and both
// sweep phases run on the worker pool. Output is bit-identical for any
// n_threads (fixed combination tree) and matches the sequential kernel to
// rounding.
template <typename T>
Tensor<T> scan_parallel(const Tensor<T>& x, const ScanParams<T>& params, ScanDirection dir,
                        int n_threads) {
  params.validate();
  if (x.ndim() != 3 || x.dim(0) != params.in_dim())
    throw Error("scan_parallel: x shape mismatch");
  Tensor<T> a = effective_decay<T>(nullptr, params);
  Tensor<T> b = effective_input<T>(nullptr, params);
  const long Din = x.dim(0), H = x.dim(1), W = x.dim(2);
  const long Dh = params.state_dim(), Dout = params.out_dim();
  const long N = H * W;
  const scan_detail::TokenMap map = scan_detail::token_map(H, W, dir);

  std::vector<T> xtok(static_cast<size_t>(N * Din));
  const T* px = x.data().data();
  parallel_for(N, n_threads, [&](long t) {
    const long s = map.idx[static_cast<size_t>(t)];
    T* row = xtok.data() + t * Din;
    for (long c = 0; c < Din; ++c) row[c] = px[c * N + s];
  });

  std::vector<T> states(static_cast<size_t>(N * Dh));
  scan_detail::gemm_nt(xtok.data(), N, Din, b.data().data(), Dh, states.data(), n_threads);
  scan_detail::recurrence_blocks(states.data(), map.n_lines, map.len, a.data().data(), Dh,
                                 n_threads);

  std::vector<T> ytok(static_cast<size_t>(N * Dout));
  scan_detail::gemm_nt(states.data(), N, Dh, params.readout.data().data(), Dout, ytok.data(),
                       n_threads);

  std::vector<T> out(static_cast<size_t>(Dout * N));
  parallel_for(N, n_threads, [&](long t) {
    const long s = map.idx[static_cast<size_t>(t)];
    const T* row = ytok.data() + t * Dout;
    for (long c = 0; c < Dout; ++c) out[static_cast<size_t>(c * N + s)] = row[c];
  });
  ensure_finite(out, "scan_parallel (transition diagonal unstable?)");
  return Tensor<T>(Shape{Dout, H, W}, std::move(out));
}

// Σ over scales and directions of upsample(scan(downsample(x))); average
// pooling down, nearest-neighbour back up, plain summation.
template <typename T>
Tensor<T> scan_multiscale(Tape<T>* tape, const Tensor<T>& x, const ScanParams<T>& params,
                          const MultiScaleConfig& cfg) {
  params.validate();
  cfg.validate();
  const long H = x.dim(1), W = x.dim(2);
  for (long s : cfg.scales)
    if (H % s != 0 || W % s != 0)
      throw Error("scan_multiscale: " + shape_str(x.shape()) + " not divisible by scale " +
                  std::to_string(s));
  Tensor<T> a = effective_decay(tape, params);
  Tensor<T> b = effective_input(tape, params);
  Tensor<T> acc;
  for (long s : cfg.scales) {
    Tensor<T> xs = s == 1 ? x : avg_pool(tape, x, s);
    for (ScanDirection dir : cfg.directions) {
      Tensor<T> y = ssm_scan(tape, xs, a, b, params.readout, dir);
      if (s != 1) y = resize_nearest(tape, y, H, W);
      acc = acc.defined() ? add(tape, acc, y) : y;
    }
  }
  return acc;
}

}  // namespace dgssm
