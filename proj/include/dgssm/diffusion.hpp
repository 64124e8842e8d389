#pragma once

#include "dgssm/optim.hpp"
#include "dgssm/ops.hpp"
#include "dgssm/serialize.hpp"

// Structural prior pipeline: a fixed analytic encoder maps an image to a
// small latent, the latent is noised along a closed-form schedule, and a
// tiny trained denoiser runs a truncated deterministic reverse to a
// mid-trajectory latent that keeps object layout while shedding texture.

namespace dgssm {

template <typename T>
struct NoiseSchedule {
  long total_steps = 0;       // usable step indices are 1..total_steps
  std::vector<T> beta;        // beta[0] = 0 placeholder
  std::vector<T> alpha_bar;   // alpha_bar[0] = 1, strictly decreasing

  static NoiseSchedule linear(long steps, double beta_start, double beta_end) {
    if (steps < 1) throw Error("schedule needs at least one step");
    if (beta_start <= 0 || beta_end >= 1 || beta_start > beta_end)
      throw Error("schedule variances must satisfy 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.total_steps = steps;
    s.beta.resize(static_cast<size_t>(steps + 1), T(0));
    s.alpha_bar.resize(static_cast<size_t>(steps + 1), T(1));
    for (long t = 1; t <= steps; ++t) {
      const double frac = steps == 1 ? 0.0 : double(t - 1) / double(steps - 1);
      s.beta[static_cast<size_t>(t)] = static_cast<T>(beta_start + (beta_end - beta_start) * frac);
      s.alpha_bar[static_cast<size_t>(t)] =
          s.alpha_bar[static_cast<size_t>(t - 1)] * (T(1) - s.beta[static_cast<size_t>(t)]);
    }
    s.validate();
    return s;
  }

  void validate() const {
    if (alpha_bar.size() != static_cast<size_t>(total_steps + 1) ||
        beta.size() != alpha_bar.size())
      throw Error("schedule arrays inconsistent with step count");
    if (alpha_bar[0] != T(1)) throw Error("cumulative schedule must start at 1");
    T prod = T(1);
    for (long t = 1; t <= total_steps; ++t) {
      if (!(alpha_bar[static_cast<size_t>(t)] < alpha_bar[static_cast<size_t>(t - 1)]))
        throw Error("cumulative schedule must be strictly decreasing");
      prod *= T(1) - beta[static_cast<size_t>(t)];
      if (std::abs(double(prod - alpha_bar[static_cast<size_t>(t)])) > 1e-12)
        throw Error("cumulative schedule disagrees with per-step variances");
    }
    if (!(alpha_bar[static_cast<size_t>(total_steps)] > T(0)))
      throw Error("cumulative schedule must stay positive");
  }
};

template <typename T>
struct LatentState {
  Tensor<T> z;  // (Cz,Hz,Wz)
  long t = 0;
};

namespace diffusion_detail {

// Fixed mixing matrix for the analytic latent encoder: the prior stays
// frozen, so the mix is a named constant stream, not a learned parameter.
constexpr std::uint64_t kLatentMixSeed = 0xD1FFC0DEULL;

template <typename T>
Tensor<T> channel_mix(long cz, long cin) {
  Rng rng(kLatentMixSeed);
  return Tensor<T>::randn(Shape{cz, cin, 1, 1}, rng, 1.0 / std::sqrt(double(cin)));
}

}  // namespace diffusion_detail

// Fixed (non-learned) encoder: 8x average pooling, channel mix to cz
// channels, then per-channel standardization with a variance floor so a
// constant image maps to an exactly-zero latent.
template <typename T>
LatentState<T> encode_latent(const Tensor<T>& image, long cz) {
  if (image.ndim() != 3) throw Error("encode_latent expects (C,H,W)");
  if (image.dim(1) % 8 != 0 || image.dim(2) % 8 != 0)
    throw Error("encode_latent: spatial dims must be divisible by 8, got " +
                shape_str(image.shape()));
  Tensor<T> pooled = avg_pool<T>(nullptr, image, 8);
  Tensor<T> mixed =
      conv2d<T>(nullptr, pooled, diffusion_detail::channel_mix<T>(cz, image.dim(0)));
  const long HW = mixed.dim(1) * mixed.dim(2);
  std::vector<T> z(static_cast<size_t>(cz * HW));
  for (long c = 0; c < cz; ++c) {
    T mean = T(0);
    for (long i = 0; i < HW; ++i) mean += mixed.at(c * HW + i);
    mean /= static_cast<T>(HW);
    T var = T(0);
    for (long i = 0; i < HW; ++i) {
      const T d = mixed.at(c * HW + i) - mean;
      var += d * d;
    }
    var /= static_cast<T>(HW);
    const T inv = T(1) / std::sqrt(var + T(1e-6));
    for (long i = 0; i < HW; ++i)
      z[static_cast<size_t>(c * HW + i)] = (mixed.at(c * HW + i) - mean) * inv;
  }
  return LatentState<T>{Tensor<T>(Shape{cz, mixed.dim(1), mixed.dim(2)}, std::move(z)), 0};
}

// z_t = sqrt(abar_t)·z0 + sqrt(1-abar_t)·eps
template <typename T>
LatentState<T> forward_noise(const LatentState<T>& z0, long t, const Tensor<T>& eps,
                             const NoiseSchedule<T>& sched) {
  if (t < 0 || t > sched.total_steps)
    throw Error("forward_noise: step " + std::to_string(t) + " outside schedule");
  if (eps.shape() != z0.z.shape()) throw Error("forward_noise: noise shape mismatch");
  const T ab = sched.alpha_bar[static_cast<size_t>(t)];
  const T cs = std::sqrt(ab), cn = std::sqrt(T(1) - ab);
  std::vector<T> out(static_cast<size_t>(z0.z.numel()));
  for (long i = 0; i < z0.z.numel(); ++i)
    out[static_cast<size_t>(i)] = cs * z0.z.at(i) + cn * eps.at(i);
  return LatentState<T>{Tensor<T>(z0.z.shape(), std::move(out)), t};
}

// Sinusoidal step embedding shared by the denoiser's injection points.
template <typename T>
Tensor<T> step_embedding(long t, long dim) {
  if (dim < 2 || dim % 2 != 0) throw Error("step embedding size must be even and >= 2");
  std::vector<T> e(static_cast<size_t>(dim));
  const long half = dim / 2;
  for (long i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
    e[static_cast<size_t>(2 * i)] = static_cast<T>(std::sin(double(t) * freq));
    e[static_cast<size_t>(2 * i + 1)] = static_cast<T>(std::cos(double(t) * freq));
  }
  return Tensor<T>(Shape{dim}, std::move(e));
}

// Small convolutional noise predictor with the step embedding injected as a
// per-channel bias after the first two convolutions.
template <typename T>
struct Denoiser {
  long cz = 0, width = 0, embed_dim = 0;
  Tensor<T> w1, b1, w2, b2, w3, b3;
  Tensor<T> emb1_w, emb1_b, emb2_w, emb2_b;

  static Denoiser init(long cz, long width, long embed_dim, Rng& rng) {
    Denoiser d;
    d.cz = cz;
    d.width = width;
    d.embed_dim = embed_dim;
    auto he = [&](Shape s, long fan_in) {
      return Tensor<T>::randn(std::move(s), rng, std::sqrt(2.0 / double(fan_in)), true);
    };
    d.w1 = he(Shape{width, cz, 3, 3}, cz * 9);
    d.b1 = Tensor<T>::zeros(Shape{width}, true);
    d.w2 = he(Shape{width, width, 3, 3}, width * 9);
    d.b2 = Tensor<T>::zeros(Shape{width}, true);
    d.w3 = he(Shape{cz, width, 3, 3}, width * 9);
    d.b3 = Tensor<T>::zeros(Shape{cz}, true);
    d.emb1_w = he(Shape{width, embed_dim}, embed_dim);
    d.emb1_b = Tensor<T>::zeros(Shape{width}, true);
    d.emb2_w = he(Shape{width, embed_dim}, embed_dim);
    d.emb2_b = Tensor<T>::zeros(Shape{width}, true);
    return d;
  }

  Tensor<T> predict(Tape<T>* tape, const Tensor<T>& zt, long t) const {
    Tensor<T> e = step_embedding<T>(t, embed_dim);
    Tensor<T> bias1 = reshape(tape, linear(tape, emb1_w, emb1_b, e), Shape{width, 1, 1});
    Tensor<T> h = relu(tape, add(tape, conv2d(tape, zt, w1, b1, 1, 1), bias1));
    Tensor<T> bias2 = reshape(tape, linear(tape, emb2_w, emb2_b, e), Shape{width, 1, 1});
    h = relu(tape, add(tape, conv2d(tape, h, w2, b2, 1, 1), bias2));
    return conv2d(tape, h, w3, b3, 1, 1);
  }

  std::vector<Tensor<T>*> params() {
    return {&w1, &b1, &w2, &b2, &w3, &b3, &emb1_w, &emb1_b, &emb2_w, &emb2_b};
  }

  NamedTensors<T> named_params() const {
    return {{"denoiser.conv1.weight", w1}, {"denoiser.conv1.bias", b1},
            {"denoiser.conv2.weight", w2}, {"denoiser.conv2.bias", b2},
            {"denoiser.conv3.weight", w3}, {"denoiser.conv3.bias", b3},
            {"denoiser.embed1.weight", emb1_w}, {"denoiser.embed1.bias", emb1_b},
            {"denoiser.embed2.weight", emb2_w}, {"denoiser.embed2.bias", emb2_b}};
  }

  void load_params(const NamedTensors<T>& named) {
    auto want = named_params();
    if (named.size() != want.size()) throw Error("denoiser checkpoint: parameter count mismatch");
    auto dst = params();
    for (size_t i = 0; i < named.size(); ++i) {
      if (named[i].first != want[i].first)
        throw Error("denoiser checkpoint: unexpected parameter '" + named[i].first + "'");
      if (named[i].second.shape() != dst[i]->shape())
        throw Error("denoiser checkpoint: shape mismatch for '" + named[i].first + "'");
      *dst[i] = named[i].second;
      dst[i]->set_requires_grad(true);
    }
  }
};

// k deterministic reverse steps z_{s-1} = (z_s - beta_s/sqrt(1-abar_s)·eps)
// / sqrt(1-beta_s); eps_fn(z, s) supplies the noise estimate so analytic
// oracles can stand in for the trained denoiser.
template <typename T, typename EpsFn>
LatentState<T> denoise_truncated(const LatentState<T>& zt, long k, const NoiseSchedule<T>& sched,
                                 EpsFn&& eps_fn) {
  if (k < 0 || k > zt.t)
    throw Error("denoise_truncated: cannot take " + std::to_string(k) + " steps from t=" +
                std::to_string(zt.t));
  Tensor<T> z = zt.z;
  for (long s = zt.t; s > zt.t - k; --s) {
    const T beta = sched.beta[static_cast<size_t>(s)];
    const T coef = beta / std::sqrt(T(1) - sched.alpha_bar[static_cast<size_t>(s)]);
    const T inv = T(1) / std::sqrt(T(1) - beta);
    Tensor<T> eps = eps_fn(z, s);
    if (eps.shape() != z.shape()) throw Error("denoise step: noise estimate shape mismatch");
    std::vector<T> next(static_cast<size_t>(z.numel()));
    for (long i = 0; i < z.numel(); ++i)
      next[static_cast<size_t>(i)] = (z.at(i) - coef * eps.at(i)) * inv;
    z = Tensor<T>(z.shape(), std::move(next));
  }
  ensure_finite(z.data(), "denoise_truncated");
  return LatentState<T>{z, zt.t - k};
}

template <typename T>
LatentState<T> denoise_truncated(const LatentState<T>& zt, long k, const NoiseSchedule<T>& sched,
                                 const Denoiser<T>& den) {
  return denoise_truncated(zt, k, sched, [&](const Tensor<T>& z, long s) {
    return den.predict(nullptr, z, s);
  });
}

// Noise-prediction training: per sample draw a step and a Gaussian, noise
// the latent, regress the denoiser output onto the drawn noise. Returns the
// per-epoch mean losses (callers assert final < first).
template <typename T>
std::vector<double> train_denoiser(Denoiser<T>& den, const std::vector<Tensor<T>>& latents,
                                   const NoiseSchedule<T>& sched, long epochs, double lr,
                                   std::uint64_t seed) {
  if (latents.empty()) throw Error("train_denoiser: empty latent set");
  SgdMomentum<T> opt(lr, 0.9);
  Rng rng(seed);
  std::vector<double> epoch_losses;
  std::vector<size_t> order(latents.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (long ep = 0; ep < epochs; ++ep) {
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    for (size_t idx : order) {
      const Tensor<T>& z0 = latents[idx];
      const long t = rng.uniform_int(1, sched.total_steps);
      Tensor<T> eps = Tensor<T>::randn(z0.shape(), rng, 1.0);
      LatentState<T> zt = forward_noise(LatentState<T>{z0, 0}, t, eps, sched);

      Tape<T> tape;
      Tensor<T> pred = den.predict(&tape, zt.z, t);
      Tensor<T> diff = sub(&tape, pred, eps);
      Tensor<T> loss = mean_all(&tape, mul(&tape, diff, diff));
      const double lv = double(loss.value());
      if (!std::isfinite(lv)) throw Error("train_denoiser: loss diverged");
      total += lv;
      tape.backward(loss);
      opt.step(den.params());
    }
    epoch_losses.push_back(total / double(latents.size()));
  }
  return epoch_losses;
}

// The full prior pipeline for one image: encode, noise to t_noise with the
// sample's own seeded Gaussian, reverse deterministically to t_star.
template <typename T>
Tensor<T> structural_prior(const Tensor<T>& image, long cz, const Denoiser<T>& den,
                           const NoiseSchedule<T>& sched, long t_noise, long t_star,
                           std::uint64_t seed) {
  if (t_star > t_noise) throw Error("structural_prior: t_star must not exceed t_noise");
  LatentState<T> z0 = encode_latent(image, cz);
  Rng rng(seed);
  Tensor<T> eps = Tensor<T>::randn(z0.z.shape(), rng, 1.0);
  LatentState<T> zt = forward_noise(z0, t_noise, eps, sched);
  return denoise_truncated(zt, t_noise - t_star, sched, den).z;
}

// 1x1 channel projection of the latent followed by nearest-neighbour resize
// onto a feature grid.
template <typename T>
Tensor<T> project_prior(Tape<T>* tape, const Tensor<T>& z, const Tensor<T>& weight, long H,
                        long W) {
  Tensor<T> proj = conv2d(tape, z, weight);
  if (proj.dim(1) == H && proj.dim(2) == W) return proj;
  return resize_nearest(tape, proj, H, W);
}

}  // namespace dgssm
