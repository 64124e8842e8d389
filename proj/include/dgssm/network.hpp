#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "dgssm/diffusion.hpp"
#include "dgssm/losses.hpp"
#include "dgssm/scan.hpp"
#include "dgssm/serialize.hpp"

namespace dgssm {

// Every knob of the saliency model plus the component toggles used by the
// ablation ladder. Toggling a flag adds or removes that component's
// parameters entirely, so parameter counts account for each component.
struct ModelConfig {
  long stem_width = 16;
  std::vector<long> widths = {16, 32, 64, 128};  // one entry per encoder stage
  long state_dim = 16;                           // recurrence channels per scan
  long latent_channels = 4;                      // structural-prior depth
  long prompt_dim = 32;
  long refine_steps = 3;
  std::vector<long> scales = {1, 2};
  std::vector<ScanDirection> directions = {ScanDirection::kLeftToRight, ScanDirection::kRightToLeft,
                                           ScanDirection::kTopToBottom, ScanDirection::kBottomToTop};
  long diffusion_steps = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  long noise_step = 50;  // forward-noising depth when sampling the prior
  long prior_step = 25;  // reverse steps applied from there
  long denoiser_width = 8;
  long denoiser_embed = 16;
  long kd_embed = 64;
  long barh_proj_channels = 8;
  long barh_hidden = 16;
  long imdr_proj_channels = 8;
  long imdr_hidden = 8;
  bool use_dsp = true;   // diffusion structural prior (injection + interaction)
  bool use_asp = true;   // adaptive scan prompting
  bool use_msss = true;  // multi-scale, multi-direction scanning
  bool use_barh = true;  // boundary-aware refinement head
  bool use_imdr = true;  // iterative refinement
  bool use_kd = true;    // cross-stage distillation loss head

  long depth() const { return static_cast<long>(widths.size()); }

  MultiScaleConfig scan_config() const {
    if (use_msss) return MultiScaleConfig{scales, directions};
    return MultiScaleConfig{{1}, {ScanDirection::kLeftToRight}};
  }

  void validate() const {
    if (widths.empty()) throw Error("model needs at least one encoder stage");
    for (long w : widths)
      if (w < 1) throw Error("stage widths must be positive");
    if (stem_width < 1 || state_dim < 1 || prompt_dim < 1 || latent_channels < 1)
      throw Error("model dimensions must be positive");
    if (refine_steps < 0) throw Error("refine_steps must be non-negative");
    scan_config().validate();
    if (noise_step < 1 || noise_step > diffusion_steps || prior_step < 0 ||
        prior_step > noise_step)
      throw Error("prior schedule must satisfy 0 <= prior_step <= noise_step <= total steps");
  }

  ConfigLines to_lines() const;
  static ModelConfig from_lines(const ConfigLines& lines);
};

template <typename T>
struct ForwardOutputs {
  Tensor<T> s0;                             // coarse decoder map
  Tensor<T> sb;                             // boundary-refined map
  std::vector<Tensor<T>> refined;           // iterative refinements, in order
  Tensor<T> final_map;                      // last refinement (or sb/s0 fallback)
  Tensor<T> edges;                          // Sobel response of s0
  std::vector<Tensor<T>> stage_feats;       // encoder features, shallow to deep
  Tensor<T> logit0, logitb;                 // pre-sigmoid maps, carried exactly
  std::vector<Tensor<T>> refined_logits;
};

template <typename T>
class Model {
 public:
  struct Stage {
    Tensor<T> trans_w, trans_b;  // stride-2 3x3, halves resolution
    ScanParams<T> scan;
    Tensor<T> res_w, res_b;      // 1x1 identity path around the scan
    // prompt pathway (present when use_asp)
    Tensor<T> phi_w1, phi_b1, phi_w2, phi_b2;
    Tensor<T> prompt_scale_w, prompt_shift_w;
    // prior interaction (present when use_dsp)
    Tensor<T> lambda_gate;  // scalar, starts at 0 so the stage ignores the prior
    Tensor<T> psi_w;        // 1x1 latent-to-feature projection
  };
  struct DecoderLevel {
    Tensor<T> lat_w, lat_b;  // 1x1 channel reduction of the upsampled path
    ScanParams<T> scan;      // single-scale, single-direction
  };

  ModelConfig cfg;
  Tensor<T> stem_w, stem_b;
  std::vector<Stage> stages;
  std::vector<DecoderLevel> decoder;
  Tensor<T> head_w, head_b;
  Tensor<T> barh_proj_w, barh_proj_b, barh_w1, barh_b1, barh_w2, barh_b2;
  Tensor<T> imdr_proj_w, imdr_proj_b, imdr_w1, imdr_b1, imdr_w2, imdr_b2;
  KdHead<T> kd;
  NoiseSchedule<T> schedule;
  Denoiser<T> denoiser;

  static Model init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    const long L = cfg.depth();
    // The stage aggregates |scales|*|directions| scan traversals by plain
    // summation through one shared readout, and each traversal's recurrence
    // roughly doubles variance, so the readout starts 1/(branches*sqrt(2)) as
    // large to keep stage outputs near unit scale; without this the encoder
    // gain compounds per stage and the final sigmoid saturates.
    const MultiScaleConfig msc = cfg.scan_config();
    const double branches =
        static_cast<double>(msc.scales.size() * msc.directions.size()) *
        std::sqrt(2.0);
    m.stem_w = linear_conv_weight(cfg.stem_width, 4, 1, rng);
    m.stem_b = zero_bias(cfg.stem_width);

    long prev = cfg.stem_width;
    for (long l = 0; l < L; ++l) {
      Stage s;
      const long c = cfg.widths[static_cast<size_t>(l)];
      const long cin = c + (cfg.use_dsp ? cfg.latent_channels : 0);
      s.trans_w = linear_conv_weight(c, prev, 3, rng);
      s.trans_b = zero_bias(c);
      s.scan = ScanParams<T>::init(cfg.state_dim, cin, c, rng);
      for (T& v : s.scan.readout.mutable_data()) v = static_cast<T>(v / branches);
      s.res_w = linear_conv_weight(c, cin, 1, rng);
      s.res_b = zero_bias(c);
      if (cfg.use_asp) {
        s.phi_w1 = dense_weight(cfg.prompt_dim, cin, rng);
        s.phi_b1 = zero_bias(cfg.prompt_dim);
        // A single shift coordinate feeds every input column of the
        // recurrence, so its influence (and its gradient) carries a
        // channel-count lever arm.  Starting the prompt embedding small keeps
        // the first optimizer steps from swinging the whole state trajectory.
        s.phi_w2 = dense_weight(cfg.prompt_dim, cfg.prompt_dim, rng);
        for (T& v : s.phi_w2.mutable_data()) v = static_cast<T>(v / 8);
        s.phi_b2 = zero_bias(cfg.prompt_dim);
        s.prompt_scale_w = zero_dense(cfg.state_dim, cfg.prompt_dim);
        s.prompt_shift_w = zero_dense(cfg.state_dim, cfg.prompt_dim);
      }
      if (cfg.use_dsp) {
        s.lambda_gate = Tensor<T>::scalar(T(0)).set_requires_grad(true);
        s.psi_w = linear_conv_weight(c, cfg.latent_channels, 1, rng);
      }
      m.stages.push_back(std::move(s));
      prev = c;
    }

    for (long l = L - 2; l >= 0; --l) {
      DecoderLevel d;
      const long c = cfg.widths[static_cast<size_t>(l)];
      const long cdeep = cfg.widths[static_cast<size_t>(l + 1)];
      d.lat_w = linear_conv_weight(c, cdeep, 1, rng);
      d.lat_b = zero_bias(c);
      d.scan = ScanParams<T>::init(cfg.state_dim, c, c, rng);
      // Each level adds its scan output back onto the carried path; a
      // half-gain start keeps variance from doubling at every level.
      for (T& v : d.scan.readout.mutable_data()) v = static_cast<T>(v / 2);
      m.decoder.push_back(std::move(d));
    }
    m.head_w = linear_conv_weight(1, cfg.widths.front(), 3, rng);
    // Quarter-gain start keeps initial logits inside the sigmoid's responsive
    // band; full-gain initial logits saturate the clamped cross-entropy.
    for (T& v : m.head_w.mutable_data()) v = static_cast<T>(v / 4);
    // Bias starts at the log-odds of a typical foreground fraction (~1/4),
    // so the first epochs refine shape instead of relearning the base rate.
    m.head_b = Tensor<T>::full(Shape{1}, T(-1.1)).set_requires_grad(true);

    if (cfg.use_barh) {
      m.barh_proj_w = linear_conv_weight(cfg.barh_proj_channels, cfg.widths.front(), 1, rng);
      m.barh_proj_b = zero_bias(cfg.barh_proj_channels);
      m.barh_w1 = conv_weight(cfg.barh_hidden, 2 + cfg.barh_proj_channels, 3, rng);
      m.barh_b1 = zero_bias(cfg.barh_hidden);
      m.barh_w2 = zero_conv(1, cfg.barh_hidden, 3);  // head starts as a no-op
      m.barh_b2 = zero_bias(1);
    }
    if (cfg.use_imdr) {
      m.imdr_proj_w = linear_conv_weight(cfg.imdr_proj_channels, cfg.latent_channels, 1, rng);
      m.imdr_proj_b = zero_bias(cfg.imdr_proj_channels);
      m.imdr_w1 = conv_weight(cfg.imdr_hidden, 1 + cfg.imdr_proj_channels, 3, rng);
      m.imdr_b1 = zero_bias(cfg.imdr_hidden);
      m.imdr_w2 = zero_conv(1, cfg.imdr_hidden, 3);  // each iterate starts as identity
      m.imdr_b2 = zero_bias(1);
    }
    if (cfg.use_kd && L > 1) {
      std::vector<long> student(cfg.widths.begin(), cfg.widths.end() - 1);
      m.kd = KdHead<T>::init(student, cfg.widths.back(), cfg.kd_embed, rng);
    }
    m.schedule = NoiseSchedule<T>::linear(cfg.diffusion_steps, T(cfg.beta_start), T(cfg.beta_end));
    if (cfg.use_dsp)
      m.denoiser = Denoiser<T>::init(cfg.latent_channels, cfg.denoiser_width, cfg.denoiser_embed, rng);
    return m;
  }

  // Samples the structural prior for one image: encode, noise to noise_step
  // with a per-sample stream, then walk back to prior_step. Pure data — the
  // result is consumed as a constant by forward().
  Tensor<T> compute_prior(const Tensor<T>& rgb, uint64_t sample_seed) const {
    if (!cfg.use_dsp) throw Error("structural prior requested but the prior pathway is disabled");
    return structural_prior(rgb, cfg.latent_channels, denoiser, schedule, cfg.noise_step,
                            cfg.prior_step, sample_seed);
  }

  ForwardOutputs<T> forward(Tape<T>* tape, const Tensor<T>& rgb, const Tensor<T>& aux,
                            const Tensor<T>& prior) const {
    if (rgb.ndim() != 3 || rgb.dim(0) != 3)
      throw Error("expected a (3,H,W) image, got " + shape_str(rgb.shape()));
    const long H = rgb.dim(1), W = rgb.dim(2);
    if (aux.defined() && (aux.ndim() != 3 || aux.dim(0) != 1 || aux.dim(1) != H || aux.dim(2) != W))
      throw Error("auxiliary channel must be (1," + std::to_string(H) + "," + std::to_string(W) +
                  "), got " + shape_str(aux.shape()));
    if (cfg.use_dsp && !prior.defined())
      throw Error("prior latent required: the prior pathway is enabled");

    ForwardOutputs<T> out;
    Tensor<T> z;
    if (cfg.use_dsp) {
      z = prior.detached();
      if (z.ndim() != 3 || z.dim(0) != cfg.latent_channels)
        throw Error("prior latent must have " + std::to_string(cfg.latent_channels) +
                    " channels, got " + shape_str(z.shape()));
    }

    // stem: fixed four-channel arity, missing modality becomes zeros
    Tensor<T> a = aux.defined() ? aux.detached() : Tensor<T>::zeros(Shape{1, H, W});
    Tensor<T> x = concat_channels(tape, {rgb.detached(), a});
    x = conv2d(tape, x, stem_w, stem_b, 1, 0);

    const MultiScaleConfig scan_cfg = cfg.scan_config();
    for (size_t l = 0; l < stages.size(); ++l) {
      const Stage& s = stages[l];
      // The inter-stage transition uses tanh rather than relu: the scan
      // integrates its input along whole lines, so a rectified (all-positive)
      // feed gives the state a large common component that makes readout
      // updates shift every output in lockstep. A centered, bounded input
      // keeps those updates local.
      x = tanh(tape, conv2d(tape, x, s.trans_w, s.trans_b, 2, 1));
      const long Hl = x.dim(1), Wl = x.dim(2);
      Tensor<T> xt = cfg.use_dsp
                         ? concat_channels(tape, {x, resize_nearest(tape, z, Hl, Wl)})
                         : x;
      ScanParams<T> sp = s.scan;
      if (cfg.use_asp) {
        Tensor<T> g = global_avg_pool(tape, xt);
        Tensor<T> p = linear(tape, s.phi_w2, s.phi_b2,
                             tanh(tape, linear(tape, s.phi_w1, s.phi_b1, g)));
        sp = apply_prompt(tape, sp, p, s.prompt_scale_w, s.prompt_shift_w);
      }
      Tensor<T> fm = add(tape, scan_multiscale(tape, xt, sp, scan_cfg),
                         conv2d(tape, xt, s.res_w, s.res_b, 1, 0));
      Tensor<T> f = fm;
      if (cfg.use_dsp) {
        Tensor<T> injected = project_prior(tape, z, s.psi_w, Hl, Wl);
        f = add(tape, fm, mul(tape, s.lambda_gate, injected));
      }
      out.stage_feats.push_back(f);
      x = f;
    }

    // top-down decoding with one scan block per level
    Tensor<T> d = out.stage_feats.back();
    const MultiScaleConfig plain{{1}, {ScanDirection::kLeftToRight}};
    for (size_t i = 0; i < decoder.size(); ++i) {
      const Tensor<T>& skip = out.stage_feats[out.stage_feats.size() - 2 - i];
      const DecoderLevel& lvl = decoder[i];
      Tensor<T> u = resize_nearest(tape, d, skip.dim(1), skip.dim(2));
      Tensor<T> merged = add(tape, conv2d(tape, u, lvl.lat_w, lvl.lat_b, 1, 0), skip);
      d = add(tape, merged, scan_multiscale(tape, merged, lvl.scan, plain));
    }
    Tensor<T> d0 = resize_nearest(tape, d, H, W);
    out.logit0 = conv2d(tape, d0, head_w, head_b, 1, 1);
    out.s0 = sigmoid(tape, out.logit0);
    out.edges = sobel_edges(tape, out.s0);

    if (cfg.use_barh) {
      Tensor<T> df = conv2d(tape, d0, barh_proj_w, barh_proj_b, 1, 0);
      Tensor<T> bin = concat_channels(tape, {out.s0, out.edges, df});
      Tensor<T> h = relu(tape, conv2d(tape, bin, barh_w1, barh_b1, 1, 1));
      Tensor<T> r = conv2d(tape, h, barh_w2, barh_b2, 1, 1);
      out.logitb = add(tape, out.logit0, r);
      out.sb = sigmoid(tape, out.logitb);
    } else {
      out.logitb = out.logit0;
      out.sb = out.s0;
    }

    Tensor<T> current = out.logitb;
    if (cfg.use_imdr && cfg.refine_steps > 0) {
      Tensor<T> zfull = cfg.use_dsp ? resize_nearest(tape, z, H, W)
                                    : Tensor<T>::zeros(Shape{cfg.latent_channels, H, W});
      Tensor<T> pz = conv2d(tape, zfull, imdr_proj_w, imdr_proj_b, 1, 0);
      for (long k = 0; k < cfg.refine_steps; ++k) {
        Tensor<T> sk = sigmoid(tape, current);
        Tensor<T> rin = concat_channels(tape, {sk, pz});
        Tensor<T> h = relu(tape, conv2d(tape, rin, imdr_w1, imdr_b1, 1, 1));
        Tensor<T> r = conv2d(tape, h, imdr_w2, imdr_b2, 1, 1);
        current = add(tape, current, r);
        out.refined_logits.push_back(current);
        out.refined.push_back(sigmoid(tape, current));
      }
      out.final_map = out.refined.back();
    } else {
      out.final_map = out.sb;
    }
    return out;
  }

  // Trainable parameters, fixed traversal order. The denoiser is excluded:
  // it is trained by its own loop and frozen during saliency training.
  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> out = {&stem_w, &stem_b};
    for (Stage& s : stages) {
      out.insert(out.end(), {&s.trans_w, &s.trans_b, &s.scan.a_logit, &s.scan.input_proj,
                             &s.scan.readout, &s.res_w, &s.res_b});
      if (cfg.use_asp)
        out.insert(out.end(), {&s.phi_w1, &s.phi_b1, &s.phi_w2, &s.phi_b2, &s.prompt_scale_w,
                               &s.prompt_shift_w});
      if (cfg.use_dsp) out.insert(out.end(), {&s.lambda_gate, &s.psi_w});
    }
    for (DecoderLevel& d : decoder)
      out.insert(out.end(),
                 {&d.lat_w, &d.lat_b, &d.scan.a_logit, &d.scan.input_proj, &d.scan.readout});
    out.insert(out.end(), {&head_w, &head_b});
    if (cfg.use_barh)
      out.insert(out.end(), {&barh_proj_w, &barh_proj_b, &barh_w1, &barh_b1, &barh_w2, &barh_b2});
    if (cfg.use_imdr)
      out.insert(out.end(), {&imdr_proj_w, &imdr_proj_b, &imdr_w1, &imdr_b1, &imdr_w2, &imdr_b2});
    if (cfg.use_kd && !kd.stage_proj.empty())
      for (Tensor<T>* p : kd.params()) out.push_back(p);
    return out;
  }

  NamedTensors<T> named_params() {
    NamedTensors<T> out;
    auto put = [&out](const std::string& name, const Tensor<T>& t) {
      out.emplace_back(name, t);
    };
    put("stem.weight", stem_w);
    put("stem.bias", stem_b);
    for (size_t l = 0; l < stages.size(); ++l) {
      const Stage& s = stages[l];
      const std::string p = "stage" + std::to_string(l + 1) + ".";
      put(p + "transition.weight", s.trans_w);
      put(p + "transition.bias", s.trans_b);
      put(p + "scan.a_logit", s.scan.a_logit);
      put(p + "scan.input_proj", s.scan.input_proj);
      put(p + "scan.readout", s.scan.readout);
      put(p + "residual.weight", s.res_w);
      put(p + "residual.bias", s.res_b);
      if (cfg.use_asp) {
        put(p + "prompt.w1", s.phi_w1);
        put(p + "prompt.b1", s.phi_b1);
        put(p + "prompt.w2", s.phi_w2);
        put(p + "prompt.b2", s.phi_b2);
        put(p + "prompt.scale", s.prompt_scale_w);
        put(p + "prompt.shift", s.prompt_shift_w);
      }
      if (cfg.use_dsp) {
        put(p + "interaction.gate", s.lambda_gate);
        put(p + "interaction.weight", s.psi_w);
      }
    }
    for (size_t i = 0; i < decoder.size(); ++i) {
      const std::string p = "decoder" + std::to_string(i + 1) + ".";
      put(p + "lateral.weight", decoder[i].lat_w);
      put(p + "lateral.bias", decoder[i].lat_b);
      put(p + "scan.a_logit", decoder[i].scan.a_logit);
      put(p + "scan.input_proj", decoder[i].scan.input_proj);
      put(p + "scan.readout", decoder[i].scan.readout);
    }
    put("head.weight", head_w);
    put("head.bias", head_b);
    if (cfg.use_barh) {
      put("barh.proj.weight", barh_proj_w);
      put("barh.proj.bias", barh_proj_b);
      put("barh.conv1.weight", barh_w1);
      put("barh.conv1.bias", barh_b1);
      put("barh.conv2.weight", barh_w2);
      put("barh.conv2.bias", barh_b2);
    }
    if (cfg.use_imdr) {
      put("imdr.proj.weight", imdr_proj_w);
      put("imdr.proj.bias", imdr_proj_b);
      put("imdr.conv1.weight", imdr_w1);
      put("imdr.conv1.bias", imdr_b1);
      put("imdr.conv2.weight", imdr_w2);
      put("imdr.conv2.bias", imdr_b2);
    }
    if (cfg.use_kd && !kd.stage_proj.empty()) {
      for (size_t l = 0; l < kd.stage_proj.size(); ++l)
        put("kd.stage" + std::to_string(l + 1) + ".weight", kd.stage_proj[l]);
      put("kd.teacher.weight", kd.teacher_proj);
    }
    if (cfg.use_dsp)
      for (auto& [name, t] : denoiser.named_params()) put(name, t);
    return out;
  }

  long param_count() {
    long n = 0;
    for (auto& [name, t] : named_params()) n += t.numel();
    return n;
  }

  void save(std::ostream& os) { write_checkpoint(os, cfg.to_lines(), named_params()); }

  static Model load(std::istream& is) {
    ConfigLines lines;
    NamedTensors<T> params;
    load_checkpoint(is, lines, params);
    Rng rng(0);
    Model m = init(ModelConfig::from_lines(lines), rng);
    NamedTensors<T> mine = m.named_params();
    if (mine.size() != params.size())
      throw Error("checkpoint holds " + std::to_string(params.size()) + " tensors, model expects " +
                  std::to_string(mine.size()));
    for (size_t i = 0; i < mine.size(); ++i) {
      auto& [name, t] = mine[i];
      auto& [got_name, got] = params[i];
      if (got_name != name)
        throw Error("checkpoint tensor '" + got_name + "' where '" + name + "' expected");
      if (got.shape() != t.shape())
        throw Error("checkpoint tensor '" + name + "' has shape " + shape_str(got.shape()) +
                    ", expected " + shape_str(t.shape()));
      t.mutable_data() = got.data();
    }
    return m;
  }

  // Shares every weight value with this model but gives each parameter a
  // private gradient cell, so concurrent backward passes never collide.
  Model gradient_worker() {
    Model w = *this;
    auto replace = [](Tensor<T>* p) { *p = p->with_fresh_grad(); };
    for (Tensor<T>* p : w.parameters()) replace(p);
    return w;
  }

 private:
  // Gain-2 fan-in scaling for convs feeding a rectifier...
  static Tensor<T> conv_weight(long co, long ci, long k, Rng& rng) {
    const T std = std::sqrt(T(2) / T(ci * k * k));
    return Tensor<T>::randn(Shape{co, ci, k, k}, rng, std).set_requires_grad(true);
  }
  // ...and unit fan-in scaling for convs on purely linear paths, so residual
  // and projection branches neither shrink nor amplify their inputs.
  static Tensor<T> linear_conv_weight(long co, long ci, long k, Rng& rng) {
    const T std = std::sqrt(T(1) / T(ci * k * k));
    return Tensor<T>::randn(Shape{co, ci, k, k}, rng, std).set_requires_grad(true);
  }
  static Tensor<T> dense_weight(long m, long n, Rng& rng) {
    return Tensor<T>::randn(Shape{m, n}, rng, std::sqrt(T(1) / T(n))).set_requires_grad(true);
  }
  static Tensor<T> zero_dense(long m, long n) {
    return Tensor<T>::zeros(Shape{m, n}).set_requires_grad(true);
  }
  static Tensor<T> zero_conv(long co, long ci, long k) {
    return Tensor<T>::zeros(Shape{co, ci, k, k}).set_requires_grad(true);
  }
  static Tensor<T> zero_bias(long n) { return Tensor<T>::zeros(Shape{n}).set_requires_grad(true); }
};

// ---------------------------------------------------------------------------
// config (de)serialization

namespace model_detail {

inline std::string join_longs(const std::vector<long>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<long> split_longs(const std::string& s) {
  std::vector<long> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw Error("empty entry in list '" + s + "'");
    out.push_back(std::stol(item));
  }
  if (out.empty()) throw Error("empty list value");
  return out;
}

inline std::string join_dirs(const std::vector<ScanDirection>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += std::string(i ? "," : "") + to_string(v[i]);
  return s;
}

inline std::vector<ScanDirection> split_dirs(const std::string& s) {
  std::vector<ScanDirection> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_direction(item));
  if (out.empty()) throw Error("empty direction list");
  return out;
}

}  // namespace model_detail

inline ConfigLines ModelConfig::to_lines() const {
  std::ostringstream beta_s, beta_e;
  beta_s.precision(17);
  beta_e.precision(17);
  beta_s << beta_start;
  beta_e << beta_end;
  return {
      {"stem_width", std::to_string(stem_width)},
      {"widths", model_detail::join_longs(widths)},
      {"state_dim", std::to_string(state_dim)},
      {"latent_channels", std::to_string(latent_channels)},
      {"prompt_dim", std::to_string(prompt_dim)},
      {"refine_steps", std::to_string(refine_steps)},
      {"scales", model_detail::join_longs(scales)},
      {"directions", model_detail::join_dirs(directions)},
      {"diffusion_steps", std::to_string(diffusion_steps)},
      {"beta_start", beta_s.str()},
      {"beta_end", beta_e.str()},
      {"noise_step", std::to_string(noise_step)},
      {"prior_step", std::to_string(prior_step)},
      {"denoiser_width", std::to_string(denoiser_width)},
      {"denoiser_embed", std::to_string(denoiser_embed)},
      {"kd_embed", std::to_string(kd_embed)},
      {"barh_proj_channels", std::to_string(barh_proj_channels)},
      {"barh_hidden", std::to_string(barh_hidden)},
      {"imdr_proj_channels", std::to_string(imdr_proj_channels)},
      {"imdr_hidden", std::to_string(imdr_hidden)},
      {"use_dsp", use_dsp ? "1" : "0"},
      {"use_asp", use_asp ? "1" : "0"},
      {"use_msss", use_msss ? "1" : "0"},
      {"use_barh", use_barh ? "1" : "0"},
      {"use_imdr", use_imdr ? "1" : "0"},
      {"use_kd", use_kd ? "1" : "0"},
  };
}

inline ModelConfig ModelConfig::from_lines(const ConfigLines& lines) {
  ModelConfig cfg;
  for (const auto& [key, value] : lines) {
    if (key == "stem_width") cfg.stem_width = std::stol(value);
    else if (key == "widths") cfg.widths = model_detail::split_longs(value);
    else if (key == "state_dim") cfg.state_dim = std::stol(value);
    else if (key == "latent_channels") cfg.latent_channels = std::stol(value);
    else if (key == "prompt_dim") cfg.prompt_dim = std::stol(value);
    else if (key == "refine_steps") cfg.refine_steps = std::stol(value);
    else if (key == "scales") cfg.scales = model_detail::split_longs(value);
    else if (key == "directions") cfg.directions = model_detail::split_dirs(value);
    else if (key == "diffusion_steps") cfg.diffusion_steps = std::stol(value);
    else if (key == "beta_start") cfg.beta_start = std::stod(value);
    else if (key == "beta_end") cfg.beta_end = std::stod(value);
    else if (key == "noise_step") cfg.noise_step = std::stol(value);
    else if (key == "prior_step") cfg.prior_step = std::stol(value);
    else if (key == "denoiser_width") cfg.denoiser_width = std::stol(value);
    else if (key == "denoiser_embed") cfg.denoiser_embed = std::stol(value);
    else if (key == "kd_embed") cfg.kd_embed = std::stol(value);
    else if (key == "barh_proj_channels") cfg.barh_proj_channels = std::stol(value);
    else if (key == "barh_hidden") cfg.barh_hidden = std::stol(value);
    else if (key == "imdr_proj_channels") cfg.imdr_proj_channels = std::stol(value);
    else if (key == "imdr_hidden") cfg.imdr_hidden = std::stol(value);
    else if (key == "use_dsp") cfg.use_dsp = value == "1";
    else if (key == "use_asp") cfg.use_asp = value == "1";
    else if (key == "use_msss") cfg.use_msss = value == "1";
    else if (key == "use_barh") cfg.use_barh = value == "1";
    else if (key == "use_imdr") cfg.use_imdr = value == "1";
    else if (key == "use_kd") cfg.use_kd = value == "1";
    else throw Error("unknown model config key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

}  // namespace dgssm
