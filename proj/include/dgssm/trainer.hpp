#pragma once

#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>
#include <utility>

#include "dgssm/config.hpp"
#include "dgssm/data.hpp"
#include "dgssm/losses.hpp"
#include "dgssm/metrics.hpp"
#include "dgssm/network.hpp"
#include "dgssm/optim.hpp"

namespace dgssm {

// The per-sample prior stream hangs off the sample's own generator seed, so a
// checkpoint evaluated twice on the same dataset sees identical priors no
// matter which run produced it.
inline std::uint64_t prior_seed(const SyntheticSample& s) {
  return substream_seed(s.seed, 0x7072696fULL);
}

inline std::uint64_t holdout_seed(std::uint64_t run_seed) {
  return substream_seed(run_seed, 0xe7a1ULL);
}

template <typename T>
struct SampleTensors {
  Tensor<T> rgb, aux, gt;
};

template <typename T>
std::vector<SampleTensors<T>> to_tensors(const std::vector<SyntheticSample>& data) {
  std::vector<SampleTensors<T>> out;
  out.reserve(data.size());
  for (const SyntheticSample& s : data)
    out.push_back({rgb_tensor<T>(s), aux_tensor<T>(s), gt_tensor<T>(s)});
  return out;
}

// Priors are pure per-sample data; computing them up front keeps the training
// loop free of diffusion work and makes the parallel split trivially safe.
template <typename T>
std::vector<Tensor<T>> compute_priors(const Model<T>& m, const std::vector<SyntheticSample>& data,
                                      const std::vector<SampleTensors<T>>& tensors,
                                      int n_threads) {
  std::vector<Tensor<T>> priors(data.size());
  if (!m.cfg.use_dsp) return priors;  // forward() takes an undefined prior in this mode
  parallel_for(static_cast<long>(data.size()), n_threads, [&](long i) {
    priors[static_cast<size_t>(i)] =
        m.compute_prior(tensors[static_cast<size_t>(i)].rgb, prior_seed(data[static_cast<size_t>(i)]));
  });
  return priors;
}

// Loss weights a given architecture can actually honor: no refinement maps
// means no progressive ramp, no distillation head means no distillation term.
inline LossWeights effective_weights(const RunConfig& rc, const ModelConfig& cfg) {
  LossWeights w;
  w.gamma = rc.gamma;
  w.delta = cfg.use_kd ? rc.delta : 0.0;
  if (cfg.use_imdr)
    for (long k = 1; k <= cfg.refine_steps; ++k)
      w.omega.push_back(rc.omega_scale * static_cast<double>(k) /
                        static_cast<double>(cfg.refine_steps));
  return w;
}

namespace trainer_detail {

struct StepStats {
  double total = 0, bce = 0, iou = 0, edge = 0, kd = 0, progressive = 0;
};

// Forward + composite loss + backward for one sample; gradients scale by
// 1/batch so the accumulated batch gradient is the mean.
template <typename T>
StepStats run_sample(Model<T>& model, const SampleTensors<T>& st, const Tensor<T>& prior,
                     const LossWeights& w, long batch_n) {
  Tape<T> tape;
  ForwardOutputs<T> fo = model.forward(&tape, st.rgb, st.aux, prior);
  std::vector<Tensor<T>> students;
  if (model.cfg.use_kd && fo.stage_feats.size() > 1)
    students.assign(fo.stage_feats.begin(), fo.stage_feats.end() - 1);
  LossTerms<T> terms = total_loss(&tape, fo.final_map, fo.refined, students,
                                  fo.stage_feats.back(), model.kd, st.gt, w);
  StepStats s;
  s.total = static_cast<double>(terms.total.value());
  s.bce = static_cast<double>(terms.bce.value());
  s.iou = static_cast<double>(terms.iou.value());
  s.edge = w.gamma * static_cast<double>(terms.edge.value());
  if (w.delta > 0 && !students.empty())
    s.kd = w.delta * static_cast<double>(terms.kd.value());
  for (size_t k = 0; k < terms.progressive.size(); ++k)
    s.progressive += w.omega[k] * static_cast<double>(terms.progressive[k].value());
  Tensor<T> scaled = scale(&tape, terms.total, static_cast<T>(1.0 / static_cast<double>(batch_n)));
  tape.backward(scaled);
  return s;
}

inline std::string batch_dump(long epoch, long batch, const std::vector<long>& ids,
                              const std::vector<StepStats>& stats) {
  std::ostringstream os;
  os << "offending batch: epoch " << epoch << ", batch " << batch << "\n";
  for (size_t j = 0; j < ids.size(); ++j) {
    os << "  sample " << ids[j];
    if (j < stats.size())
      os << ": total=" << stats[j].total << " bce=" << stats[j].bce << " iou=" << stats[j].iou
         << " edge=" << stats[j].edge << " kd=" << stats[j].kd
         << " progressive=" << stats[j].progressive;
    os << "\n";
  }
  return os.str();
}

}  // namespace trainer_detail

template <typename T>
struct TrainResult {
  std::vector<double> denoiser_loss;  // per-epoch means; empty when the prior path is off
  std::vector<double> epoch_loss;     // mean composite loss per epoch
  std::string log_csv;                // epoch,total,bce,iou,edge_term,kd_term,progressive_term
};

// Momentum-SGD training with per-sample backward passes. With n_threads > 1
// each worker owns a gradient clone of the model (values shared, gradient
// buffers private) and the per-batch merge runs in fixed worker order, so a
// given thread count always reduces in the same sequence. Single-threaded
// runs are bit-deterministic. A non-finite loss aborts with a dump of the
// offending batch.
template <typename T>
TrainResult<T> train_model(Model<T>& m, const std::vector<SyntheticSample>& data,
                           const RunConfig& rc, std::uint64_t seed, int n_threads = 1,
                           std::ostream* progress = nullptr) {
  rc.validate();
  if (data.empty()) throw Error("train_model: empty dataset");
  TrainResult<T> out;
  if (rc.epochs == 0) return out;  // the caller keeps the initialized weights

  std::vector<SampleTensors<T>> tensors = to_tensors<T>(data);

  if (m.cfg.use_dsp && rc.denoiser_epochs > 0) {
    std::vector<Tensor<T>> latents;
    latents.reserve(tensors.size());
    for (const SampleTensors<T>& st : tensors)
      latents.push_back(encode_latent(st.rgb, m.cfg.latent_channels).z);
    out.denoiser_loss =
        train_denoiser(m.denoiser, latents, m.schedule, rc.denoiser_epochs,
                       rc.denoiser_learning_rate, substream_seed(seed, 0xd0ULL));
    if (progress)
      *progress << "denoiser: " << rc.denoiser_epochs << " epochs, loss "
                << out.denoiser_loss.front() << " -> " << out.denoiser_loss.back() << "\n";
  }

  std::vector<Tensor<T>> priors = compute_priors(m, data, tensors, n_threads);
  const LossWeights w = effective_weights(rc, m.cfg);

  SgdMomentum<T> opt(rc.learning_rate, rc.momentum);
  std::vector<Tensor<T>*> params = m.parameters();

  const int n_workers =
      std::max(1, std::min<int>(n_threads, static_cast<int>(rc.batch_size)));
  std::vector<Model<T>> workers;
  if (n_workers > 1)
    for (int i = 0; i < n_workers; ++i) workers.push_back(m.gradient_worker());

  std::ostringstream csv;
  csv << "epoch,total,bce,iou,edge_term,kd_term,progressive_term\n";
  csv << std::fixed << std::setprecision(9);

  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t(0));

  for (long ep = 0; ep < rc.epochs; ++ep) {
    Rng shuffle_rng(substream_seed(seed, 0x1000ULL + static_cast<std::uint64_t>(ep)));
    shuffle_rng.shuffle(order.begin(), order.end());

    trainer_detail::StepStats epoch_sum;
    for (size_t b0 = 0; b0 < order.size(); b0 += static_cast<size_t>(rc.batch_size)) {
      const size_t b1 = std::min(order.size(), b0 + static_cast<size_t>(rc.batch_size));
      const long bn = static_cast<long>(b1 - b0);
      const long batch_index = static_cast<long>(b0) / rc.batch_size + 1;
      std::vector<trainer_detail::StepStats> stats(static_cast<size_t>(bn));
      std::vector<long> ids(static_cast<size_t>(bn));
      for (long j = 0; j < bn; ++j) ids[static_cast<size_t>(j)] = data[order[b0 + static_cast<size_t>(j)]].id;

      try {
        if (n_workers <= 1) {
          for (long j = 0; j < bn; ++j) {
            const size_t i = order[b0 + static_cast<size_t>(j)];
            stats[static_cast<size_t>(j)] =
                trainer_detail::run_sample(m, tensors[i], priors[i], w, bn);
          }
        } else {
          std::vector<std::thread> pool;
          pool.reserve(static_cast<size_t>(n_workers));
          std::vector<std::string> worker_error(static_cast<size_t>(n_workers));
          for (int wk = 0; wk < n_workers; ++wk) {
            pool.emplace_back([&, wk] {
              try {
                for (long j = wk; j < bn; j += n_workers) {
                  const size_t i = order[b0 + static_cast<size_t>(j)];
                  stats[static_cast<size_t>(j)] = trainer_detail::run_sample(
                      workers[static_cast<size_t>(wk)], tensors[i], priors[i], w, bn);
                }
              } catch (const std::exception& e) {
                worker_error[static_cast<size_t>(wk)] = e.what();
              }
            });
          }
          for (std::thread& th : pool) th.join();
          for (const std::string& err : worker_error)
            if (!err.empty()) throw Error(err);
          // Deterministic reduction: workers merge in index order, then the
          // worker buffers reset for the next batch.
          for (int wk = 0; wk < n_workers; ++wk) {
            std::vector<Tensor<T>*> wp = workers[static_cast<size_t>(wk)].parameters();
            if (wp.size() != params.size()) throw Error("worker parameter list diverged");
            for (size_t pi = 0; pi < params.size(); ++pi) {
              std::vector<T>& dst = params[pi]->mutable_grad();
              std::vector<T>& src = wp[pi]->mutable_grad();
              for (size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
              std::fill(src.begin(), src.end(), T(0));
            }
          }
        }
      } catch (const std::exception& e) {
        throw Error(std::string(e.what()) + "\n" +
                    trainer_detail::batch_dump(ep + 1, batch_index, ids, stats));
      }

      bool finite = true;
      for (const trainer_detail::StepStats& s : stats) finite = finite && std::isfinite(s.total);
      if (!finite)
        throw Error("training aborted: non-finite loss\n" +
                    trainer_detail::batch_dump(ep + 1, batch_index, ids, stats));

      opt.step(params);
      for (const trainer_detail::StepStats& s : stats) {
        epoch_sum.total += s.total;
        epoch_sum.bce += s.bce;
        epoch_sum.iou += s.iou;
        epoch_sum.edge += s.edge;
        epoch_sum.kd += s.kd;
        epoch_sum.progressive += s.progressive;
      }
    }

    const double inv_n = 1.0 / static_cast<double>(order.size());
    out.epoch_loss.push_back(epoch_sum.total * inv_n);
    csv << (ep + 1) << "," << epoch_sum.total * inv_n << "," << epoch_sum.bce * inv_n << ","
        << epoch_sum.iou * inv_n << "," << epoch_sum.edge * inv_n << ","
        << epoch_sum.kd * inv_n << "," << epoch_sum.progressive * inv_n << "\n";
    if (progress)
      *progress << "epoch " << (ep + 1) << "/" << rc.epochs << "  loss "
                << epoch_sum.total * inv_n << "\n";
  }

  out.log_csv = csv.str();
  return out;
}

template <typename T>
struct EvalOutput {
  std::vector<std::string> ids;
  std::vector<EvalResult> rows;
  EvalResult mean;
  std::string csv;
};

// Forward + metrics on every sample. Inference is pure, so samples fan out
// across threads and land in preallocated slots; the CSV is byte-stable for
// a given checkpoint and dataset.
template <typename T>
EvalOutput<T> evaluate_model(const Model<T>& m, const std::vector<SyntheticSample>& data,
                             int n_threads = 1) {
  if (data.empty()) throw Error("evaluate_model: empty dataset");
  std::vector<SampleTensors<T>> tensors = to_tensors<T>(data);
  std::vector<Tensor<T>> priors = compute_priors(m, data, tensors, n_threads);

  EvalOutput<T> out;
  out.ids.resize(data.size());
  out.rows.resize(data.size());
  parallel_for(static_cast<long>(data.size()), n_threads, [&](long i) {
    const size_t idx = static_cast<size_t>(i);
    ForwardOutputs<T> fo = m.forward(nullptr, tensors[idx].rgb, tensors[idx].aux, priors[idx]);
    const std::vector<T>& pv = fo.final_map.data();
    std::vector<double> pred(pv.begin(), pv.end());
    std::vector<double> gt(data[idx].gt.size());
    for (size_t p = 0; p < gt.size(); ++p) gt[p] = data[idx].gt[p] != 0 ? 1.0 : 0.0;
    out.rows[idx] = evaluate_sample({pred, gt, data[idx].height, data[idx].width});
    out.ids[idx] = std::to_string(data[idx].id);
  });

  for (const EvalResult& r : out.rows) {
    out.mean.s_measure += r.s_measure;
    out.mean.f_measure_mean += r.f_measure_mean;
    out.mean.e_measure_mean += r.e_measure_mean;
    out.mean.mae += r.mae;
  }
  const double inv = 1.0 / static_cast<double>(out.rows.size());
  out.mean.s_measure *= inv;
  out.mean.f_measure_mean *= inv;
  out.mean.e_measure_mean *= inv;
  out.mean.mae *= inv;
  out.csv = eval_csv(out.ids, out.rows);
  return out;
}

struct AblationRow {
  std::string name;
  long params = 0;
  EvalResult metrics;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::string markdown;    // name + three metric columns, one row per rung
  bool f_monotone = true;  // informational: mean F never decreases up the ladder
};

// The cumulative component ladder: every rung adds one subsystem to the
// previous rung, ending at the full model. All rungs share datasets, seeds,
// and schedule; only the architecture flags move.
inline std::vector<std::pair<std::string, ModelConfig>> ablation_ladder(const ModelConfig& full) {
  ModelConfig cfg = full;
  cfg.use_dsp = cfg.use_asp = cfg.use_msss = cfg.use_barh = cfg.use_imdr = cfg.use_kd = false;
  std::vector<std::pair<std::string, ModelConfig>> rungs;
  rungs.emplace_back("baseline", cfg);
  cfg.use_dsp = true;
  rungs.emplace_back("+ structural prior", cfg);
  cfg.use_asp = true;
  rungs.emplace_back("+ scan prompting", cfg);
  cfg.use_msss = true;
  rungs.emplace_back("+ multi-scale scan", cfg);
  cfg.use_barh = true;
  rungs.emplace_back("+ boundary refinement", cfg);
  cfg.use_imdr = true;
  rungs.emplace_back("+ iterative refinement", cfg);
  cfg.use_kd = true;
  rungs.emplace_back("full model", cfg);
  return rungs;
}

template <typename T>
AblationReport ablate(const RunConfig& rc, std::uint64_t seed, int n_threads = 1,
                      std::ostream* progress = nullptr) {
  rc.validate();
  const std::vector<SyntheticSample> train_set =
      generate_dataset(rc.train_samples, rc.image_size, rc.image_size, seed);
  const std::vector<SyntheticSample> holdout =
      generate_dataset(rc.holdout_samples, rc.image_size, rc.image_size, holdout_seed(seed));

  AblationReport report;
  std::ostringstream md;
  md << "| configuration | S-measure | mean F | mean E |\n";
  md << "|---|---|---|---|\n";
  md << std::fixed << std::setprecision(4);

  for (const auto& [name, cfg] : ablation_ladder(rc.model)) {
    RunConfig row_rc = rc;
    row_rc.model = cfg;
    Rng init_rng(substream_seed(seed, 0xabULL));  // identical init stream per rung
    Model<T> m = Model<T>::init(cfg, init_rng);
    if (progress)
      *progress << "[" << name << "] " << m.param_count() << " parameters\n";
    train_model(m, train_set, row_rc, seed, n_threads, progress);
    EvalOutput<T> ev = evaluate_model(m, holdout, n_threads);
    report.rows.push_back({name, m.param_count(), ev.mean});
    md << "| " << name << " | " << ev.mean.s_measure << " | " << ev.mean.f_measure_mean
       << " | " << ev.mean.e_measure_mean << " |\n";
  }

  for (size_t r = 1; r < report.rows.size(); ++r)
    report.f_monotone = report.f_monotone && report.rows[r].metrics.f_measure_mean >=
                                                 report.rows[r - 1].metrics.f_measure_mean;
  report.markdown = md.str();
  return report;
}

}  // namespace dgssm
