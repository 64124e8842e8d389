#pragma once

#include <vector>

#include "dgssm/ops.hpp"

namespace dgssm {

// Sobel edge response E = |Gx*s| + |Gy*s| on a single-channel map, with
// replicate padding so edge pixels see their own value outside the frame.
// Peak response on a [0,1] map is 4 per axis (kernel row sums 1+2+1).
template <typename T>
Tensor<T> sobel_edges(Tape<T>* tape, const Tensor<T>& s) {
  if (s.ndim() != 3 || s.dim(0) != 1)
    throw Error("sobel_edges expects a (1,H,W) map, got " + shape_str(s.shape()));
  static const std::vector<T> kx = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
  static const std::vector<T> ky = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
  Tensor<T> wx(Shape{1, 1, 3, 3}, kx);
  Tensor<T> wy(Shape{1, 1, 3, 3}, ky);
  Tensor<T> padded = pad_replicate(tape, s, 1);
  Tensor<T> gx = conv2d(tape, padded, wx);
  Tensor<T> gy = conv2d(tape, padded, wy);
  return add(tape, abs(tape, gx), abs(tape, gy));
}

// Mean binary cross-entropy with the prediction clamped away from {0,1} so
// the logs stay finite. The target is treated as a constant.
template <typename T>
Tensor<T> bce_loss(Tape<T>* tape, const Tensor<T>& pred, const Tensor<T>& gt) {
  if (pred.shape() != gt.shape())
    throw Error("bce_loss shape mismatch: " + shape_str(pred.shape()) + " vs " +
                shape_str(gt.shape()));
  const T lo = T(1e-6), hi = T(1) - T(1e-6);
  Tensor<T> p = clamp(tape, pred, lo, hi);
  Tensor<T> g = gt.detached();
  Tensor<T> pos = mul(tape, g, log(tape, p));
  Tensor<T> neg_term =
      mul(tape, add_scalar(tape, neg(tape, g), T(1)), log(tape, add_scalar(tape, neg(tape, p), T(1))));
  return neg(tape, mean_all(tape, add(tape, pos, neg_term)));
}

// Soft-IoU complement: 1 - (|p∩g| + 1)/(|p∪g| + 1). The +1 smoothing keeps
// the ratio defined for empty masks and the loss exactly 0 at pred == gt.
template <typename T>
Tensor<T> iou_loss(Tape<T>* tape, const Tensor<T>& pred, const Tensor<T>& gt) {
  if (pred.shape() != gt.shape())
    throw Error("iou_loss shape mismatch: " + shape_str(pred.shape()) + " vs " +
                shape_str(gt.shape()));
  Tensor<T> g = gt.detached();
  Tensor<T> inter = sum_all(tape, mul(tape, pred, g));
  Tensor<T> uni = sub(tape, add(tape, sum_all(tape, pred), sum_all(tape, g)), inter);
  Tensor<T> ratio = div(tape, add_scalar(tape, inter, T(1)), add_scalar(tape, uni, T(1)));
  return add_scalar(tape, neg(tape, ratio), T(1));
}

// Boundary agreement: cross-entropy between edge maps of prediction and
// target. Responses are normalized by the per-axis peak (4) and clamped,
// since diagonal corners can push |gx|+|gy| past a single axis's maximum.
template <typename T>
Tensor<T> edge_loss(Tape<T>* tape, const Tensor<T>& pred, const Tensor<T>& gt) {
  if (pred.shape() != gt.shape())
    throw Error("edge_loss shape mismatch: " + shape_str(pred.shape()) + " vs " +
                shape_str(gt.shape()));
  Tensor<T> ep = clamp(tape, scale(tape, sobel_edges(tape, pred), T(0.25)), T(0), T(1));
  Tensor<T> eg = clamp<T>(nullptr, scale<T>(nullptr, sobel_edges<T>(nullptr, gt.detached()), T(0.25)),
                          T(0), T(1));
  return bce_loss(tape, ep, eg);
}

// Projects a feature block to a 64-d unit-sphere embedding: spatial average,
// per-stage linear map, L2 normalization. One projection per student stage
// plus one for the teacher, since stage widths differ.
template <typename T>
struct KdHead {
  std::vector<Tensor<T>> stage_proj;  // (embed_dim, C_l) per student stage
  Tensor<T> teacher_proj;             // (embed_dim, C_teacher)
  long embed_dim = 0;

  static KdHead init(const std::vector<long>& student_channels, long teacher_channels,
                     long embed_dim, Rng& rng) {
    KdHead h;
    h.embed_dim = embed_dim;
    for (long c : student_channels) {
      Tensor<T> w = Tensor<T>::randn(Shape{embed_dim, c}, rng, T(1) / std::sqrt(T(c)));
      h.stage_proj.push_back(w.set_requires_grad(true));
    }
    h.teacher_proj = Tensor<T>::randn(Shape{embed_dim, teacher_channels}, rng,
                                      T(1) / std::sqrt(T(teacher_channels)));
    h.teacher_proj.set_requires_grad(true);
    return h;
  }

  Tensor<T> embed(Tape<T>* tape, const Tensor<T>& feat, const Tensor<T>& proj) const {
    Tensor<T> pooled = global_avg_pool(tape, feat);
    Tensor<T> mapped = linear(tape, proj, Tensor<T>{}, pooled);
    return l2_normalize(tape, mapped, T(1e-12));
  }

  std::vector<Tensor<T>*> params() {
    std::vector<Tensor<T>*> out;
    for (auto& w : stage_proj) out.push_back(&w);
    out.push_back(&teacher_proj);
    return out;
  }
};

// Feature-consistency distillation: squared distance between each shallow
// stage's embedding and the deepest stage's embedding. The teacher feature
// is cut from the tape so no gradient reaches the branch that produced it;
// the teacher's own projection still learns.
template <typename T>
Tensor<T> kd_loss(Tape<T>* tape, const std::vector<Tensor<T>>& student_feats,
                  const Tensor<T>& teacher_feat, const KdHead<T>& head) {
  if (student_feats.size() != head.stage_proj.size())
    throw Error("kd_loss: " + std::to_string(student_feats.size()) + " student features for " +
                std::to_string(head.stage_proj.size()) + " projections");
  Tensor<T> target = head.embed(tape, teacher_feat.detached(), head.teacher_proj);
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (size_t l = 0; l < student_feats.size(); ++l) {
    Tensor<T> e = head.embed(tape, student_feats[l], head.stage_proj[l]);
    Tensor<T> d = sub(tape, e, target);
    total = add(tape, total, sum_all(tape, mul(tape, d, d)));
  }
  return total;
}

struct LossWeights {
  double gamma = 1.0;                // edge-agreement weight
  double delta = 0.1;                // distillation weight
  std::vector<double> omega;         // progressive-supervision ramp, one per iterate

  static LossWeights defaults(long refine_steps) {
    LossWeights w;
    for (long k = 1; k <= refine_steps; ++k)
      w.omega.push_back(0.4 * static_cast<double>(k) / static_cast<double>(refine_steps));
    return w;
  }

  void validate(size_t n_progressive) const {
    if (gamma < 0 || delta < 0) throw Error("loss weights must be non-negative");
    for (double o : omega)
      if (o < 0) throw Error("loss weights must be non-negative");
    if (omega.size() != n_progressive)
      throw Error("got " + std::to_string(omega.size()) + " progressive weights for " +
                  std::to_string(n_progressive) + " refinement maps");
  }
};

template <typename T>
struct LossTerms {
  Tensor<T> total, bce, iou, edge, kd;
  std::vector<Tensor<T>> progressive;  // BCE+IoU per refinement iterate
};

// Composite objective: BCE+IoU on the final map, edge agreement, feature
// distillation, and ramped BCE+IoU supervision on every refinement iterate.
template <typename T>
LossTerms<T> total_loss(Tape<T>* tape, const Tensor<T>& final_map,
                        const std::vector<Tensor<T>>& progressive_maps,
                        const std::vector<Tensor<T>>& student_feats, const Tensor<T>& teacher_feat,
                        const KdHead<T>& head, const Tensor<T>& gt, const LossWeights& w) {
  w.validate(progressive_maps.size());
  LossTerms<T> terms;
  terms.bce = bce_loss(tape, final_map, gt);
  terms.iou = iou_loss(tape, final_map, gt);
  terms.edge = edge_loss(tape, final_map, gt);
  terms.kd = student_feats.empty() ? Tensor<T>::scalar(T(0))
                                   : kd_loss(tape, student_feats, teacher_feat, head);
  Tensor<T> total = add(tape, terms.bce, terms.iou);
  total = add(tape, total, scale(tape, terms.edge, T(w.gamma)));
  if (w.delta > 0 && !student_feats.empty())
    total = add(tape, total, scale(tape, terms.kd, T(w.delta)));
  for (size_t k = 0; k < progressive_maps.size(); ++k) {
    Tensor<T> pk = add(tape, bce_loss(tape, progressive_maps[k], gt),
                       iou_loss(tape, progressive_maps[k], gt));
    terms.progressive.push_back(pk);
    if (w.omega[k] > 0) total = add(tape, total, scale(tape, pk, T(w.omega[k])));
  }
  terms.total = total;
  return terms;
}

}  // namespace dgssm
