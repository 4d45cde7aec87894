#pragma once

#include <type_traits>
#include <vector>

#include "maskcl/encoder.hpp"
#include "maskcl/losses.hpp"

namespace maskcl {

enum LossTerm : unsigned {
  kPrototypicalLoss = 1u,
  kCrossViewLoss = 2u,
  kNeighborLoss = 4u,
  kAllLosses = 7u,
};

// One mini-batch. Prototypes come from the memory banks and are constants.
template <typename Scalar>
struct BatchInputs {
  std::vector<const ImagePlanes*> images;
  std::vector<const ImagePlanes*> masks;
  std::vector<int> clusters;                          // pseudo-label per element
  std::vector<const NeighborDraw<Scalar>*> draws;     // nullptr = no neighbours
  const RowMatrix<Scalar>* proto_rgb = nullptr;
  const RowMatrix<Scalar>* proto_mask = nullptr;
  const RowMatrix<Scalar>* proto_fused = nullptr;
  Scalar tau = Scalar(0.05);
  unsigned terms = kAllLosses;
  // Cross-view targets are constants. When set, row b replaces the freshly
  // computed mask feature inside the cross-view term (finite-difference
  // checks freeze them here).
  const RowMatrix<Scalar>* crossview_targets = nullptr;
};

template <typename Scalar>
struct BatchOutputs {
  LossBreakdown<Scalar> loss;  // batch means
  RowMatrix<Scalar> x;         // unit-norm RGB features
  RowMatrix<Scalar> x_mask;    // unit-norm mask features
  RowMatrix<Scalar> fused;     // unit-norm fused features
};

namespace detail {

// Backward of y = v / |v|.
template <typename Scalar>
Vector<Scalar> normalize_backward(const Vector<Scalar>& v, const Vector<Scalar>& d_y) {
  const Scalar n = v.norm();
  const Vector<Scalar> y = v / n;
  return (d_y - y * y.dot(d_y)) / n;
}

template <typename Scalar>
Vector<Scalar> checked_unit(const Vector<Scalar>& v, const char* what) {
  const Scalar n = v.norm();
  if (!(n > Scalar(0)) || !std::isfinite(static_cast<double>(n)))
    throw NumericError(std::string(what) + " has zero or non-finite norm");
  return v / n;
}

}  // namespace detail

// Mean over the batch of L_P + L_C + L_N. The RGB, mask and fused features
// enter the posteriors L2-normalized; the fusion map consumes the normalized
// branch features. When `grads` is non-null the analytic gradient of the mean
// loss is accumulated into it.
template <typename Scalar>
BatchOutputs<Scalar> evaluate_batch(const ModelParams<Scalar>& model, const BatchInputs<Scalar>& in,
                                    std::type_identity_t<ModelGradients<Scalar>>* grads = nullptr) {
  using Vec = Vector<Scalar>;
  const auto batch = static_cast<Eigen::Index>(in.images.size());
  const int d = model.feature_dim();
  if (static_cast<Eigen::Index>(in.masks.size()) != batch || static_cast<Eigen::Index>(in.clusters.size()) != batch)
    throw ShapeError("evaluate_batch: images, masks and clusters differ in length");
  if (!in.draws.empty() && static_cast<Eigen::Index>(in.draws.size()) != batch)
    throw ShapeError("evaluate_batch: draws must be empty or one per element");
  if (!in.proto_rgb || !in.proto_mask || !in.proto_fused) throw ShapeError("evaluate_batch: missing prototypes");
  if (batch == 0) throw ShapeError("evaluate_batch: empty batch");
  const RowMatrix<Scalar>& P = *in.proto_rgb;
  const RowMatrix<Scalar>& Pm = *in.proto_mask;
  const RowMatrix<Scalar>& Pf = *in.proto_fused;
  const Scalar inv_tau = Scalar(1) / in.tau;
  const Scalar scale = Scalar(1) / static_cast<Scalar>(batch);
  const bool use_p = in.terms & kPrototypicalLoss;
  const bool use_c = in.terms & kCrossViewLoss;
  const bool use_n = in.terms & kNeighborLoss;

  BatchOutputs<Scalar> out;
  out.x.resize(batch, d);
  out.x_mask.resize(batch, d);
  out.fused.resize(batch, d);
  Scalar sum_p = 0, sum_c = 0, sum_n = 0;

  typename ConvBranch<Scalar>::Cache cache_rgb, cache_mask;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const int y = in.clusters[b];
    if (y < 0 || y >= P.rows()) throw ShapeError("evaluate_batch: cluster label out of range");
    const Vec x_raw = model.rgb_branch.forward(*in.images[b], grads ? &cache_rgb : nullptr);
    const Vec xm_raw = model.mask_branch.forward(*in.masks[b], grads ? &cache_mask : nullptr);
    const Vec x = detail::checked_unit(x_raw, "rgb feature");
    const Vec xm = detail::checked_unit(xm_raw, "mask feature");
    Vec joint(2 * d);
    joint << x, xm;
    const Vec f_raw = model.fusion.forward(joint);
    const Vec f = detail::checked_unit(f_raw, "fused feature");
    out.x.row(b) = x.transpose();
    out.x_mask.row(b) = xm.transpose();
    out.fused.row(b) = f.transpose();

    const Vec q = softmax((P * x) * inv_tau);
    const Vec qm = softmax((Pm * xm) * inv_tau);
    const Vec qf = softmax((Pf * f) * inv_tau);

    Vec d_logit = Vec::Zero(P.rows()), d_logit_m = Vec::Zero(P.rows()), d_logit_f = Vec::Zero(P.rows());
    auto add_log_grad = [](Vec& dl, const Vec& prob, int j, Scalar coeff) {
      // coeff * d(ln prob_j)/d(logits), prob_j * (e_j - prob) scaled by d ln / d prob_j.
      const Scalar g = coeff * floored_log_slope(prob[j]) * prob[j];
      if (g == Scalar(0)) return;
      dl -= g * prob;
      dl[j] += g;
    };

    if (use_p) {
      sum_p += focal_term(q[y]) + focal_term(qm[y]) + focal_term(qf[y]);
      if (grads) {
        auto add_focal = [](Vec& dl, const Vec& prob, int j, Scalar s) {
          const Scalar g = s * focal_term_slope(prob[j]) * prob[j];
          dl -= g * prob;
          dl[j] += g;
        };
        add_focal(d_logit, q, y, scale);
        add_focal(d_logit_m, qm, y, scale);
        add_focal(d_logit_f, qf, y, scale);
      }
    }

    Vec z;
    Vec d_z;
    if (use_c) {
      z = model.predictor.forward(x);
      const Vec pm_y = Pm.row(y).transpose();
      const Vec target = in.crossview_targets ? Vec(in.crossview_targets->row(b).transpose()) : xm;
      sum_c += loss_crossview<Scalar>(z, target, pm_y);
      if (grads) d_z = -scale * (cosine_slope<Scalar>(z, target) + cosine_slope<Scalar>(z, pm_y));
    }

    if (use_n && !in.draws.empty() && in.draws[b]) {
      for (const Neighbor<Scalar>& nb : in.draws[b]->drawn) {
        sum_n -= nb.similarity * (floored_log(q[nb.cluster]) + floored_log(qm[nb.cluster]));
        if (grads) {
          add_log_grad(d_logit, q, nb.cluster, -scale * nb.similarity);
          add_log_grad(d_logit_m, qm, nb.cluster, -scale * nb.similarity);
        }
      }
    }

    if (!grads) continue;
    Vec d_x = P.transpose() * d_logit * inv_tau;
    Vec d_xm = Pm.transpose() * d_logit_m * inv_tau;
    const Vec d_f = Pf.transpose() * d_logit_f * inv_tau;
    if (use_c) d_x += model.predictor.backward(x, z, d_z, grads->predictor);
    const Vec d_f_raw = detail::normalize_backward(f_raw, d_f);
    const Vec d_joint = model.fusion.backward(joint, f_raw, d_f_raw, grads->fusion);
    d_x += d_joint.head(d);
    d_xm += d_joint.tail(d);
    model.rgb_branch.backward(cache_rgb, detail::normalize_backward(x_raw, d_x), grads->rgb_branch);
    model.mask_branch.backward(cache_mask, detail::normalize_backward(xm_raw, d_xm), grads->mask_branch);
  }
  out.loss = make_breakdown(sum_p * scale, sum_c * scale, sum_n * scale);
  return out;
}

}  // namespace maskcl
