#pragma once

// Compatibility losses: neighborhood-consensus weights, the weighted
// multi-positive contrastive loss used in both the embedding space and the
// discriminative (logit) space, classification cross-entropy, the combined
// objective and the L2-regression baseline.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "bcl/numeric.hpp"

namespace bcl {

struct LossWithGrad {
  double value = 0.0;
  Vec grad;  // with respect to the anchor (embedding or logits)
  bool skipped = false;
};

/// Prior weight of an old positive for an anchor: (cos(old_i, old_p) + 1) / 2.
inline double consensus_weight(VecView old_anchor, VecView old_positive) {
  return std::clamp(0.5 * (cosine_similarity(old_anchor, old_positive) + 1.0), 0.0, 1.0);
}

/// softmax over anchor . candidate / tau.
inline Vec affinity_scores(VecView anchor, std::span<const VecView> candidates, double tau) {
  detail::require(!candidates.empty(), ErrorKind::empty_set, "affinity_scores: no candidates");
  detail::require(tau > 0.0, ErrorKind::parameter, "affinity_scores: temperature must be > 0");
  Vec logits(candidates.size());
  for (std::size_t a = 0; a < candidates.size(); ++a) logits[a] = dot(anchor, candidates[a]);
  return softmax(logits, tau);
}

/// One anchor's contrastive problem. `positives` index into `candidates`
/// (P(i) is a subset of A(i)) and `weights[k]` belongs to `positives[k]`.
struct ContrastiveView {
  std::vector<VecView> candidates;
  std::vector<std::size_t> positives;
  std::vector<double> weights;
};

/// sum_p -w_p log s_p with s = softmax(anchor . candidates / tau).
///
/// Gradient with respect to the anchor:
///   (1/tau) * sum_p w_p (sum_a s_a o_a - o_p)
/// An empty positive set contributes zero and is flagged as skipped.
inline LossWithGrad weighted_contrastive_loss(VecView anchor, const ContrastiveView& view, double tau) {
  detail::require(tau > 0.0, ErrorKind::parameter, "contrastive loss: temperature must be > 0");
  detail::require(view.positives.size() == view.weights.size(), ErrorKind::dimension,
                  "contrastive loss: one weight per positive required");
  LossWithGrad out;
  out.grad.assign(anchor.size(), 0.0);
  if (view.positives.empty()) {
    out.skipped = true;
    return out;
  }
  detail::require(!view.candidates.empty(), ErrorKind::empty_set, "contrastive loss: no candidates");

  Vec logits(view.candidates.size());
  for (std::size_t a = 0; a < logits.size(); ++a) logits[a] = dot(anchor, view.candidates[a]);
  const double lse = log_sum_exp(logits, tau);

  Vec expected(anchor.size(), 0.0);
  for (std::size_t a = 0; a < logits.size(); ++a) {
    const double s = std::exp(logits[a] / tau - lse);
    const VecView o = view.candidates[a];
    for (std::size_t d = 0; d < expected.size(); ++d) expected[d] += s * o[d];
  }

  double weight_sum = 0.0;
  for (std::size_t k = 0; k < view.positives.size(); ++k) {
    const std::size_t p = view.positives[k];
    detail::require(p < view.candidates.size(), ErrorKind::index, "contrastive loss: positive outside candidate set");
    const double w = view.weights[k];
    detail::require(w >= 0.0 && w <= 1.0, ErrorKind::parameter, "contrastive loss: weight outside [0,1]");
    out.value -= w * (logits[p] / tau - lse);
    weight_sum += w;
    const VecView o = view.candidates[p];
    for (std::size_t d = 0; d < out.grad.size(); ++d) out.grad[d] -= w * o[d];
  }
  for (std::size_t d = 0; d < out.grad.size(); ++d) out.grad[d] = (out.grad[d] + weight_sum * expected[d]) / tau;
  // -log s >= 0 analytically; clear rounding below zero.
  out.value = std::max(out.value, 0.0);
  return out;
}

/// Embedding-space loss: anchor is the new embedding, candidates are old bank embeddings.
inline LossWithGrad loss_l1(VecView anchor_new, const ContrastiveView& bank_view, double tau) {
  return weighted_contrastive_loss(anchor_new, bank_view, tau);
}

/// Discriminative-space loss: anchor and candidates are logits of the frozen
/// new classifier (applied to the new anchor embedding and to old bank
/// embeddings). The gradient is with respect to the anchor logits.
inline LossWithGrad loss_l2_discriminative(VecView anchor_logits, const ContrastiveView& bank_logits_view,
                                           double tau) {
  return weighted_contrastive_loss(anchor_logits, bank_logits_view, tau);
}

/// Softmax cross-entropy; gradient is softmax(logits) - onehot(label).
inline LossWithGrad loss_classification(VecView logits, std::size_t label) {
  detail::require(label < logits.size(), ErrorKind::index,
                  "loss_classification: label " + std::to_string(label) + " >= K=" + std::to_string(logits.size()));
  LossWithGrad out;
  out.value = log_sum_exp(logits) - logits[label];
  out.value = std::max(out.value, 0.0);
  out.grad = softmax(logits);
  out.grad[label] -= 1.0;
  return out;
}

inline double loss_total(double l_new, double l1, double l2, double alpha, double beta) {
  detail::require(alpha >= 0.0 && beta >= 0.0, ErrorKind::parameter, "loss_total: alpha and beta must be >= 0");
  return l_new + alpha * l1 + beta * l2;
}

/// ||new - old||^2 with gradient 2 (new - old) on the new embedding.
inline LossWithGrad loss_l2_regression(VecView new_emb, VecView old_emb) {
  detail::require(new_emb.size() == old_emb.size(), ErrorKind::dimension,
                  "loss_l2_regression: dimensions " + std::to_string(new_emb.size()) + " vs " +
                      std::to_string(old_emb.size()));
  LossWithGrad out;
  out.grad.resize(new_emb.size());
  for (std::size_t d = 0; d < new_emb.size(); ++d) {
    const double diff = new_emb[d] - old_emb[d];
    out.value += diff * diff;
    out.grad[d] = 2.0 * diff;
  }
  return out;
}

}  // namespace bcl
