#pragma once

#include <span>

#include "posr/tensor.hpp"

namespace posr::losses {

using autodiff::Tensor;

enum class LossKind { NONE, CE, GCPL, RPL, ARPL };

const char* loss_kind_name(LossKind kind);
LossKind loss_kind_from_name(const std::string& name);

// Loss hyperparameters. gamma_temp is the softmax temperature of the
// distance-based probabilities; gamma_reg weights the open-space
// regularizer of RPL/ARPL; beta weights the prototype-compactness term of
// GCPL; alpha weights the auxiliary subject-recognition loss in the hybrid
// objective.
struct LossConfig {
  LossKind clf_kind = LossKind::CE;
  LossKind ossr_kind = LossKind::NONE;
  double gamma_temp = 1.0;
  double beta = 0.001;
  double gamma_reg = 0.001;
  double alpha = 0.1;

  void validate() const;
};

// Pairwise squared Euclidean distances: embeds [B x d] vs points [C x d]
// -> [B x C]. Differentiable w.r.t. both inputs.
Tensor sq_euclidean(const Tensor& embeds, const Tensor& points);

// Row softmax of -gamma * dists (closer prototype => higher probability).
Tensor gcpl_probs(const Tensor& dists, double gamma_temp);

// Mean over the batch of -log p(true class). `probs` rows must be
// normalized probabilities.
Tensor dce_loss(const Tensor& probs, std::span<const int> labels);

// Mean squared distance of each embedding to its own-class prototype.
Tensor prototype_loss(const Tensor& embeds, const Tensor& points,
                      std::span<const int> labels);

// dce + beta * prototype_loss over distance-softmax probabilities.
Tensor gcpl_loss(const Tensor& embeds, const Tensor& points,
                 std::span<const int> labels, const LossConfig& cfg);

// Row softmax of +gamma * dists (farther reciprocal point => higher
// probability of membership).
Tensor rpl_probs(const Tensor& dists, double gamma_temp);

// Same contract as dce_loss, applied to reciprocal-point probabilities.
Tensor rpl_ce(const Tensor& probs, std::span<const int> labels);

// Mean over the batch of (d_e(own reciprocal point) - R_own)^2; learnable
// radii get gradients too.
Tensor rpl_open_reg(const Tensor& embeds, const Tensor& points,
                    const Tensor& radii, std::span<const int> labels);

Tensor rpl_loss(const Tensor& embeds, const Tensor& points,
                const Tensor& radii, std::span<const int> labels,
                const LossConfig& cfg);

// Combined distance d = d_e - d_d (squared Euclidean minus dot product);
// may be negative.
Tensor arpl_distance(const Tensor& embeds, const Tensor& points);

// Row softmax of +gamma * d.
Tensor arpl_probs(const Tensor& d, double gamma_temp);

// Mean hinge max(d_e(own reciprocal point) - R_own, 0); subgradient 0 at
// the hinge point.
Tensor arpl_open_reg(const Tensor& embeds, const Tensor& points,
                     const Tensor& radii, std::span<const int> labels);

Tensor arpl_loss(const Tensor& embeds, const Tensor& points,
                 const Tensor& radii, std::span<const int> labels,
                 const LossConfig& cfg);

// Standard softmax cross-entropy on raw logits, max-shifted.
Tensor ce_loss(const Tensor& logits, std::span<const int> labels);

// l_clf + alpha * l_ossr.
Tensor hybrid_loss(const Tensor& l_clf, const Tensor& l_ossr, double alpha);

}  // namespace posr::losses
