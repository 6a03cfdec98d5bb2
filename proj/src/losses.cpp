#include "posr/losses.hpp"

#include <string>

#include "posr/errors.hpp"

namespace posr::losses {

namespace ad = autodiff;

const char* loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::NONE: return "NONE";
    case LossKind::CE: return "CE";
    case LossKind::GCPL: return "GCPL";
    case LossKind::RPL: return "RPL";
    case LossKind::ARPL: return "ARPL";
  }
  return "?";
}

LossKind loss_kind_from_name(const std::string& name) {
  if (name == "NONE") return LossKind::NONE;
  if (name == "CE") return LossKind::CE;
  if (name == "GCPL") return LossKind::GCPL;
  if (name == "RPL") return LossKind::RPL;
  if (name == "ARPL") return LossKind::ARPL;
  throw ValueError("unknown loss kind '" + name + "'");
}

void LossConfig::validate() const {
  if (clf_kind == LossKind::NONE)
    throw ConfigError("loss config: clf_kind cannot be NONE");
  if (ossr_kind == LossKind::CE)
    throw ConfigError("loss config: ossr_kind cannot be CE");
  if (!(gamma_temp > 0.0))
    throw ConfigError("loss config: gamma_temp must be > 0");
  if (beta < 0.0) throw ConfigError("loss config: beta must be >= 0");
  if (gamma_reg < 0.0) throw ConfigError("loss config: gamma_reg must be >= 0");
  if (alpha < 0.0) throw ConfigError("loss config: alpha must be >= 0");
}

namespace {

void check_rank2(const Tensor& t, const char* op, const char* what) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": " + what + " must be rank 2, got " +
                     ad::shape_str(t.shape()));
}

void check_labels(std::span<const int> labels, std::size_t batch,
                  std::size_t n_categories, const char* op) {
  if (labels.size() != batch)
    throw ValueError(std::string(op) + ": " + std::to_string(labels.size()) +
                     " labels for a batch of " + std::to_string(batch));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= n_categories)
      throw ValueError(std::string(op) + ": label " + std::to_string(y) +
                       " out of range [0, " + std::to_string(n_categories) +
                       ")");
}

// Constant one-hot matrix [B x C]; carries no gradient.
Tensor one_hot(std::span<const int> labels, std::size_t n_categories) {
  std::vector<double> v(labels.size() * n_categories, 0.0);
  for (std::size_t b = 0; b < labels.size(); ++b)
    v[b * n_categories + static_cast<std::size_t>(labels[b])] = 1.0;
  return Tensor::leaf({labels.size(), n_categories}, std::move(v));
}

// Numerically stable row log-softmax via max shift and log-sum-exp.
Tensor log_softmax_rows(const Tensor& scores) {
  auto m = ad::max(scores, 1, /*keepdims=*/true);
  auto s = ad::subtract(scores, m);
  auto z = ad::log(ad::sum(ad::exp(s), 1, /*keepdims=*/true));
  return ad::subtract(s, z);
}

// Mean over the batch of -log p(label). Probabilities are clamped away
// from zero so saturated rows produce a large finite loss instead of a
// domain error.
Tensor nll_from_probs(const Tensor& probs, std::span<const int> labels,
                      const char* op) {
  check_rank2(probs, op, "probs");
  check_labels(labels, probs.shape()[0], probs.shape()[1], op);
  auto oh = one_hot(labels, probs.shape()[1]);
  auto p_true = ad::sum(ad::elementwise_multiply(probs, oh), 1, false);
  auto clamped = ad::maximum_with_scalar(p_true, 1e-300);
  return ad::scalar_multiply(ad::mean(ad::log(clamped)), -1.0);
}

// Squared distance from each embedding to its own-class point: [B].
Tensor own_class_sq_dist(const Tensor& embeds, const Tensor& points,
                         std::span<const int> labels) {
  auto oh = one_hot(labels, points.shape()[0]);
  auto own = ad::matmul(oh, points);  // [B x d]
  auto diff = ad::subtract(embeds, own);
  return ad::sum(ad::square(diff), 1, false);
}

// Own-class radii gathered per trial: [B].
Tensor own_class_radius(const Tensor& radii, std::span<const int> labels,
                        std::size_t n_categories, const char* op) {
  if (!radii.defined())
    throw ValueError(std::string(op) + ": radii are required");
  if (radii.rank() != 1 || radii.shape()[0] != n_categories)
    throw ShapeError(std::string(op) + ": radii " +
                     ad::shape_str(radii.shape()) + " do not match " +
                     std::to_string(n_categories) + " categories");
  auto oh = one_hot(labels, n_categories);
  auto col = ad::reshape(radii, {n_categories, 1});
  return ad::reshape(ad::matmul(oh, col), {labels.size()});
}

void check_temp(double gamma_temp, const char* op) {
  if (!(gamma_temp > 0.0))
    throw ValueError(std::string(op) + ": gamma_temp must be > 0");
}

}  // namespace

Tensor sq_euclidean(const Tensor& embeds, const Tensor& points) {
  check_rank2(embeds, "sq_euclidean", "embeds");
  check_rank2(points, "sq_euclidean", "points");
  const std::size_t B = embeds.shape()[0], d = embeds.shape()[1];
  const std::size_t C = points.shape()[0];
  if (points.shape()[1] != d)
    throw ShapeError("sq_euclidean: embeds " + ad::shape_str(embeds.shape()) +
                     " vs points " + ad::shape_str(points.shape()));
  auto e3 = ad::reshape(embeds, {B, 1, d});
  auto p3 = ad::reshape(points, {1, C, d});
  auto diff = ad::subtract(e3, p3);  // broadcast to [B x C x d]
  return ad::sum(ad::square(diff), 2, false);
}

Tensor gcpl_probs(const Tensor& dists, double gamma_temp) {
  check_rank2(dists, "gcpl_probs", "dists");
  check_temp(gamma_temp, "gcpl_probs");
  return ad::exp(log_softmax_rows(ad::scalar_multiply(dists, -gamma_temp)));
}

Tensor dce_loss(const Tensor& probs, std::span<const int> labels) {
  return nll_from_probs(probs, labels, "dce_loss");
}

Tensor prototype_loss(const Tensor& embeds, const Tensor& points,
                      std::span<const int> labels) {
  check_rank2(embeds, "prototype_loss", "embeds");
  check_rank2(points, "prototype_loss", "points");
  check_labels(labels, embeds.shape()[0], points.shape()[0], "prototype_loss");
  return ad::mean(own_class_sq_dist(embeds, points, labels));
}

Tensor gcpl_loss(const Tensor& embeds, const Tensor& points,
                 std::span<const int> labels, const LossConfig& cfg) {
  auto probs = gcpl_probs(sq_euclidean(embeds, points), cfg.gamma_temp);
  auto dce = dce_loss(probs, labels);
  auto pl = prototype_loss(embeds, points, labels);
  return ad::add(dce, ad::scalar_multiply(pl, cfg.beta));
}

Tensor rpl_probs(const Tensor& dists, double gamma_temp) {
  check_rank2(dists, "rpl_probs", "dists");
  check_temp(gamma_temp, "rpl_probs");
  return ad::exp(log_softmax_rows(ad::scalar_multiply(dists, gamma_temp)));
}

Tensor rpl_ce(const Tensor& probs, std::span<const int> labels) {
  return nll_from_probs(probs, labels, "rpl_ce");
}

Tensor rpl_open_reg(const Tensor& embeds, const Tensor& points,
                    const Tensor& radii, std::span<const int> labels) {
  check_rank2(embeds, "rpl_open_reg", "embeds");
  check_rank2(points, "rpl_open_reg", "points");
  check_labels(labels, embeds.shape()[0], points.shape()[0], "rpl_open_reg");
  auto d_own = own_class_sq_dist(embeds, points, labels);
  auto r_own = own_class_radius(radii, labels, points.shape()[0], "rpl_open_reg");
  return ad::mean(ad::square(ad::subtract(d_own, r_own)));
}

Tensor rpl_loss(const Tensor& embeds, const Tensor& points,
                const Tensor& radii, std::span<const int> labels,
                const LossConfig& cfg) {
  auto probs = rpl_probs(sq_euclidean(embeds, points), cfg.gamma_temp);
  auto ce = rpl_ce(probs, labels);
  auto reg = rpl_open_reg(embeds, points, radii, labels);
  return ad::add(ce, ad::scalar_multiply(reg, cfg.gamma_reg));
}

Tensor arpl_distance(const Tensor& embeds, const Tensor& points) {
  check_rank2(embeds, "arpl_distance", "embeds");
  check_rank2(points, "arpl_distance", "points");
  if (embeds.shape()[1] != points.shape()[1])
    throw ShapeError("arpl_distance: embeds " + ad::shape_str(embeds.shape()) +
                     " vs points " + ad::shape_str(points.shape()));
  auto d_e = sq_euclidean(embeds, points);
  auto d_d = ad::matmul(embeds, points, false, /*trans_b=*/true);
  return ad::subtract(d_e, d_d);
}

Tensor arpl_probs(const Tensor& d, double gamma_temp) {
  check_rank2(d, "arpl_probs", "d");
  check_temp(gamma_temp, "arpl_probs");
  return ad::exp(log_softmax_rows(ad::scalar_multiply(d, gamma_temp)));
}

Tensor arpl_open_reg(const Tensor& embeds, const Tensor& points,
                     const Tensor& radii, std::span<const int> labels) {
  check_rank2(embeds, "arpl_open_reg", "embeds");
  check_rank2(points, "arpl_open_reg", "points");
  check_labels(labels, embeds.shape()[0], points.shape()[0], "arpl_open_reg");
  auto d_own = own_class_sq_dist(embeds, points, labels);
  auto r_own =
      own_class_radius(radii, labels, points.shape()[0], "arpl_open_reg");
  auto hinge = ad::maximum_with_scalar(ad::subtract(d_own, r_own), 0.0);
  return ad::mean(hinge);
}

Tensor arpl_loss(const Tensor& embeds, const Tensor& points,
                 const Tensor& radii, std::span<const int> labels,
                 const LossConfig& cfg) {
  auto probs = arpl_probs(arpl_distance(embeds, points), cfg.gamma_temp);
  auto ce = nll_from_probs(probs, labels, "arpl_loss");
  auto reg = arpl_open_reg(embeds, points, radii, labels);
  return ad::add(ce, ad::scalar_multiply(reg, cfg.gamma_reg));
}

Tensor ce_loss(const Tensor& logits, std::span<const int> labels) {
  check_rank2(logits, "ce_loss", "logits");
  check_labels(labels, logits.shape()[0], logits.shape()[1], "ce_loss");
  auto lp = log_softmax_rows(logits);
  auto oh = one_hot(labels, logits.shape()[1]);
  auto lp_true = ad::sum(ad::elementwise_multiply(lp, oh), 1, false);
  return ad::scalar_multiply(ad::mean(lp_true), -1.0);
}

Tensor hybrid_loss(const Tensor& l_clf, const Tensor& l_ossr, double alpha) {
  if (alpha < 0.0) throw ValueError("hybrid_loss: alpha must be >= 0");
  return ad::add(l_clf, ad::scalar_multiply(l_ossr, alpha));
}

}  // namespace posr::losses
