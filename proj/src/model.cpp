#include "posr/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "posr/errors.hpp"
#include "posr/rng.hpp"

namespace posr::model {

namespace {

using autodiff::Shape;

std::size_t pooled(std::size_t t, std::size_t pool) { return t / pool; }

}  // namespace

std::size_t BackboneConfig::flatten_dim() const {
  validate();
  std::size_t t = n_samples;
  auto conv = [&](const char* stage) {
    if (t < temporal_kernel)
      throw ConfigError(std::string("backbone: ") + stage + " needs at least " +
                        std::to_string(temporal_kernel) +
                        " samples but only " + std::to_string(t) + " remain");
    t = t - temporal_kernel + 1;
  };
  auto pool = [&](const char* stage) {
    t = pooled(t, pool_size);
    if (t == 0)
      throw ConfigError(std::string("backbone: ") + stage +
                        " pooling collapses the time axis to zero");
  };
  conv("temporal convolution");
  pool("first");
  for (std::size_t i = 0; i < n_extra_blocks; ++i) {
    conv("extra block");
    pool("extra block");
  }
  return n_spatial_filters * t;
}

void BackboneConfig::validate() const {
  if (n_channels == 0 || n_samples == 0)
    throw ConfigError("backbone: channel and sample counts must be positive");
  if (temporal_kernel == 0 || n_temporal_filters == 0 ||
      n_spatial_filters == 0 || pool_size == 0)
    throw ConfigError("backbone: kernel, filter, and pool sizes must be positive");
}

const char* head_kind_name(HeadKind kind) {
  return kind == HeadKind::distance_prototype ? "distance_prototype"
                                              : "plain_logits";
}

const char* point_role_name(PointRole role) {
  return role == PointRole::prototype ? "prototype" : "reciprocal_point";
}

HeadKind head_kind_for(losses::LossKind kind) {
  return kind == losses::LossKind::CE ? HeadKind::plain_logits
                                      : HeadKind::distance_prototype;
}

PointRole point_role_for(losses::LossKind kind) {
  switch (kind) {
    case losses::LossKind::GCPL:
      return PointRole::prototype;
    case losses::LossKind::RPL:
    case losses::LossKind::ARPL:
      return PointRole::reciprocal_point;
    default:
      throw ConfigError(std::string("no point role for loss kind ") +
                        losses::loss_kind_name(kind));
  }
}

std::size_t LinearHead::out_dim() const {
  return config.head_kind == HeadKind::plain_logits ? config.n_categories
                                                    : config.embed_dim;
}

namespace {

Parameter uniform_param(std::string name, Shape shape, std::size_t fan_in,
                        rng::Xoshiro256ss& gen) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::vector<double> v(autodiff::numel(shape));
  for (auto& x : v) x = gen.uniform(-bound, bound);
  return {std::move(name), Tensor::leaf(std::move(shape), std::move(v), true)};
}

Parameter gaussian_param(std::string name, Shape shape, double scale,
                         rng::Xoshiro256ss& gen) {
  std::vector<double> v(autodiff::numel(shape));
  for (auto& x : v) x = scale * gen.gaussian();
  return {std::move(name), Tensor::leaf(std::move(shape), std::move(v), true)};
}

void check_head(const HeadConfig& head, losses::LossKind kind,
                const char* which) {
  if (head.n_categories == 0)
    throw ConfigError(std::string(which) + " head: n_categories must be positive");
  if (head.embed_dim == 0)
    throw ConfigError(std::string(which) + " head: embed_dim must be positive");
  const HeadKind want_kind = head_kind_for(kind);
  if (head.head_kind != want_kind)
    throw ConfigError(std::string(which) + " head: loss kind " +
                      losses::loss_kind_name(kind) + " requires head kind " +
                      head_kind_name(want_kind) + ", got " +
                      head_kind_name(head.head_kind));
  if (head.head_kind == HeadKind::distance_prototype &&
      head.point_role != point_role_for(kind))
    throw ConfigError(std::string(which) + " head: loss kind " +
                      losses::loss_kind_name(kind) + " requires point role " +
                      point_role_name(point_role_for(kind)) + ", got " +
                      point_role_name(head.point_role));
}

LinearHead build_head(const HeadConfig& cfg, const std::string& prefix,
                      std::size_t flatten_dim, rng::Xoshiro256ss& gen) {
  LinearHead head;
  head.config = cfg;
  const std::size_t out = head.out_dim();
  head.weight =
      uniform_param(prefix + ".weight", {flatten_dim, out}, flatten_dim, gen);
  head.bias = uniform_param(prefix + ".bias", {out}, flatten_dim, gen);
  if (cfg.head_kind == HeadKind::distance_prototype) {
    PrototypeSet set;
    set.role = cfg.point_role;
    set.points = gaussian_param(prefix + ".points",
                                {cfg.n_categories, cfg.embed_dim}, 0.1, gen);
    if (cfg.point_role == PointRole::reciprocal_point)
      set.radii = {prefix + ".radii",
                   Tensor::full({cfg.n_categories}, 1.0, true)};
    head.points = std::move(set);
  }
  return head;
}

}  // namespace

DualEncoderModel build_model(const BackboneConfig& backbone,
                             const HeadConfig& semantic,
                             const HeadConfig& style,
                             const losses::LossConfig& loss,
                             std::uint64_t seed) {
  loss.validate();
  const std::size_t flat = backbone.flatten_dim();
  check_head(semantic, loss.clf_kind, "semantic");
  const bool with_style = loss.ossr_kind != losses::LossKind::NONE;
  if (with_style) check_head(style, loss.ossr_kind, "style");

  DualEncoderModel m;
  m.backbone = backbone;
  m.loss = loss;
  rng::Xoshiro256ss gen(rng::mix(seed, 0x30DE1));

  const auto F = backbone.n_temporal_filters;
  const auto F2 = backbone.n_spatial_filters;
  const auto K = backbone.temporal_kernel;
  const auto C = backbone.n_channels;
  m.temporal_w = uniform_param("backbone.temporal.w", {F, 1, K}, K, gen);
  m.temporal_b = uniform_param("backbone.temporal.b", {F}, K, gen);
  m.spatial_w = uniform_param("backbone.spatial.w", {F2, F, C}, F * C, gen);
  m.spatial_b = uniform_param("backbone.spatial.b", {F2}, F * C, gen);
  for (std::size_t i = 0; i < backbone.n_extra_blocks; ++i) {
    const std::string base = "backbone.block" + std::to_string(i);
    m.block_w.push_back(uniform_param(base + ".w", {F2, F2, K}, F2 * K, gen));
    m.block_b.push_back(uniform_param(base + ".b", {F2}, F2 * K, gen));
  }
  m.semantic = build_head(semantic, "semantic", flat, gen);
  if (with_style) m.style = build_head(style, "style", flat, gen);
  return m;
}

std::vector<Parameter> DualEncoderModel::parameters() const {
  std::vector<Parameter> out{temporal_w, temporal_b, spatial_w, spatial_b};
  for (std::size_t i = 0; i < block_w.size(); ++i) {
    out.push_back(block_w[i]);
    out.push_back(block_b[i]);
  }
  auto push_head = [&out](const LinearHead& head) {
    out.push_back(head.weight);
    out.push_back(head.bias);
    if (head.points) {
      out.push_back(head.points->points);
      if (head.points->has_radii()) out.push_back(head.points->radii);
    }
  };
  push_head(semantic);
  if (style) push_head(*style);
  return out;
}

void DualEncoderModel::zero_grad() const {
  for (const auto& p : parameters()) p.value.clear_grad();
}

std::vector<std::vector<double>> DualEncoderModel::snapshot() const {
  std::vector<std::vector<double>> snap;
  for (const auto& p : parameters()) snap.push_back(p.value.values());
  return snap;
}

void DualEncoderModel::restore(
    const std::vector<std::vector<double>>& snap) const {
  auto params = parameters();
  if (snap.size() != params.size())
    throw ValueError("restore: snapshot has " + std::to_string(snap.size()) +
                     " tensors, model has " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor handle = params[i].value;
    auto& dst = handle.mutable_values();
    if (dst.size() != snap[i].size())
      throw ValueError("restore: size mismatch for parameter '" +
                       params[i].name + "'");
    dst = snap[i];
  }
}

namespace {

Tensor head_output(const LinearHead& head, const Tensor& features) {
  return autodiff::add(autodiff::matmul(features, head.weight.value),
                       head.bias.value);
}

}  // namespace

ForwardResult forward(const DualEncoderModel& model,
                      const data::EpochBatch& batch) {
  batch.validate();
  const auto& bc = model.backbone;
  if (batch.n_channels != bc.n_channels || batch.n_samples != bc.n_samples)
    throw ShapeError(
        "forward: batch trials are " + std::to_string(batch.n_channels) + "x" +
        std::to_string(batch.n_samples) + " but the backbone expects " +
        std::to_string(bc.n_channels) + "x" + std::to_string(bc.n_samples));
  if (batch.n_trials() == 0) throw ValueError("forward: empty batch");

  const std::size_t B = batch.n_trials();
  Tensor x = Tensor::leaf({B, 1, bc.n_channels, bc.n_samples}, batch.data);
  Tensor h = autodiff::conv1d_temporal(x, model.temporal_w.value,
                                       model.temporal_b.value);
  h = autodiff::conv_spatial(h, model.spatial_w.value, model.spatial_b.value);
  h = autodiff::elu(h);
  h = autodiff::max_pool_time(h, bc.pool_size);
  for (std::size_t i = 0; i < model.block_w.size(); ++i) {
    h = autodiff::conv1d_temporal(h, model.block_w[i].value,
                                  model.block_b[i].value);
    h = autodiff::elu(h);
    h = autodiff::max_pool_time(h, bc.pool_size);
  }
  const std::size_t flat = h.size() / B;
  ForwardResult out;
  out.features = autodiff::reshape(h, {B, flat});
  out.semantic = head_output(model.semantic, out.features);
  if (model.style) out.style = head_output(*model.style, out.features);
  return out;
}

namespace {

// Row-major [B x C] squared Euclidean distances between embedding values
// and point values, optionally minus the dot product (combined distance).
std::vector<double> distance_rows(const std::vector<double>& embeds,
                                  const std::vector<double>& points,
                                  std::size_t B, std::size_t C, std::size_t E,
                                  bool minus_dot) {
  std::vector<double> d(B * C);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      double de = 0.0, dot = 0.0;
      for (std::size_t j = 0; j < E; ++j) {
        const double e = embeds[b * E + j], p = points[c * E + j];
        de += (e - p) * (e - p);
        dot += e * p;
      }
      d[b * C + c] = minus_dot ? de - dot : de;
    }
  return d;
}

std::size_t argmax_row(const double* row, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

std::size_t argmin_row(const double* row, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (row[i] < row[best]) best = i;
  return best;
}

// Stable row softmax of gamma * d, written over d.
void softmax_rows_inplace(std::vector<double>& d, std::size_t B, std::size_t C,
                          double gamma) {
  for (std::size_t b = 0; b < B; ++b) {
    double* row = d.data() + b * C;
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) top = std::max(top, gamma * row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      row[c] = std::exp(gamma * row[c] - top);
      z += row[c];
    }
    for (std::size_t c = 0; c < C; ++c) row[c] /= z;
  }
}

}  // namespace

std::vector<int> predict_class(const DualEncoderModel& model,
                               const data::EpochBatch& batch) {
  const ForwardResult fw = forward(model, batch);
  const auto& out = fw.semantic.values();
  const std::size_t B = batch.n_trials();
  const auto& cfg = model.semantic.config;
  std::vector<int> pred(B);
  if (cfg.head_kind == HeadKind::plain_logits) {
    for (std::size_t b = 0; b < B; ++b)
      pred[b] = static_cast<int>(
          argmax_row(out.data() + b * cfg.n_categories, cfg.n_categories));
    return pred;
  }
  const auto& points = model.semantic.points->points.value.values();
  const bool combined = model.loss.clf_kind == losses::LossKind::ARPL;
  const auto d = distance_rows(out, points, B, cfg.n_categories, cfg.embed_dim,
                               combined);
  const bool reciprocal = cfg.point_role == PointRole::reciprocal_point;
  for (std::size_t b = 0; b < B; ++b) {
    const double* row = d.data() + b * cfg.n_categories;
    pred[b] = static_cast<int>(reciprocal ? argmax_row(row, cfg.n_categories)
                                          : argmin_row(row, cfg.n_categories));
  }
  return pred;
}

SubjectRecognition recognize_subject(const DualEncoderModel& model,
                                     const data::EpochBatch& batch,
                                     double threshold) {
  if (!model.style)
    throw UnsupportedConfigurationError(
        "recognize_subject: the style head is disabled");
  if (model.style->config.head_kind != HeadKind::distance_prototype)
    throw UnsupportedConfigurationError(
        "recognize_subject: requires a distance_prototype style head");
  const ForwardResult fw = forward(model, batch);
  const auto& out = fw.style.values();
  const auto& cfg = model.style->config;
  const auto& points = model.style->points->points.value.values();
  const std::size_t B = batch.n_trials();
  const std::size_t C = cfg.n_categories;
  const bool combined = model.loss.ossr_kind == losses::LossKind::ARPL;

  SubjectRecognition rec;
  rec.subject.resize(B);
  rec.score.resize(B);
  if (cfg.point_role == PointRole::prototype) {
    const auto d = distance_rows(out, points, B, C, cfg.embed_dim, false);
    for (std::size_t b = 0; b < B; ++b) {
      const double* row = d.data() + b * C;
      const std::size_t best = argmin_row(row, C);
      rec.score[b] = row[best];
      rec.subject[b] =
          rec.score[b] > threshold ? kUnknownSubject : static_cast<int>(best);
    }
  } else {
    auto d = distance_rows(out, points, B, C, cfg.embed_dim, combined);
    softmax_rows_inplace(d, B, C, model.loss.gamma_temp);
    for (std::size_t b = 0; b < B; ++b) {
      const double* row = d.data() + b * C;
      const std::size_t best = argmax_row(row, C);
      rec.score[b] = -row[best];
      rec.subject[b] =
          rec.score[b] > threshold ? kUnknownSubject : static_cast<int>(best);
    }
  }
  return rec;
}

}  // namespace posr::model
