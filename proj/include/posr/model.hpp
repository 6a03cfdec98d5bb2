#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "posr/data.hpp"
#include "posr/losses.hpp"
#include "posr/tensor.hpp"

namespace posr::model {

using autodiff::Parameter;
using autodiff::Tensor;

// Compact convolutional feature extractor: one temporal convolution (along
// time, per channel), one spatial convolution (across channels), ELU,
// max-pool, then n_extra_blocks of (temporal convolution, ELU, pool), then
// flatten. Input trials are [channels x samples].
struct BackboneConfig {
  std::size_t n_channels = 8;
  std::size_t n_samples = 200;
  std::size_t temporal_kernel = 11;
  std::size_t n_temporal_filters = 8;
  std::size_t n_spatial_filters = 8;
  std::size_t pool_size = 4;
  std::size_t n_extra_blocks = 1;

  // Flattened activation size for (n_channels, n_samples). Throws
  // ConfigError when some stage collapses to zero width.
  std::size_t flatten_dim() const;
  void validate() const;
};

enum class HeadKind { distance_prototype, plain_logits };
enum class PointRole { prototype, reciprocal_point };

const char* head_kind_name(HeadKind kind);
const char* point_role_name(PointRole role);

// Head layout implied by a loss kind: CE reads plain logits, GCPL classifies
// by nearness to prototypes, RPL/ARPL by farness from reciprocal points.
HeadKind head_kind_for(losses::LossKind kind);
PointRole point_role_for(losses::LossKind kind);

struct HeadConfig {
  std::size_t embed_dim = 2;
  std::size_t n_categories = 0;
  HeadKind head_kind = HeadKind::distance_prototype;
  PointRole point_role = PointRole::prototype;
};

// One learnable point per category; radii (learnable margins, initialized
// to 1) exist only for the reciprocal-point role.
struct PrototypeSet {
  PointRole role = PointRole::prototype;
  Parameter points;  // [n_categories x embed_dim]
  Parameter radii;   // [n_categories]; undefined tensor unless reciprocal
  bool has_radii() const { return radii.value.defined(); }
};

// Linear map from the flattened backbone features to the head output. For
// distance_prototype heads the output is an embed_dim embedding compared
// against the point set; for plain_logits it is n_categories raw logits.
struct LinearHead {
  HeadConfig config;
  Parameter weight;  // [flatten_dim x out_dim]
  Parameter bias;    // [out_dim]
  std::optional<PrototypeSet> points;
  std::size_t out_dim() const;
};

struct ForwardResult {
  Tensor features;  // [B x flatten_dim], shared by both heads
  Tensor semantic;  // [B x semantic out_dim]
  Tensor style;     // undefined when the style head is disabled
};

struct DualEncoderModel {
  BackboneConfig backbone;
  losses::LossConfig loss;
  Parameter temporal_w, temporal_b;
  Parameter spatial_w, spatial_b;
  std::vector<Parameter> block_w, block_b;
  LinearHead semantic;
  std::optional<LinearHead> style;

  // Stable creation-order view of every learnable tensor; the order defines
  // checkpoint layout and snapshot layout.
  std::vector<Parameter> parameters() const;
  void zero_grad() const;
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& snap) const;
};

// Builds and initializes the two-headed model. Conv and linear weights are
// uniform in +-sqrt(1/fan_in), prototype points are normal(0,1) scaled by
// 0.1, radii start at 1; all draws come from one generator seeded with
// `seed`, so equal seeds give bit-identical parameters. The style head is
// omitted entirely when loss.ossr_kind is NONE.
DualEncoderModel build_model(const BackboneConfig& backbone,
                             const HeadConfig& semantic,
                             const HeadConfig& style,
                             const losses::LossConfig& loss,
                             std::uint64_t seed);

// Runs the shared backbone once and both head projections on it. The batch
// must match the configured channel/sample counts.
ForwardResult forward(const DualEncoderModel& model,
                      const data::EpochBatch& batch);

// Semantic-head class decisions: nearest prototype, farthest reciprocal
// point (plain or combined distance, per the classifier loss kind), or
// argmax logit. Ties break toward the lowest class index; the temperature
// never affects the decision.
std::vector<int> predict_class(const DualEncoderModel& model,
                               const data::EpochBatch& batch);

inline constexpr int kUnknownSubject = -1;

struct SubjectRecognition {
  // Style-head category index per trial, or kUnknownSubject when the score
  // exceeds the threshold. Higher score means "more unknown".
  std::vector<int> subject;
  std::vector<double> score;
};

// Open-set subject decision from the style head: score is the minimum
// squared prototype distance (prototype role) or the negated maximum
// membership probability (reciprocal role). Requires a distance_prototype
// style head.
SubjectRecognition recognize_subject(const DualEncoderModel& model,
                                     const data::EpochBatch& batch,
                                     double threshold);

}  // namespace posr::model
