#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "posr/config.hpp"
#include "posr/data.hpp"
#include "posr/eval.hpp"
#include "posr/model.hpp"

namespace posr::train {

// "Baseline" for plain CE with no style head, otherwise "<K>_clf" or
// "<K>_clf+<J>_ossr".
std::string method_name(const losses::LossConfig& loss);

struct BatchLoss {
  autodiff::Tensor total;
  // Open-space regularizer terms, defined only when the corresponding loss
  // kind is RPL or ARPL; their weighted value is already inside `total`.
  autodiff::Tensor clf_open_reg;
  autodiff::Tensor ossr_open_reg;
};

// Full training objective on one minibatch: classifier loss on the
// semantic head plus alpha times the subject-recognition loss on the style
// head (when enabled). `style_labels` are fold-local category indices and
// are ignored when the style head is disabled.
BatchLoss batch_loss(const model::DualEncoderModel& net,
                     const data::EpochBatch& mini,
                     std::span<const int> style_labels);

struct FoldResult {
  eval::MetricsRecord metrics;  // accuracy = unseen-target test accuracy
  double train_accuracy = 0.0;  // on the selected (best-validation) model
  double best_val_accuracy = 0.0;
  std::size_t best_epoch = 0;
  // Mean open-space regularizer value per epoch, present only when the
  // head's loss kind has one (RPL/ARPL).
  std::vector<double> clf_open_reg_by_epoch;
  std::vector<double> ossr_open_reg_by_epoch;
  model::DualEncoderModel model;  // restored to the best-validation state
};

// Trains one leave-one-subject-out fold: per-subject class-stratified
// train/val split of the source subjects, seeded shuffling each epoch,
// hybrid classification + subject-recognition loss, Adam steps under a
// per-epoch cosine schedule, best-validation-accuracy model selection, and
// final evaluation on the target subject's evaluation-session trials.
//
// A non-finite loss or parameter aborts with TrainingDivergedError after
// rolling the model back to the last finite state; when
// diverged_checkpoint_path is nonempty that state is saved there first.
FoldResult train_fold(const config::RunConfig& cfg,
                      const data::EpochBatch& batch,
                      const data::LOSOFold& fold, std::size_t fold_index,
                      const std::string& diverged_checkpoint_path = "");

// Dataset resolution: read cfg.data_path when set, otherwise synthesize
// from cfg.synth.
data::EpochBatch load_or_synthesize(const config::RunConfig& cfg);

// LOSO plan over cfg.loso_pool, or over every subject in the batch when
// the pool is empty.
data::LOSOPlan plan_from_config(const config::RunConfig& cfg,
                                const data::EpochBatch& batch);

struct LOSOOutcome {
  // Successful folds in fold order; failed folds are absent here and carry
  // their error text in fold_errors instead.
  std::vector<FoldResult> results;
  std::vector<std::string> fold_errors;  // one slot per fold, empty = ok

  bool all_ok() const;
  std::vector<eval::MetricsRecord> records() const;
};

// Runs every fold of the plan, n_threads at a time. Fold failures are
// recorded and do not stop the run. Results are deterministic for a given
// config regardless of thread count.
LOSOOutcome run_loso(const config::RunConfig& cfg,
                     const data::EpochBatch& batch,
                     const data::LOSOPlan& plan, std::size_t n_threads);

}  // namespace posr::train
