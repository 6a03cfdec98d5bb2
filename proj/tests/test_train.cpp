#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "posr/checkpoint.hpp"
#include "posr/config.hpp"
#include "posr/errors.hpp"
#include "posr/train.hpp"
#include "testutil.hpp"

using namespace posr;

namespace {

// Small enough to train a fold in well under a second.
config::RunConfig tiny_run(losses::LossKind clf, losses::LossKind ossr) {
  config::RunConfig cfg;
  cfg.run_id = "tiny";
  cfg.seed = 3;
  cfg.eval_session = 1;
  cfg.synth.n_subjects = 3;
  cfg.synth.n_classes = 2;
  cfg.synth.n_channels = 4;
  cfg.synth.n_samples = 24;
  cfg.synth.fs_hz = 32.0;
  cfg.synth.trials_per_subject_per_session = 6;
  cfg.synth.n_sessions = 2;
  cfg.synth.class_freq_hz = {4.0, 9.0};
  cfg.synth.noise_sigma = 1.0;
  cfg.backbone.temporal_kernel = 5;
  cfg.backbone.n_temporal_filters = 3;
  cfg.backbone.n_spatial_filters = 3;
  cfg.backbone.pool_size = 2;
  cfg.backbone.n_extra_blocks = 0;
  cfg.loss.clf_kind = clf;
  cfg.loss.ossr_kind = ossr;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 8;
  return cfg;
}

}  // namespace

TEST_CASE("method names encode the loss pairing") {
  losses::LossConfig loss;
  CHECK(train::method_name(loss) == "Baseline");

  loss.clf_kind = losses::LossKind::GCPL;
  CHECK(train::method_name(loss) == "GCPL_clf");

  loss.ossr_kind = losses::LossKind::ARPL;
  CHECK(train::method_name(loss) == "GCPL_clf+ARPL_ossr");

  loss.clf_kind = losses::LossKind::CE;
  CHECK(train::method_name(loss) == "CE_clf+ARPL_ossr");
}

TEST_CASE("the hybrid batch objective is the weighted head sum") {
  const auto cfg = tiny_run(losses::LossKind::GCPL, losses::LossKind::GCPL);
  const auto batch = train::load_or_synthesize(cfg);
  const std::vector<std::size_t> first = {0, 1, 2, 3};
  const auto mini = batch.select(first);

  auto semantic = cfg.backbone;
  semantic.n_channels = mini.n_channels;
  semantic.n_samples = mini.n_samples;
  model::HeadConfig clf_head{cfg.embed_dim, 2,
                             model::head_kind_for(cfg.loss.clf_kind),
                             model::point_role_for(cfg.loss.clf_kind)};
  model::HeadConfig sty_head{cfg.embed_dim, 3,
                             model::head_kind_for(cfg.loss.ossr_kind),
                             model::point_role_for(cfg.loss.ossr_kind)};
  const auto net =
      model::build_model(semantic, clf_head, sty_head, cfg.loss, 77);

  const std::vector<int> style_labels = {0, 0, 0, 0};  // all subject 0
  const auto objective = train::batch_loss(net, mini, style_labels);

  const auto fw = model::forward(net, mini);
  const auto clf = losses::gcpl_loss(
      fw.semantic, net.semantic.points->points.value, mini.class_labels,
      cfg.loss);
  const auto ossr = losses::gcpl_loss(
      fw.style, net.style->points->points.value, style_labels, cfg.loss);
  const double want = clf.item() + cfg.loss.alpha * ossr.item();
  CHECK(objective.total.item() == doctest::Approx(want).epsilon(1e-12));
  CHECK_FALSE(objective.clf_open_reg.defined());  // GCPL has no open term
}

TEST_CASE("training a fold yields populated metrics") {
  const auto cfg = tiny_run(losses::LossKind::GCPL, losses::LossKind::GCPL);
  const auto batch = train::load_or_synthesize(cfg);
  const auto plan = train::plan_from_config(cfg, batch);
  REQUIRE(plan.folds.size() == 3);

  const auto res = train::train_fold(cfg, batch, plan.folds[1], 1);
  CHECK(res.metrics.run_id == "tiny");
  CHECK(res.metrics.fold == 1);
  CHECK(res.metrics.target_subject == plan.folds[1].target_subject);
  CHECK(res.metrics.method == "GCPL_clf+GCPL_ossr");
  CHECK(res.metrics.accuracy >= 0.0);
  CHECK(res.metrics.accuracy <= 1.0);
  REQUIRE(res.metrics.ossr_auroc.has_value());
  CHECK(*res.metrics.ossr_auroc >= 0.0);
  CHECK(*res.metrics.ossr_auroc <= 1.0);
  CHECK(res.metrics.seed == cfg.seed);
  CHECK(res.metrics.epochs == cfg.train.epochs);
  CHECK(res.best_epoch < cfg.train.epochs);
  CHECK(res.model.style.has_value());

  // The baseline method reports no subject-recognition score.
  const auto base_cfg = tiny_run(losses::LossKind::CE, losses::LossKind::NONE);
  const auto base = train::train_fold(base_cfg, batch, plan.folds[1], 1);
  CHECK(base.metrics.method == "Baseline");
  CHECK_FALSE(base.metrics.ossr_auroc.has_value());
}

TEST_CASE("open-space traces are recorded for reciprocal losses") {
  const auto cfg = tiny_run(losses::LossKind::RPL, losses::LossKind::NONE);
  const auto batch = train::load_or_synthesize(cfg);
  const auto plan = train::plan_from_config(cfg, batch);
  const auto res = train::train_fold(cfg, batch, plan.folds[0], 0);
  CHECK(res.clf_open_reg_by_epoch.size() == cfg.train.epochs);
  for (double v : res.clf_open_reg_by_epoch) CHECK(v >= 0.0);
  CHECK(res.ossr_open_reg_by_epoch.empty());
}

TEST_CASE("identical configurations train identically") {
  const auto cfg = tiny_run(losses::LossKind::GCPL, losses::LossKind::ARPL);
  const auto batch = train::load_or_synthesize(cfg);
  const auto plan = train::plan_from_config(cfg, batch);

  const auto a = train::train_fold(cfg, batch, plan.folds[0], 0);
  const auto b = train::train_fold(cfg, batch, plan.folds[0], 0);
  CHECK(a.metrics.accuracy == b.metrics.accuracy);
  CHECK(a.metrics.ossr_auroc == b.metrics.ossr_auroc);
  CHECK(a.best_epoch == b.best_epoch);
  CHECK(a.model.snapshot() == b.model.snapshot());
}

TEST_CASE("loso outcomes are thread-count invariant") {
  const auto cfg = tiny_run(losses::LossKind::GCPL, losses::LossKind::NONE);
  const auto batch = train::load_or_synthesize(cfg);
  const auto plan = train::plan_from_config(cfg, batch);
  CHECK(plan.subject_pool == std::vector<int>{0, 1, 2});

  const auto serial = train::run_loso(cfg, batch, plan, 1);
  const auto parallel = train::run_loso(cfg, batch, plan, 3);
  REQUIRE(serial.all_ok());
  REQUIRE(parallel.all_ok());
  CHECK(eval::metrics_csv_string(serial.records()) ==
        eval::metrics_csv_string(parallel.records()));
}

TEST_CASE("an explicit pool restricts the plan") {
  auto cfg = tiny_run(losses::LossKind::GCPL, losses::LossKind::NONE);
  cfg.loso_pool = {2, 0};
  const auto batch = train::load_or_synthesize(cfg);
  const auto plan = train::plan_from_config(cfg, batch);
  REQUIRE(plan.folds.size() == 2);
  CHECK(plan.folds[0].target_subject == 2);
  CHECK(plan.folds[1].target_subject == 0);
}

TEST_CASE("divergence rolls back and reports") {
  testutil::TempDir tmp;
  auto cfg = tiny_run(losses::LossKind::GCPL, losses::LossKind::GCPL);
  // Adam steps are bounded by lr and the losses are numerically stable, so
  // divergence needs genuine overflow: one step of this size pushes weights
  // to ~1e160 and the next forward pass multiplies two of them into inf.
  cfg.train.lr = 1e160;
  cfg.train.epochs = 3;
  const auto batch = train::load_or_synthesize(cfg);
  const auto plan = train::plan_from_config(cfg, batch);

  const auto ckpt_path = tmp.file("diverged.posr");
  CHECK_THROWS_AS(
      train::train_fold(cfg, batch, plan.folds[0], 0, ckpt_path),
      TrainingDivergedError);
  REQUIRE(std::filesystem::exists(ckpt_path));
  // The rescue checkpoint holds the last finite state and loads cleanly.
  const auto rescued = checkpoint::load_checkpoint(ckpt_path);
  CHECK(!rescued.params.empty());
  for (const auto& p : rescued.params)
    for (double v : p.values) CHECK(std::isfinite(v));

  // Failures inside run_loso are collected, not thrown.
  const auto outcome = train::run_loso(cfg, batch, plan, 2);
  CHECK_FALSE(outcome.all_ok());
  CHECK(outcome.results.empty());
  for (const auto& err : outcome.fold_errors) CHECK(!err.empty());
}

TEST_CASE("data can come from an epoch file") {
  testutil::TempDir tmp;
  auto cfg = tiny_run(losses::LossKind::GCPL, losses::LossKind::NONE);
  const auto synthesized = train::load_or_synthesize(cfg);
  const auto path = tmp.file("epochs.eegb");
  data::write_epochs(synthesized, path);

  cfg.data_path = path;
  const auto loaded = train::load_or_synthesize(cfg);
  CHECK(loaded.n_trials() == synthesized.n_trials());
  CHECK(loaded.class_labels == synthesized.class_labels);
}
