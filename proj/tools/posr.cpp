// Command-line front end: synthetic data generation, single-fold and
// leave-one-subject-out training, gradient verification, and metrics
// aggregation. Exit codes: 0 success, 1 validation error, 2 runtime or
// training error, 3 partial fold failure.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "posr/checkpoint.hpp"
#include "posr/config.hpp"
#include "posr/data.hpp"
#include "posr/errors.hpp"
#include "posr/eval.hpp"
#include "posr/rng.hpp"
#include "posr/tensor.hpp"
#include "posr/train.hpp"

namespace {

namespace fs = std::filesystem;
using posr::config::RunConfig;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path,
                  "run configuration file (defaults used when omitted)");
  cmd->add_option("--out", opts.out_dir, "output directory override");
  cmd->add_option("--seed", opts.seed, "seed override");
}

RunConfig resolve_config(const CommonOpts& opts) {
  RunConfig cfg;
  if (!opts.config_path.empty())
    cfg = posr::config::read_config_file(opts.config_path);
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (opts.seed) cfg.seed = *opts.seed;
  cfg.validate();
  return cfg;
}

std::string prepare_out_dir(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  posr::config::write_config_file(cfg, cfg.out_dir + "/config.echo.txt");
  return cfg.out_dir;
}

std::size_t resolve_parallelism(std::optional<std::size_t> flag) {
  if (flag) return *flag == 0 ? 1 : *flag;
  if (const char* env = std::getenv("POSR_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end == env || *end != '\0')
      throw posr::ConfigError(std::string("POSR_THREADS is not a number: '") +
                              env + "'");
    return v == 0 ? 1 : static_cast<std::size_t>(v);
  }
  return 1;
}

int cmd_synth(const CommonOpts& opts) {
  const RunConfig cfg = resolve_config(opts);
  const std::string out = prepare_out_dir(cfg);
  const posr::data::EpochBatch batch = posr::data::generate_synthetic(cfg.synth);
  const std::string path = out + "/epochs.eegb";
  posr::data::write_epochs(batch, path);
  std::printf("wrote %zu trials (%zu subjects, %d classes) to %s\n",
              batch.n_trials(), batch.distinct_subjects().size(),
              batch.n_classes(), path.c_str());
  return 0;
}

int cmd_train(const CommonOpts& opts) {
  const RunConfig cfg = resolve_config(opts);
  const std::string out = prepare_out_dir(cfg);
  const posr::data::EpochBatch batch = posr::train::load_or_synthesize(cfg);
  const posr::data::LOSOPlan plan = posr::train::plan_from_config(cfg, batch);
  if (cfg.train.fold_index >= plan.folds.size())
    throw posr::ConfigError("train.fold_index " +
                            std::to_string(cfg.train.fold_index) +
                            " out of range; plan has " +
                            std::to_string(plan.folds.size()) + " folds");
  const auto& fold = plan.folds[cfg.train.fold_index];
  std::printf("training fold %zu (target subject %d, %zu sources), method %s\n",
              cfg.train.fold_index, fold.target_subject,
              fold.source_subjects.size(),
              posr::train::method_name(cfg.loss).c_str());
  const posr::train::FoldResult result = posr::train::train_fold(
      cfg, batch, fold, cfg.train.fold_index, out + "/diverged.posr");
  posr::checkpoint::save_checkpoint(out + "/checkpoint.posr",
                                    posr::config::serialize_config(cfg),
                                    result.model.parameters());
  posr::eval::write_metrics_csv(out + "/metrics.csv", {{result.metrics}});
  std::printf(
      "train acc %.4f, best val acc %.4f (epoch %zu), target acc %.4f",
      result.train_accuracy, result.best_val_accuracy, result.best_epoch,
      result.metrics.accuracy);
  if (result.metrics.ossr_auroc)
    std::printf(", ossr auroc %.4f", *result.metrics.ossr_auroc);
  std::printf("\nwrote %s/checkpoint.posr and %s/metrics.csv\n", out.c_str(),
              out.c_str());
  return 0;
}

int cmd_loso(const CommonOpts& opts, std::optional<std::size_t> parallel) {
  const RunConfig cfg = resolve_config(opts);
  const std::string out = prepare_out_dir(cfg);
  const posr::data::EpochBatch batch = posr::train::load_or_synthesize(cfg);
  const posr::data::LOSOPlan plan = posr::train::plan_from_config(cfg, batch);
  const std::size_t n_threads = resolve_parallelism(parallel);
  std::printf("running %zu folds (%zu at a time), method %s\n",
              plan.folds.size(), n_threads,
              posr::train::method_name(cfg.loss).c_str());
  const posr::train::LOSOOutcome outcome =
      posr::train::run_loso(cfg, batch, plan, n_threads);

  for (std::size_t k = 0; k < outcome.fold_errors.size(); ++k)
    if (!outcome.fold_errors[k].empty())
      std::fprintf(stderr, "fold %zu failed: %s\n", k,
                   outcome.fold_errors[k].c_str());
  if (outcome.results.empty()) {
    std::fprintf(stderr, "every fold failed\n");
    return 2;
  }
  const auto records = outcome.records();
  posr::eval::write_metrics_csv(out + "/metrics.csv", records);
  const auto aggs = posr::eval::aggregate_runs(records);
  std::ofstream agg_out(out + "/aggregate.csv", std::ios::binary);
  agg_out << posr::eval::aggregate_csv_string(aggs);
  agg_out.close();
  std::fputs(posr::eval::aggregate_table_string(aggs).c_str(), stdout);
  std::printf("wrote %s/metrics.csv and %s/aggregate.csv\n", out.c_str(),
              out.c_str());
  return outcome.all_ok() ? 0 : 3;
}

// Builds a small randomized model + batch for one loss configuration and
// finite-difference-verifies every parameter gradient.
posr::autodiff::GradCheckReport gradcheck_one(posr::losses::LossKind clf,
                                              posr::losses::LossKind ossr,
                                              std::uint64_t seed) {
  posr::data::SynthSpec spec;
  spec.n_subjects = 3;
  spec.n_classes = 2;
  spec.n_channels = 4;
  spec.n_samples = 24;
  spec.fs_hz = 32.0;
  spec.trials_per_subject_per_session = 2;
  spec.n_sessions = 2;
  spec.class_freq_hz = {3.0, 7.0};
  spec.class_amp = 1.0;
  spec.subject_offset_sigma = 0.5;
  spec.noise_sigma = 0.3;
  spec.seed = seed;
  const posr::data::EpochBatch batch = posr::data::generate_synthetic(spec);
  std::vector<std::size_t> take = {0, 3, 5, 8, 10};
  const posr::data::EpochBatch mini = batch.select(take);

  posr::model::BackboneConfig backbone;
  backbone.n_channels = spec.n_channels;
  backbone.n_samples = spec.n_samples;
  backbone.temporal_kernel = 5;
  backbone.n_temporal_filters = 3;
  backbone.n_spatial_filters = 3;
  backbone.pool_size = 2;
  backbone.n_extra_blocks = 0;

  posr::losses::LossConfig loss;
  loss.clf_kind = clf;
  loss.ossr_kind = ossr;

  posr::model::HeadConfig semantic;
  semantic.embed_dim = 2;
  semantic.n_categories = static_cast<std::size_t>(mini.n_classes());
  semantic.head_kind = posr::model::head_kind_for(clf);
  if (semantic.head_kind == posr::model::HeadKind::distance_prototype)
    semantic.point_role = posr::model::point_role_for(clf);

  posr::model::HeadConfig style;
  std::vector<int> style_map;
  if (ossr != posr::losses::LossKind::NONE) {
    const auto subjects = mini.distinct_subjects();
    style.embed_dim = 2;
    style.n_categories = subjects.size();
    style.head_kind = posr::model::head_kind_for(ossr);
    style.point_role = posr::model::point_role_for(ossr);
    for (int s : mini.subject_ids) {
      const auto it = std::find(subjects.begin(), subjects.end(), s);
      style_map.push_back(static_cast<int>(it - subjects.begin()));
    }
  }

  const posr::model::DualEncoderModel net = posr::model::build_model(
      backbone, semantic, style, loss, posr::rng::mix(seed, 7));
  auto build = [&net, &mini, &style_map] {
    return posr::train::batch_loss(net, mini, style_map).total;
  };
  return posr::autodiff::grad_check(build, net.parameters());
}

int cmd_gradcheck(std::uint64_t seed) {
  using posr::losses::LossKind;
  struct Case {
    const char* name;
    LossKind clf, ossr;
  };
  const Case cases[] = {
      {"GCPL", LossKind::GCPL, LossKind::NONE},
      {"RPL", LossKind::RPL, LossKind::NONE},
      {"ARPL", LossKind::ARPL, LossKind::NONE},
      {"CE", LossKind::CE, LossKind::NONE},
      {"hybrid(GCPL_clf+ARPL_ossr)", LossKind::GCPL, LossKind::ARPL},
  };
  bool ok = true;
  for (const auto& c : cases) {
    const auto report = gradcheck_one(c.clf, c.ossr, seed);
    std::printf("%-28s max rel err %.3e over %zu tensors (tol %g): %s\n",
                c.name, report.max_rel_err(), report.entries.size(),
                report.tol, report.all_ok() ? "PASS" : "FAIL");
    if (!report.all_ok()) {
      ok = false;
      for (const auto& e : report.entries)
        if (!e.ok)
          std::printf("  %s: rel err %.3e at element %zu (analytic %.6e, "
                      "numeric %.6e)\n",
                      e.name.c_str(), e.max_rel_err, e.worst_index, e.analytic,
                      e.numeric);
    }
  }
  return ok ? 0 : 2;
}

int cmd_report(const std::vector<std::string>& paths,
               const std::string& out_dir) {
  std::vector<posr::eval::MetricsRecord> records;
  for (const auto& path : paths) {
    auto part = posr::eval::read_metrics_csv(path);
    records.insert(records.end(), part.begin(), part.end());
  }
  const auto aggs = posr::eval::aggregate_runs(records);
  std::fputs(posr::eval::aggregate_table_string(aggs).c_str(), stdout);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    const std::string path = out_dir + "/aggregate.csv";
    std::ofstream out(path, std::ios::binary);
    out << posr::eval::aggregate_csv_string(aggs);
    out.close();
    std::printf("wrote %s\n", path.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "subject-independent EEG classification with an auxiliary open-set "
      "subject-recognition head"};
  app.require_subcommand(1);

  CommonOpts synth_opts, train_opts, loso_opts;
  add_common(app.add_subcommand("synth", "generate a synthetic epoch file"),
             synth_opts);
  add_common(app.add_subcommand("train", "train a single fold"), train_opts);
  auto* loso = app.add_subcommand(
      "loso", "train and evaluate every leave-one-subject-out fold");
  add_common(loso, loso_opts);
  std::optional<std::size_t> parallel;
  loso->add_option("--parallel", parallel,
                   "folds trained concurrently (POSR_THREADS fallback)");

  auto* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference verification of every loss gradient");
  std::uint64_t gradcheck_seed = 1;
  gradcheck->add_option("--seed", gradcheck_seed, "randomization seed");

  auto* report =
      app.add_subcommand("report", "aggregate one or more metrics CSV files");
  std::vector<std::string> report_paths;
  std::string report_out;
  report->add_option("csv", report_paths, "metrics CSV paths")->required();
  report->add_option("--out", report_out, "directory for the aggregate CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (app.got_subcommand("synth")) return cmd_synth(synth_opts);
    if (app.got_subcommand("train")) return cmd_train(train_opts);
    if (app.got_subcommand("loso")) return cmd_loso(loso_opts, parallel);
    if (app.got_subcommand("gradcheck")) return cmd_gradcheck(gradcheck_seed);
    if (app.got_subcommand("report")) return cmd_report(report_paths, report_out);
  } catch (const posr::TrainingDivergedError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const posr::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const posr::CsvParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const posr::ValueError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const posr::ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const posr::DomainError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const posr::UnsupportedConfigurationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
