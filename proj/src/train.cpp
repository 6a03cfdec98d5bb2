#include "posr/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <thread>
#include <unordered_map>

#include "posr/checkpoint.hpp"
#include "posr/errors.hpp"
#include "posr/optim.hpp"
#include "posr/rng.hpp"

namespace posr::train {

using autodiff::Tensor;
using losses::LossKind;

std::string method_name(const losses::LossConfig& loss) {
  if (loss.ossr_kind == LossKind::NONE) {
    if (loss.clf_kind == LossKind::CE) return "Baseline";
    return std::string(losses::loss_kind_name(loss.clf_kind)) + "_clf";
  }
  return std::string(losses::loss_kind_name(loss.clf_kind)) + "_clf+" +
         losses::loss_kind_name(loss.ossr_kind) + "_ossr";
}

namespace {

struct HeadLoss {
  Tensor loss;
  Tensor open_reg;  // defined only for RPL/ARPL
};

HeadLoss head_loss(LossKind kind, const model::LinearHead& head,
                   const Tensor& out, std::span<const int> labels,
                   const losses::LossConfig& cfg) {
  HeadLoss result;
  switch (kind) {
    case LossKind::CE:
      result.loss = losses::ce_loss(out, labels);
      return result;
    case LossKind::GCPL:
      result.loss =
          losses::gcpl_loss(out, head.points->points.value, labels, cfg);
      return result;
    case LossKind::RPL: {
      const Tensor& points = head.points->points.value;
      const Tensor& radii = head.points->radii.value;
      const Tensor probs = losses::rpl_probs(
          losses::sq_euclidean(out, points), cfg.gamma_temp);
      result.open_reg = losses::rpl_open_reg(out, points, radii, labels);
      result.loss =
          autodiff::add(losses::rpl_ce(probs, labels),
                        autodiff::scalar_multiply(result.open_reg,
                                                  cfg.gamma_reg));
      return result;
    }
    case LossKind::ARPL: {
      const Tensor& points = head.points->points.value;
      const Tensor& radii = head.points->radii.value;
      const Tensor probs = losses::arpl_probs(
          losses::arpl_distance(out, points), cfg.gamma_temp);
      result.open_reg = losses::arpl_open_reg(out, points, radii, labels);
      result.loss =
          autodiff::add(losses::dce_loss(probs, labels),
                        autodiff::scalar_multiply(result.open_reg,
                                                  cfg.gamma_reg));
      return result;
    }
    case LossKind::NONE:
      break;
  }
  throw ValueError("head_loss: no loss kind configured");
}

}  // namespace

BatchLoss batch_loss(const model::DualEncoderModel& net,
                     const data::EpochBatch& mini,
                     std::span<const int> style_labels) {
  const model::ForwardResult fw = model::forward(net, mini);
  const HeadLoss clf = head_loss(net.loss.clf_kind, net.semantic, fw.semantic,
                                 mini.class_labels, net.loss);
  BatchLoss out;
  out.total = clf.loss;
  out.clf_open_reg = clf.open_reg;
  if (net.style) {
    const HeadLoss ossr = head_loss(net.loss.ossr_kind, *net.style, fw.style,
                                    style_labels, net.loss);
    out.total = losses::hybrid_loss(clf.loss, ossr.loss, net.loss.alpha);
    out.ossr_open_reg = ossr.open_reg;
  }
  return out;
}

namespace {

bool all_finite(const std::vector<autodiff::Parameter>& params) {
  for (const auto& p : params)
    for (double v : p.value.values())
      if (!std::isfinite(v)) return false;
  return true;
}

std::vector<int> style_labels(const data::EpochBatch& batch,
                              const std::unordered_map<int, int>& index) {
  std::vector<int> labels(batch.n_trials());
  for (std::size_t i = 0; i < batch.n_trials(); ++i) {
    auto it = index.find(batch.subject_ids[i]);
    if (it == index.end())
      throw ValueError("style labels: subject " +
                       std::to_string(batch.subject_ids[i]) +
                       " is not a source subject of this fold");
    labels[i] = it->second;
  }
  return labels;
}

}  // namespace

FoldResult train_fold(const config::RunConfig& cfg,
                      const data::EpochBatch& batch,
                      const data::LOSOFold& fold, std::size_t fold_index,
                      const std::string& diverged_checkpoint_path) {
  cfg.validate();
  const std::uint64_t fold_seed = rng::mix(cfg.seed, 1000 + fold_index);
  const data::Split split = data::split_train_val(
      batch, fold, cfg.train_fraction, cfg.eval_session, rng::mix(fold_seed, 1));
  if (split.train.n_trials() == 0)
    throw ValueError("train_fold: empty training set");

  // Fold-local style categories: source subjects in fold order.
  std::unordered_map<int, int> style_index;
  for (std::size_t i = 0; i < fold.source_subjects.size(); ++i)
    style_index.emplace(fold.source_subjects[i], static_cast<int>(i));

  model::BackboneConfig backbone = cfg.backbone;
  backbone.n_channels = batch.n_channels;
  backbone.n_samples = batch.n_samples;
  const int n_classes = batch.n_classes();

  model::HeadConfig semantic;
  semantic.embed_dim = cfg.embed_dim;
  semantic.n_categories = static_cast<std::size_t>(n_classes);
  semantic.head_kind = model::head_kind_for(cfg.loss.clf_kind);
  if (semantic.head_kind == model::HeadKind::distance_prototype)
    semantic.point_role = model::point_role_for(cfg.loss.clf_kind);

  model::HeadConfig style;
  const bool with_ossr = cfg.loss.ossr_kind != LossKind::NONE;
  if (with_ossr) {
    style.embed_dim = cfg.embed_dim;
    style.n_categories = fold.source_subjects.size();
    style.head_kind = model::head_kind_for(cfg.loss.ossr_kind);
    style.point_role = model::point_role_for(cfg.loss.ossr_kind);
  }

  FoldResult result;
  result.model = model::build_model(backbone, semantic, style, cfg.loss,
                                    rng::mix(fold_seed, 2));
  model::DualEncoderModel& net = result.model;
  const auto params = net.parameters();
  optim::Adam adam(params, {cfg.train.beta1, cfg.train.beta2,
                            cfg.train.epsilon});
  const optim::CosineSchedule schedule{
      cfg.train.lr, cfg.train.eta_min,
      static_cast<std::int64_t>(cfg.train.epochs)};

  const std::size_t n_train = split.train.n_trials();
  const std::size_t batch_size = std::min(cfg.train.batch_size, n_train);
  std::vector<std::size_t> order(n_train);
  for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

  auto diverge = [&](std::vector<std::vector<double>>& last_good,
                     std::size_t epoch) {
    net.restore(last_good);
    std::string note;
    if (!diverged_checkpoint_path.empty()) {
      checkpoint::save_checkpoint(diverged_checkpoint_path,
                                  config::serialize_config(cfg),
                                  net.parameters());
      note = "; last finite state saved to '" + diverged_checkpoint_path + "'";
    }
    throw TrainingDivergedError(
        "training diverged at epoch " + std::to_string(epoch) +
        " (non-finite loss or parameter); last finite state restored" + note);
  };

  std::vector<std::vector<double>> last_good = net.snapshot();
  std::vector<std::vector<double>> best = last_good;
  double best_val = -1.0;
  const bool track_clf_reg =
      cfg.loss.clf_kind == LossKind::RPL || cfg.loss.clf_kind == LossKind::ARPL;
  const bool track_ossr_reg =
      with_ossr && (cfg.loss.ossr_kind == LossKind::RPL ||
                    cfg.loss.ossr_kind == LossKind::ARPL);

  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const double lr =
        optim::cosine_lr(schedule, static_cast<std::int64_t>(epoch));
    rng::Xoshiro256ss shuffler(rng::mix(fold_seed, 3, epoch));
    shuffler.shuffle(order);

    double clf_reg_sum = 0.0, ossr_reg_sum = 0.0;
    for (std::size_t start = 0; start < n_train; start += batch_size) {
      const std::size_t stop = std::min(start + batch_size, n_train);
      const std::span<const std::size_t> idx(order.data() + start,
                                             stop - start);
      const data::EpochBatch mini = split.train.select(idx);
      std::vector<int> sub_labels;
      if (with_ossr) sub_labels = style_labels(mini, style_index);
      // Overflowed activations can surface either as a non-finite loss
      // value or as a DomainError from a log along the way; both mean the
      // optimization left the numeric domain.
      BatchLoss objective;
      try {
        objective = batch_loss(net, mini, sub_labels);
      } catch (const DomainError&) {
        diverge(last_good, epoch);
      }
      if (!std::isfinite(objective.total.item())) diverge(last_good, epoch);
      if (track_clf_reg)
        clf_reg_sum += objective.clf_open_reg.item() *
                       static_cast<double>(mini.n_trials());
      if (track_ossr_reg)
        ossr_reg_sum += objective.ossr_open_reg.item() *
                        static_cast<double>(mini.n_trials());

      net.zero_grad();
      autodiff::backward(objective.total);
      adam.step(lr);
      if (!all_finite(params)) diverge(last_good, epoch);
      last_good = net.snapshot();
    }
    if (track_clf_reg)
      result.clf_open_reg_by_epoch.push_back(clf_reg_sum /
                                             static_cast<double>(n_train));
    if (track_ossr_reg)
      result.ossr_open_reg_by_epoch.push_back(ossr_reg_sum /
                                              static_cast<double>(n_train));

    if (split.val.n_trials() > 0) {
      const double val_acc =
          eval::accuracy(model::predict_class(net, split.val),
                         split.val.class_labels);
      // Ties go to the later epoch: among equally accurate checkpoints the
      // most-trained one has the most mature auxiliary head.
      if (val_acc >= best_val) {
        best_val = val_acc;
        best = net.snapshot();
        result.best_epoch = epoch;
      }
    } else {
      best = net.snapshot();
      result.best_epoch = epoch;
    }
  }
  net.restore(best);
  result.best_val_accuracy = std::max(best_val, 0.0);

  result.train_accuracy = eval::accuracy(
      model::predict_class(net, split.train), split.train.class_labels);

  eval::MetricsRecord& rec = result.metrics;
  rec.run_id = cfg.run_id;
  rec.fold = static_cast<int>(fold_index);
  rec.target_subject = fold.target_subject;
  rec.method = method_name(cfg.loss);
  rec.accuracy = eval::accuracy(model::predict_class(net, split.test),
                                split.test.class_labels);
  rec.seed = cfg.seed;
  rec.epochs = cfg.train.epochs;
  if (with_ossr && split.val.n_trials() > 0) {
    const double inf = std::numeric_limits<double>::infinity();
    const auto known = model::recognize_subject(net, split.val, inf);
    const auto unknown = model::recognize_subject(net, split.test, inf);
    rec.ossr_auroc = eval::auroc(known.score, unknown.score);
  }
  return result;
}

data::EpochBatch load_or_synthesize(const config::RunConfig& cfg) {
  if (!cfg.data_path.empty()) return data::read_epochs(cfg.data_path);
  return data::generate_synthetic(cfg.synth);
}

data::LOSOPlan plan_from_config(const config::RunConfig& cfg,
                                const data::EpochBatch& batch) {
  const std::vector<int> pool =
      cfg.loso_pool.empty() ? batch.distinct_subjects() : cfg.loso_pool;
  data::LOSOPlan plan =
      data::make_loso_plan(pool, cfg.eval_session, cfg.seed, cfg.run_id);
  plan.train_fraction = cfg.train_fraction;
  return plan;
}

bool LOSOOutcome::all_ok() const {
  for (const auto& e : fold_errors)
    if (!e.empty()) return false;
  return true;
}

std::vector<eval::MetricsRecord> LOSOOutcome::records() const {
  std::vector<eval::MetricsRecord> out;
  for (const auto& r : results) out.push_back(r.metrics);
  return out;
}

LOSOOutcome run_loso(const config::RunConfig& cfg,
                     const data::EpochBatch& batch,
                     const data::LOSOPlan& plan, std::size_t n_threads) {
  const std::size_t n_folds = plan.folds.size();
  std::vector<std::optional<FoldResult>> slots(n_folds);
  LOSOOutcome outcome;
  outcome.fold_errors.assign(n_folds, "");

  const std::size_t workers = std::max<std::size_t>(
      1, std::min(n_threads == 0 ? 1 : n_threads, n_folds));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    while (true) {
      const std::size_t k = next.fetch_add(1);
      if (k >= n_folds) return;
      try {
        slots[k] = train_fold(cfg, batch, plan.folds[k], k);
      } catch (const std::exception& e) {
        outcome.fold_errors[k] = e.what();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& slot : slots)
    if (slot) outcome.results.push_back(std::move(*slot));
  return outcome;
}

}  // namespace posr::train
