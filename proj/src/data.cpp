#include "posr/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <set>
#include <unordered_map>

#include "binio.hpp"
#include "posr/errors.hpp"
#include "posr/rng.hpp"

namespace posr::data {

std::span<const double> EpochBatch::trial(std::size_t i) const {
  const std::size_t stride = n_channels * n_samples;
  return {data.data() + i * stride, stride};
}

EpochBatch EpochBatch::select(std::span<const std::size_t> indices) const {
  EpochBatch out;
  out.n_channels = n_channels;
  out.n_samples = n_samples;
  out.fs_hz = fs_hz;
  const std::size_t stride = n_channels * n_samples;
  out.data.reserve(indices.size() * stride);
  for (std::size_t i : indices) {
    if (i >= n_trials())
      throw ValueError("select: trial index " + std::to_string(i) +
                       " out of range");
    out.data.insert(out.data.end(), data.begin() + i * stride,
                    data.begin() + (i + 1) * stride);
    out.class_labels.push_back(class_labels[i]);
    out.subject_ids.push_back(subject_ids[i]);
    out.session_ids.push_back(session_ids[i]);
  }
  return out;
}

int EpochBatch::n_classes() const {
  int top = -1;
  for (int c : class_labels) top = std::max(top, c);
  return top + 1;
}

std::vector<int> EpochBatch::distinct_subjects() const {
  std::set<int> s(subject_ids.begin(), subject_ids.end());
  return {s.begin(), s.end()};
}

void EpochBatch::validate() const {
  const std::size_t n = n_trials();
  if (subject_ids.size() != n || session_ids.size() != n)
    throw ValueError("epoch batch: label vectors have mismatched lengths");
  if (data.size() != n * n_channels * n_samples)
    throw ValueError("epoch batch: sample buffer does not match trial count");
  if (!(fs_hz > 0.0)) throw ValueError("epoch batch: fs_hz must be positive");
}

void SynthSpec::validate() const {
  if (n_classes < 2) throw ValueError("synth spec: n_classes must be >= 2");
  if (n_sessions < 2)
    throw ValueError(
        "synth spec: n_sessions must be >= 2 (one session is reserved for "
        "evaluation)");
  if (n_subjects == 0 || n_channels == 0 || n_samples == 0 ||
      trials_per_subject_per_session == 0)
    throw ValueError("synth spec: counts must be positive");
  if (!(fs_hz > 0.0)) throw ValueError("synth spec: fs_hz must be positive");
  if (class_freq_hz.size() != n_classes)
    throw ValueError("synth spec: class_freq_hz needs one frequency per class");
  if (class_amp < 0.0 || subject_offset_sigma < 0.0 || noise_sigma < 0.0)
    throw ValueError("synth spec: amplitudes and sigmas must be >= 0");
}

namespace {

// Lateralized per-channel gain: even classes load the first channel half,
// odd classes the second; the off half keeps a small residual.
double class_gain(std::size_t cls, std::size_t ch, std::size_t n_channels) {
  const std::size_t half = n_channels / 2;
  const bool active_first_half = (cls % 2 == 0);
  const bool in_first_half = ch < half;
  return (in_first_half == active_first_half) ? 1.0 : 0.25;
}

}  // namespace

EpochBatch generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  rng::Xoshiro256ss gen(rng::mix(spec.seed, 0xDA7A));

  // Per-subject per-channel offsets first, then trials in (subject,
  // session, trial) order: one phase draw, then channel-major noise.
  std::vector<double> offsets(spec.n_subjects * spec.n_channels);
  for (auto& o : offsets) o = spec.subject_offset_sigma * gen.gaussian();

  EpochBatch batch;
  batch.n_channels = spec.n_channels;
  batch.n_samples = spec.n_samples;
  batch.fs_hz = spec.fs_hz;
  const std::size_t n_trials =
      spec.n_subjects * spec.n_sessions * spec.trials_per_subject_per_session;
  batch.data.reserve(n_trials * spec.n_channels * spec.n_samples);

  for (std::size_t s = 0; s < spec.n_subjects; ++s)
    for (std::size_t sess = 0; sess < spec.n_sessions; ++sess)
      for (std::size_t k = 0; k < spec.trials_per_subject_per_session; ++k) {
        const std::size_t cls = k % spec.n_classes;
        const double phase = gen.uniform() * 2.0 * std::numbers::pi;
        const double freq = spec.class_freq_hz[cls];
        for (std::size_t ch = 0; ch < spec.n_channels; ++ch) {
          const double gain =
              spec.class_amp * class_gain(cls, ch, spec.n_channels);
          const double offset = offsets[s * spec.n_channels + ch];
          for (std::size_t t = 0; t < spec.n_samples; ++t) {
            const double angle =
                2.0 * std::numbers::pi * freq * static_cast<double>(t) /
                    spec.fs_hz +
                phase;
            batch.data.push_back(gain * std::sin(angle) + offset +
                                 spec.noise_sigma * gen.gaussian());
          }
        }
        batch.class_labels.push_back(static_cast<int>(cls));
        batch.subject_ids.push_back(static_cast<int>(s));
        batch.session_ids.push_back(static_cast<int>(sess));
      }
  return batch;
}

namespace {

std::uint16_t to_u16(int v, const char* what) {
  if (v < 0 || v > 0xFFFF)
    throw ValueError(std::string("write_epochs: ") + what + " " +
                     std::to_string(v) + " does not fit in 16 bits");
  return static_cast<std::uint16_t>(v);
}

}  // namespace

void write_epochs(const EpochBatch& batch, const std::string& path) {
  batch.validate();
  if (batch.n_trials() > 0xFFFFFFFFull)
    throw ValueError("write_epochs: too many trials");
  binio::LeWriter w(path);
  w.raw("EEGB", 4);
  w.u16(kEpochFormatVersion);
  w.u32(static_cast<std::uint32_t>(batch.n_trials()));
  w.u16(to_u16(static_cast<int>(batch.n_channels), "channel count"));
  w.u32(static_cast<std::uint32_t>(batch.n_samples));
  w.f32(static_cast<float>(batch.fs_hz));
  const std::size_t stride = batch.n_channels * batch.n_samples;
  for (std::size_t i = 0; i < batch.n_trials(); ++i) {
    w.u16(to_u16(batch.class_labels[i], "class label"));
    w.u16(to_u16(batch.subject_ids[i], "subject id"));
    w.u16(to_u16(batch.session_ids[i], "session id"));
    const double* samples = batch.data.data() + i * stride;
    for (std::size_t j = 0; j < stride; ++j)
      w.f32(static_cast<float>(samples[j]));
  }
  w.finish();
}

EpochBatch read_epochs(const std::string& path) {
  binio::LeReader r(path, "epoch file");
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, "EEGB", 4) != 0)
    throw BadMagicError("epoch file '" + path + "' has bad magic '" +
                        std::string(magic, 4) + "'");
  const std::uint16_t version = r.u16();
  if (version != kEpochFormatVersion)
    throw UnsupportedVersionError("epoch file '" + path +
                                  "' has unsupported version " +
                                  std::to_string(version));
  EpochBatch batch;
  const std::uint32_t n_trials = r.u32();
  batch.n_channels = r.u16();
  batch.n_samples = r.u32();
  batch.fs_hz = static_cast<double>(r.f32());
  const std::size_t stride = batch.n_channels * batch.n_samples;
  batch.data.reserve(static_cast<std::size_t>(n_trials) * stride);
  for (std::uint32_t i = 0; i < n_trials; ++i) {
    batch.class_labels.push_back(r.u16());
    batch.subject_ids.push_back(r.u16());
    batch.session_ids.push_back(r.u16());
    for (std::size_t j = 0; j < stride; ++j)
      batch.data.push_back(static_cast<double>(r.f32()));
  }
  if (!r.at_eof())
    throw FileFormatError("epoch file '" + path +
                          "' has trailing bytes after the last trial");
  batch.validate();
  return batch;
}

EpochBatch downsample(const EpochBatch& batch, std::size_t factor) {
  batch.validate();
  if (factor == 0) throw ValueError("downsample: factor must be >= 1");
  if (factor == 1) return batch;
  if (batch.n_samples % factor != 0)
    throw ValueError("downsample: " + std::to_string(batch.n_samples) +
                     " samples not divisible by factor " +
                     std::to_string(factor));
  EpochBatch out;
  out.n_channels = batch.n_channels;
  out.n_samples = batch.n_samples / factor;
  out.fs_hz = batch.fs_hz / static_cast<double>(factor);
  out.class_labels = batch.class_labels;
  out.subject_ids = batch.subject_ids;
  out.session_ids = batch.session_ids;
  out.data.reserve(batch.n_trials() * out.n_channels * out.n_samples);
  const double inv = 1.0 / static_cast<double>(factor);
  for (std::size_t row = 0; row < batch.n_trials() * batch.n_channels; ++row) {
    const double* src = batch.data.data() + row * batch.n_samples;
    for (std::size_t t = 0; t < out.n_samples; ++t) {
      double acc = 0.0;
      for (std::size_t k = 0; k < factor; ++k) acc += src[t * factor + k];
      out.data.push_back(acc * inv);
    }
  }
  return out;
}

LOSOPlan make_loso_plan(const std::vector<int>& subject_pool, int eval_session,
                        std::uint64_t seed, const std::string& run_id) {
  if (subject_pool.size() < 2)
    throw ValueError("make_loso_plan: pool needs at least 2 subjects");
  std::set<int> uniq(subject_pool.begin(), subject_pool.end());
  if (uniq.size() != subject_pool.size())
    throw ValueError("make_loso_plan: duplicate subjects in pool");
  if (eval_session < 0)
    throw ValueError("make_loso_plan: eval_session must be >= 0");
  LOSOPlan plan;
  plan.run_id = run_id;
  plan.subject_pool = subject_pool;
  plan.eval_session = eval_session;
  plan.seed = seed;
  for (int target : subject_pool) {
    LOSOFold fold;
    fold.target_subject = target;
    for (int s : subject_pool)
      if (s != target) fold.source_subjects.push_back(s);
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

Split split_train_val(const EpochBatch& batch, const LOSOFold& fold,
                      double train_fraction, int eval_session,
                      std::uint64_t seed) {
  batch.validate();
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ValueError("split_train_val: train_fraction must be in (0, 1)");

  std::unordered_map<int, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < batch.n_trials(); ++i)
    by_subject[batch.subject_ids[i]].push_back(i);

  const int n_classes = batch.n_classes();
  std::vector<std::size_t> train_idx, val_idx, test_idx;
  for (int s : fold.source_subjects) {
    auto it = by_subject.find(s);
    if (it == by_subject.end())
      throw ValueError("split_train_val: source subject " + std::to_string(s) +
                       " has no trials in the batch");
    for (int c = 0; c < n_classes; ++c) {
      std::vector<std::size_t> idx;
      for (std::size_t i : it->second)
        if (batch.class_labels[i] == c) idx.push_back(i);
      if (idx.empty()) continue;
      rng::Xoshiro256ss gen(rng::mix(seed, static_cast<std::uint64_t>(s),
                                     static_cast<std::uint64_t>(c)));
      gen.shuffle(idx);
      const auto n_train = static_cast<std::size_t>(
          std::lround(train_fraction * static_cast<double>(idx.size())));
      for (std::size_t k = 0; k < idx.size(); ++k)
        (k < n_train ? train_idx : val_idx).push_back(idx[k]);
    }
  }

  auto target_it = by_subject.find(fold.target_subject);
  if (target_it == by_subject.end())
    throw ValueError("split_train_val: target subject " +
                     std::to_string(fold.target_subject) +
                     " has no trials in the batch");
  for (std::size_t i : target_it->second)
    if (batch.session_ids[i] == eval_session) test_idx.push_back(i);
  if (test_idx.empty())
    throw ValueError("split_train_val: target subject " +
                     std::to_string(fold.target_subject) +
                     " has no trials in evaluation session " +
                     std::to_string(eval_session));

  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {batch.select(train_idx), batch.select(val_idx),
          batch.select(test_idx)};
}

}  // namespace posr::data
