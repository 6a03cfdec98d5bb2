#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace posr::data {

// A batch of epoched trials, [trial][channel][sample] row-major, with
// per-trial class, subject, and session labels. Samples are held as
// doubles in memory; the on-disk epoch format stores 32-bit floats.
struct EpochBatch {
  std::size_t n_channels = 0;
  std::size_t n_samples = 0;
  double fs_hz = 0.0;
  std::vector<double> data;
  std::vector<int> class_labels;
  std::vector<int> subject_ids;
  std::vector<int> session_ids;

  std::size_t n_trials() const { return class_labels.size(); }
  std::span<const double> trial(std::size_t i) const;
  EpochBatch select(std::span<const std::size_t> indices) const;
  int n_classes() const;  // max class label + 1
  std::vector<int> distinct_subjects() const;  // sorted ascending
  void validate() const;
};

// Parameters of the synthetic multi-subject generator. Each trial is a
// class-specific sinusoid whose amplitude is lateralized onto one half of
// the channels, plus a fixed per-subject per-channel offset and white
// noise. Everything is determined by `seed` (xoshiro256**, see rng.hpp).
struct SynthSpec {
  std::size_t n_subjects = 6;
  std::size_t n_classes = 2;
  std::size_t n_channels = 8;
  std::size_t n_samples = 200;
  double fs_hz = 250.0;
  std::size_t trials_per_subject_per_session = 25;
  std::size_t n_sessions = 4;
  std::vector<double> class_freq_hz = {10.0, 22.0};
  double class_amp = 10.0;
  double subject_offset_sigma = 2.0;
  double noise_sigma = 2.0;
  std::uint64_t seed = 1;

  void validate() const;
};

EpochBatch generate_synthetic(const SynthSpec& spec);

// Binary epoch container, little-endian throughout:
//   "EEGB" | u16 version | u32 n_trials | u16 n_channels | u32 n_samples |
//   f32 fs_hz | per trial: u16 class, u16 subject, u16 session,
//   f32 samples in channel-major order.
inline constexpr std::uint16_t kEpochFormatVersion = 1;

void write_epochs(const EpochBatch& batch, const std::string& path);
EpochBatch read_epochs(const std::string& path);

// Boxcar mean over `factor` consecutive samples, then decimate; fs_hz is
// divided by factor. n_samples must be divisible by factor.
EpochBatch downsample(const EpochBatch& batch, std::size_t factor);

struct LOSOFold {
  int target_subject = -1;
  std::vector<int> source_subjects;
};

// Leave-one-subject-out plan: one fold per pool member, in pool order.
struct LOSOPlan {
  std::string run_id;
  std::vector<int> subject_pool;
  std::vector<LOSOFold> folds;
  double train_fraction = 0.8;
  int eval_session = 3;
  std::uint64_t seed = 0;
};

LOSOPlan make_loso_plan(const std::vector<int>& subject_pool, int eval_session,
                        std::uint64_t seed, const std::string& run_id = "");

struct Split {
  EpochBatch train;
  EpochBatch val;
  EpochBatch test;
};

// Source-subject trials split train/val per subject, stratified by class
// (seeded shuffle); test = target-subject trials from the evaluation
// session only.
Split split_train_val(const EpochBatch& batch, const LOSOFold& fold,
                      double train_fraction, int eval_session,
                      std::uint64_t seed);

}  // namespace posr::data
