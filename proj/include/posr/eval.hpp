#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace posr::eval {

// Fraction of predictions equal to labels. Empty or mismatched inputs are
// errors.
double accuracy(std::span<const int> predictions, std::span<const int> labels);

// Rank-based AUROC by pairwise enumeration:
// P(score_unknown > score_known) + 0.5 * P(tie). Higher score means
// "predicted unknown".
double auroc(std::span<const double> scores_known,
             std::span<const double> scores_unknown);

struct MetricsRecord {
  std::string run_id;
  int fold = 0;
  int target_subject = 0;
  std::string method;
  double accuracy = 0.0;               // fraction in [0, 1]
  std::optional<double> ossr_auroc;    // fraction in [0, 1] when present
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
};

struct MethodAggregate {
  std::string method;
  std::size_t n_records = 0;
  double mean_accuracy = 0.0;  // fraction
  double std_accuracy = 0.0;   // fraction, (n-1) denominator
  std::optional<double> mean_auroc;
  // True when only one record backed this method, so the spread is
  // reported as 0 rather than estimated.
  bool single_record = false;
};

// Per-method mean and sample standard deviation of accuracy, methods in
// first-appearance order.
std::vector<MethodAggregate> aggregate_runs(
    std::span<const MetricsRecord> records);

// "MM.MM (±SS.SS)" in percent.
std::string format_percent(double mean_fraction, double std_fraction);
std::string format_aggregate(const MethodAggregate& agg);

// Header `method,n,mean_accuracy,std_accuracy,mean_ossr_auroc,accuracy` with
// one row per method; the last column is the formatted percent string.
std::string aggregate_csv_string(std::span<const MethodAggregate> aggs);

// Human-readable aligned table of the same content.
std::string aggregate_table_string(std::span<const MethodAggregate> aggs);

inline constexpr const char* kMetricsCsvHeader =
    "run_id,fold,target_subject,method,accuracy,ossr_auroc,seed,epochs";

// UTF-8, LF line endings, one row per record; absent ossr_auroc is an
// empty field. Doubles use the shortest representation that parses back
// bit-exactly.
std::string metrics_csv_string(std::span<const MetricsRecord> records);
void write_metrics_csv(const std::string& path,
                       std::span<const MetricsRecord> records);
std::vector<MetricsRecord> read_metrics_csv(const std::string& path);

}  // namespace posr::eval
