#include "posr/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>

#include "posr/errors.hpp"

namespace posr::eval {

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.empty()) throw ValueError("accuracy: empty input");
  if (predictions.size() != labels.size())
    throw ValueError("accuracy: " + std::to_string(predictions.size()) +
                     " predictions vs " + std::to_string(labels.size()) +
                     " labels");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double auroc(std::span<const double> scores_known,
             std::span<const double> scores_unknown) {
  if (scores_known.empty() || scores_unknown.empty())
    throw ValueError("auroc: both score lists must be nonempty");
  double wins = 0.0;
  for (double u : scores_unknown)
    for (double k : scores_known) {
      if (u > k)
        wins += 1.0;
      else if (u == k)
        wins += 0.5;
    }
  return wins / (static_cast<double>(scores_known.size()) *
                 static_cast<double>(scores_unknown.size()));
}

std::vector<MethodAggregate> aggregate_runs(
    std::span<const MetricsRecord> records) {
  if (records.empty()) throw ValueError("aggregate_runs: no records");
  std::vector<MethodAggregate> out;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& rec : records) {
    auto [it, fresh] = index.emplace(rec.method, out.size());
    if (fresh) {
      MethodAggregate blank;
      blank.method = rec.method;
      out.push_back(std::move(blank));
    }
    auto& agg = out[it->second];
    agg.n_records += 1;
    agg.mean_accuracy += rec.accuracy;
    if (rec.ossr_auroc)
      agg.mean_auroc = agg.mean_auroc.value_or(0.0) + *rec.ossr_auroc;
  }
  for (auto& agg : out) {
    const auto n = static_cast<double>(agg.n_records);
    agg.mean_accuracy /= n;
    if (agg.mean_auroc) {
      std::size_t n_auroc = 0;
      for (const auto& rec : records)
        n_auroc += rec.method == agg.method && rec.ossr_auroc.has_value();
      *agg.mean_auroc /= static_cast<double>(n_auroc);
    }
    if (agg.n_records < 2) {
      agg.single_record = true;
      agg.std_accuracy = 0.0;
      continue;
    }
    double ss = 0.0;
    for (const auto& rec : records)
      if (rec.method == agg.method) {
        const double d = rec.accuracy - agg.mean_accuracy;
        ss += d * d;
      }
    agg.std_accuracy = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

std::string format_percent(double mean_fraction, double std_fraction) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f (±%.2f)", 100.0 * mean_fraction,
                100.0 * std_fraction);
  return buf;
}

std::string format_aggregate(const MethodAggregate& agg) {
  return format_percent(agg.mean_accuracy, agg.std_accuracy);
}

namespace {

// Shortest decimal form that parses back to the same double.
std::string double_str(double v) {
  char buf[40];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw ValueError("double_str: conversion failed");
  return {buf, end};
}

void check_field(const std::string& s, const char* what) {
  if (s.find_first_of(",\n\r") != std::string::npos)
    throw ValueError(std::string("metrics csv: ") + what +
                     " must not contain commas or line breaks: '" + s + "'");
}

[[noreturn]] void parse_fail(const std::string& path, std::size_t line,
                             const std::string& why) {
  throw CsvParseError("metrics csv '" + path + "' line " +
                      std::to_string(line) + ": " + why);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

template <class T>
T parse_number(const std::string& field, const std::string& path,
               std::size_t line, const char* what) {
  T value{};
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last)
    parse_fail(path, line, std::string("bad ") + what + " '" + field + "'");
  return value;
}

}  // namespace

std::string aggregate_csv_string(std::span<const MethodAggregate> aggs) {
  std::string out = "method,n,mean_accuracy,std_accuracy,mean_ossr_auroc,accuracy\n";
  for (const auto& agg : aggs) {
    check_field(agg.method, "method");
    out += agg.method;
    out += ',';
    out += std::to_string(agg.n_records);
    out += ',';
    out += double_str(agg.mean_accuracy);
    out += ',';
    out += double_str(agg.std_accuracy);
    out += ',';
    if (agg.mean_auroc) out += double_str(*agg.mean_auroc);
    out += ',';
    out += format_aggregate(agg);
    out += '\n';
  }
  return out;
}

std::string aggregate_table_string(std::span<const MethodAggregate> aggs) {
  std::size_t width = 6;  // "method"
  for (const auto& agg : aggs) width = std::max(width, agg.method.size());
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-*s  %5s  %-18s %s\n",
                static_cast<int>(width), "method", "folds", "accuracy",
                "ossr_auroc");
  std::string out = buf;
  for (const auto& agg : aggs) {
    std::string auroc_str = "-";
    if (agg.mean_auroc) {
      char abuf[32];
      std::snprintf(abuf, sizeof abuf, "%.4f", *agg.mean_auroc);
      auroc_str = abuf;
    }
    std::snprintf(buf, sizeof buf, "%-*s  %5zu  %-18s %s\n",
                  static_cast<int>(width), agg.method.c_str(), agg.n_records,
                  format_aggregate(agg).c_str(), auroc_str.c_str());
    out += buf;
  }
  return out;
}

std::string metrics_csv_string(std::span<const MetricsRecord> records) {
  std::string out = kMetricsCsvHeader;
  out += '\n';
  for (const auto& rec : records) {
    check_field(rec.run_id, "run_id");
    check_field(rec.method, "method");
    out += rec.run_id;
    out += ',';
    out += std::to_string(rec.fold);
    out += ',';
    out += std::to_string(rec.target_subject);
    out += ',';
    out += rec.method;
    out += ',';
    out += double_str(rec.accuracy);
    out += ',';
    if (rec.ossr_auroc) out += double_str(*rec.ossr_auroc);
    out += ',';
    out += std::to_string(rec.seed);
    out += ',';
    out += std::to_string(rec.epochs);
    out += '\n';
  }
  return out;
}

void write_metrics_csv(const std::string& path,
                       std::span<const MetricsRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileIoError("cannot open '" + path + "' for writing");
  const std::string text = metrics_csv_string(records);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw FileIoError("write to '" + path + "' failed");
}

std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileIoError("cannot open '" + path + "' for reading");
  std::string line;
  std::size_t line_no = 0;
  std::vector<MetricsRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != kMetricsCsvHeader)
        parse_fail(path, 1, "expected header '" +
                                std::string(kMetricsCsvHeader) + "', got '" +
                                line + "'");
      continue;
    }
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 8)
      parse_fail(path, line_no,
                 "expected 8 fields, got " + std::to_string(fields.size()));
    MetricsRecord rec;
    rec.run_id = fields[0];
    rec.fold = parse_number<int>(fields[1], path, line_no, "fold");
    rec.target_subject =
        parse_number<int>(fields[2], path, line_no, "target_subject");
    rec.method = fields[3];
    if (rec.method.empty()) parse_fail(path, line_no, "empty method");
    rec.accuracy = parse_number<double>(fields[4], path, line_no, "accuracy");
    if (!(rec.accuracy >= 0.0 && rec.accuracy <= 1.0))
      parse_fail(path, line_no, "accuracy '" + fields[4] + "' not in [0, 1]");
    if (!fields[5].empty()) {
      rec.ossr_auroc =
          parse_number<double>(fields[5], path, line_no, "ossr_auroc");
      if (!(*rec.ossr_auroc >= 0.0 && *rec.ossr_auroc <= 1.0))
        parse_fail(path, line_no,
                   "ossr_auroc '" + fields[5] + "' not in [0, 1]");
    }
    rec.seed = parse_number<std::uint64_t>(fields[6], path, line_no, "seed");
    rec.epochs =
        parse_number<std::size_t>(fields[7], path, line_no, "epochs");
    records.push_back(std::move(rec));
  }
  if (line_no == 0) parse_fail(path, 1, "empty file, missing header");
  return records;
}

}  // namespace posr::eval
